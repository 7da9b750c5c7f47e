"""Why a joint state-parameter EKF cannot learn an unmeasured hidden slot.

When the network only drives an unmeasured state, H F_theta is zero and so is
the joint gain; the alternating recursion still gets a nonzero parameter gain.
Run: python3 demos/vanishing_joint_gain.py
"""

import numpy as np

from hidden_ode import benchmarks as bm
from hidden_ode import evaluation as ev
from hidden_ode import recursive_newton as rn


def show(label, report):
    print(f"{label}: max |F_theta^T H^T| = {report.max_abs_entry:.1e}, "
          f"|joint gain| = {np.linalg.norm(report.joint_gain):.1e}, "
          f"|alternating gain| = {np.linalg.norm(report.alternating_gain):.3e}")


def main() -> None:
    show("three-state", ev.joint_gain_diagnostic(*ev.three_state_example()))
    spec = bm.hodgkin_huxley()
    model = bm.learner_model(spec)
    noise = rn.NoiseConfig.isotropic(4, model.d_theta, 3)
    theta = rn.initial_state(model, rn.TrainConfig(1, noise)).theta_hat
    show("Hodgkin-Huxley", ev.joint_gain_diagnostic(model, spec.initial_state, [10.0], theta, noise))


if __name__ == "__main__":
    main()
