"""How pole length limits any stored-input rollout of the balanced cart-pole.

Rolls out the true model from a slightly perturbed start and reports the
hidden-velocity nRMSE; a learned model cannot do better than this.
Run: python3 demos/cartpole_conditioning.py
"""

import math

import numpy as np

from hidden_ode import benchmarks as bm
from hidden_ode import evaluation as ev
from hidden_ode.errors import NumericalError


def main() -> None:
    print("l [m]  growth [1/s]  hidden nRMSE for start errors 1e-8 / 1e-5 / 1e-3")
    for l in (0.5, 2.0, 5.0, 10.0):
        p = bm.CartpoleParams(l=l)
        spec = bm.cartpole(p)
        data = bm.simulate_dataset(spec)
        model = bm.true_model(spec)
        row = []
        for eps in (1e-8, 1e-5, 1e-3):
            try:
                res = ev.evaluate_rollout(model, np.zeros(0), data.states[0] + eps, data)
                row.append(f"{np.mean(res.per_state_nrmse[[1, 3]]):.1e}")
            except NumericalError:
                row.append("diverged")
        rate = math.sqrt(p.g * (p.M + p.m) / (l * p.M))
        print(f"{l:5.1f}  {rate:12.2f}  " + " / ".join(row))


if __name__ == "__main__":
    main()
