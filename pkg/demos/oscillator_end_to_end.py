"""Learn the hidden restoring force of a harmonic oscillator from position data.

Only the position is measured; the velocity derivative is a small network.
Run: python3 demos/oscillator_end_to_end.py [epochs]
"""

import sys

import numpy as np

from hidden_ode import benchmarks as bm
from hidden_ode import evaluation as ev
from hidden_ode import hybrid_model as hm
from hidden_ode import recursive_newton as rn


def main(epochs: int = 20) -> None:
    spec = bm.harmonic_oscillator()
    data = bm.simulate_dataset(spec)
    model = bm.learner_model(spec)
    noise = rn.NoiseConfig.isotropic(model.d_x, model.d_theta, model.d_y)
    print(f"{len(data)} samples, d_theta = {model.d_theta}")

    res = rn.train(model, data, rn.TrainConfig(epochs, noise), x_guess=spec.guess(),
                   callback=lambda r: print(f"epoch {r.epoch:2d}  loss {r.loss:.4e}  {r.wall_time:.1f} s"))
    rollout = ev.evaluate_rollout(model, res.theta, res.x0, data)
    print("rollout nRMSE per state:", np.round(rollout.per_state_nrmse, 5))

    # the learned slot against the true -omega^2 x on a grid
    grid = np.linspace(-0.1, 0.1, 5)
    learned = [hm.eval_field(model, [x, 0.0], [0.0], res.theta)[1] for x in grid]
    for x, f in zip(grid, learned):
        print(f"x = {x:+.3f}  learned {f:+.4f}  true {-4.0 * x:+.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
