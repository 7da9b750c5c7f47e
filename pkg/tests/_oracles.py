"""Independent reference implementations used by the unit and acceptance tests.

These use explicit inverses and the Joseph form on purpose, so they share no
code path with the library's Cholesky-based recursions.
"""

import numpy as np

from hidden_ode import hybrid_model as hm
from hidden_ode.neural_field import init_params


def random_spd(rng, n, cond=100.0):
    """SPD matrix with eigenvalues spread over ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * eig) @ Q.T


def textbook_kalman(A_d, B_d, H, Q, R, x0, P0, inputs, measurements):
    """Predict-then-update Kalman filter with explicit inverse and Joseph update.

    Step ``k >= 1`` predicts from estimate ``k-1`` with input ``k-1`` and then
    assimilates measurement ``k``. Sample 0 only assimilates ``measurements[0]``
    with prior ``(x0, P0)``.
    """
    n = A_d.shape[0]
    xs, Ps = [], []
    x, P = np.array(x0, dtype=float), np.array(P0, dtype=float)
    for k, y in enumerate(measurements):
        if k > 0:
            x = A_d @ x + B_d @ inputs[k - 1]
            P = A_d @ P @ A_d.T + Q
        K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
        x = x + K @ (y - H @ x)
        IKH = np.eye(n) - K @ H
        P = IKH @ P @ IKH.T + K @ R @ K.T
        xs.append(x.copy())
        Ps.append(P.copy())
    return np.array(xs), np.array(Ps)


def random_linear_system(rng, d_x, dt=0.05):
    """Stable-ish random continuous system with partial measurement and one input."""
    A = rng.normal(0.0, 1.0, (d_x, d_x)) - 1.5 * np.eye(d_x)
    B = rng.normal(0.0, 1.0, (d_x, 1))
    d_y = int(rng.integers(1, d_x + 1))
    H = rng.normal(0.0, 1.0, (d_y, d_x))
    model = hm.linear_model(A, B, H, dt=dt)
    A_d = np.eye(d_x) + dt * A
    B_d = dt * B
    return model, A_d, B_d, H


def rel_err(a, b):
    """Max elementwise error relative to ``max(1, |b|)``."""
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0)


def random_benchmark_point(spec, model, rng):
    """A plausible ``(x, u, theta)`` for a benchmark; ``theta`` is None without a net."""
    x = np.array(spec.initial_state, dtype=float)
    if spec.name == "hodgkin_huxley":
        x = np.array([rng.uniform(-80, 40), *rng.uniform(0.02, 0.98, 3)])
    elif spec.name == "cartpole":
        x = rng.normal(0, [1.0, 1.0, 0.5, 1.0])
    elif spec.name == "harmonic_oscillator":
        x = rng.normal(0, 1.0, 2)
    else:
        x = x * rng.uniform(0.5, 1.5, x.size)
    u = rng.normal(0, 1.0, model.d_u)
    if spec.name == "hodgkin_huxley":
        u = np.array([rng.uniform(0, 15)])
    if model.net is None:
        return x, u, None
    theta = init_params(model.net, int(rng.integers(1 << 30))) + rng.normal(0, 0.1, model.d_theta)
    return x, u, theta
