"""Rollouts, the nRMSE metric, the joint-gain diagnostic and timing probes."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from . import hybrid_model as hm
from . import recursive_newton as rn
from .errors import ConfigurationError, DivergenceError, NumericalError
from .neural_field import MlpSpec, init_params


# -- rollout and metric -------------------------------------------------------

def rollout(model: hm.HybridModel, theta, x0, inputs, steps: int | None = None) -> np.ndarray:
    """Deterministic Euler rollout from ``x0`` driven by stored inputs.

    Row ``i`` of the result is ``x(t_i)``; the step into row ``i`` uses
    ``inputs[i - 1]``. ``steps`` defaults to ``len(inputs)``.

    Raises:
        DivergenceError: a state became non-finite; ``partial`` holds the
            rows computed so far.
    """
    U = np.asarray(inputs, dtype=float).reshape(len(inputs), -1) if len(inputs) else np.zeros((0, model.d_u))
    n = U.shape[0] if steps is None else int(steps)
    if U.shape[0] < max(n - 1, 0):
        raise ConfigurationError(f"{U.shape[0]} inputs cannot drive {n} samples")
    X = np.empty((n, model.d_x))
    if n == 0:
        return X
    theta = np.zeros(0) if theta is None else np.asarray(theta, dtype=float)
    X[0] = np.asarray(x0, dtype=float)
    # overflow is detected below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n):
            try:
                X[i] = hm.discrete_step(model, X[i - 1], U[i - 1], theta)
            except NumericalError as exc:
                raise DivergenceError("rollout diverged", X[:i].copy(), step_index=i,
                                      component=exc.component) from exc
            if not np.all(np.isfinite(X[i])):
                raise DivergenceError("rollout diverged", X[:i].copy(), step_index=i)
    return X


def nrmse(estimate, truth) -> tuple[np.ndarray, float]:
    """Root-mean-square error over the truth's range, per component.

    Returns:
        ``(per_component, mean_over_components)``.

    Raises:
        ConfigurationError: mismatched shapes or fewer than two samples.
        NumericalError: a truth component is constant (zero range).
    """
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(truth, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if ref.ndim == 1:
        ref = ref[:, None]
    if est.shape != ref.shape:
        raise ConfigurationError(f"shape mismatch {est.shape} vs {ref.shape}")
    if est.shape[0] < 2:
        raise ConfigurationError("nRMSE needs at least two samples")
    span = ref.max(axis=0) - ref.min(axis=0)
    if np.any(span <= 0):
        raise NumericalError("truth signal has zero range", component=int(np.flatnonzero(span <= 0)[0]))
    per = np.sqrt(np.mean((est - ref) ** 2, axis=0)) / span
    return per, float(per.mean())


@dataclass
class RolloutResult:
    """Rollout with its scores against ground truth.

    ``hidden_nrmse`` averages only the components whose derivatives the
    network supplies; ``overall_nrmse`` averages all components.
    """

    states: np.ndarray
    per_state_nrmse: np.ndarray | None
    overall_nrmse: float | None
    hidden_nrmse: float | None


def evaluate_rollout(model: hm.HybridModel, theta, x0, dataset, start: int = 0) -> RolloutResult:
    """Roll out from ``x0`` at sample ``start`` and score against ``dataset.states``."""
    states = rollout(model, theta, x0, dataset.inputs[start:])
    if dataset.states is None:
        return RolloutResult(states, None, None, None)
    per, overall = nrmse(states, dataset.states[start:])
    hidden = list(model.hidden_indices)
    return RolloutResult(states, per, overall, float(per[hidden].mean()) if hidden else None)


def assimilate(model: hm.HybridModel, theta, dataset, noise: rn.NoiseConfig, n_samples: int,
               x_guess, ic_cfg: rn.IcSolverConfig = rn.IcSolverConfig(),
               P_x0_scale: float = 1e-2) -> np.ndarray:
    """Estimate the state at sample ``n_samples - 1`` with ``theta`` frozen.

    Reconstructs ``x(t0)`` from ``y(t0)`` starting at ``x_guess``, then runs
    state-only filter updates over the next samples so unmeasured components
    settle before a rollout takes over.
    """
    n = max(1, min(int(n_samples), len(dataset)))
    theta = np.asarray(theta, dtype=float)
    x0, _ = rn.reconstruct_initial_state(model, np.asarray(x_guess, float),
                                         dataset.measurements[0], noise.weight("R_y"), ic_cfg)
    x, P = x0, P_x0_scale * np.eye(model.d_x)
    for i in range(1, n):
        x_pred, F_x, _ = hm.linearize(model, x, dataset.inputs[i - 1], theta)
        P_minus = rn.propagate_state_cov(P, F_x, noise.Q_x)
        x, P = rn.update_state(x_pred, P_minus, hm.jacobian_measurement(model, x_pred), noise.R_y,
                               dataset.measurements[i], h_pred=hm.measure(model, x_pred), step_index=i)
    return x


# -- joint-gain diagnostic ----------------------------------------------------

@dataclass
class JointGainReport:
    """Parameter sensitivity as seen through the measurements.

    Attributes:
        product: ``F_theta^T H^T``, shape ``(d_theta, d_y)``.
        max_abs_entry: largest magnitude in ``product``.
        joint_gain: parameter block of a joint state/parameter EKF gain.
        alternating_gain: ``P_theta_minus F_theta^T`` of the alternating scheme.
    """

    product: np.ndarray
    max_abs_entry: float
    joint_gain: np.ndarray
    alternating_gain: np.ndarray

    @property
    def vanishes(self) -> bool:
        return self.max_abs_entry == 0.0

    def to_dict(self) -> dict:
        return {
            "max_abs_entry": self.max_abs_entry,
            "joint_gain_norm": float(np.linalg.norm(self.joint_gain)),
            "alternating_gain_norm": float(np.linalg.norm(self.alternating_gain)),
            "vanishes": self.vanishes,
        }


def joint_gain_diagnostic(model: hm.HybridModel, x, u, theta, noise: rn.NoiseConfig,
                          P_theta=None) -> JointGainReport:
    """Compare the joint-EKF parameter gain with the alternating one at one point.

    The joint gain is ``P F^T H^T (H F P F^T H^T + H Q_x H^T + R_y)^-1`` with
    ``F = F_theta`` and ``P`` the parameter covariance (default ``noise.Q_theta``).
    """
    _, _, F_theta = hm.linearize(model, x, u, theta)
    x_next = hm.discrete_step(model, x, u, theta)
    H = hm.jacobian_measurement(model, x_next)
    P = noise.Q_theta if P_theta is None else np.atleast_2d(np.asarray(P_theta, dtype=float))
    product = F_theta.T @ H.T
    PFH = P @ product
    S = H @ F_theta @ PFH + H @ noise.Q_x @ H.T + noise.R_y
    joint = sla.cho_solve(sla.cho_factor(S, lower=True), PFH.T).T
    P_minus, _ = rn.propagate_param_cov(P, F_theta, noise.Q_x, noise.Q_theta)
    return JointGainReport(product, float(np.max(np.abs(product), initial=0.0)), joint,
                           P_minus @ F_theta.T)


def three_state_example(seed: int = 0):
    """Three states, ``x3`` driven by a network and unmeasured, ``x1, x2`` measured.

    Returns:
        ``(model, x, u, theta, noise)`` ready for :func:`joint_gain_diagnostic`.
    """
    A = np.array([[-0.5, 1.0, 0.0], [0.0, -0.3, 1.0], [0.0, 0.0, 0.0]])
    net = MlpSpec((3, 5, 1), ("tanh", "linear"))
    model = hm.HybridModel(
        known_field=lambda x, u: A @ x, known_jacobian=lambda x, u: A.copy(),
        measurement=hm.MeasurementMap.selection((0, 1), 3), dt=1e-2, d_x=3, d_u=0,
        hidden_indices=(2,), net=net, name="three_state")
    theta = init_params(net, seed)
    theta[-1] = 0.3
    noise = rn.NoiseConfig.isotropic(3, net.n_params, 2, q_theta=1e2)
    return model, np.array([0.5, -0.2, 0.1]), np.zeros(0), theta, noise


# -- complexity probe ------------------------------------------------------------

@dataclass
class ScalingResult:
    d_thetas: np.ndarray
    steps: np.ndarray
    seconds: np.ndarray
    slope: float


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def oscillator_family(width: int, dt: float = 1e-3, omega: float = 2.0) -> hm.HybridModel:
    """Oscillator learner with a ``2 -> width -> 1`` network; ``d_theta = 4 width + 1``."""
    net = MlpSpec((2, width, 1), ("tanh", "linear"))
    A = np.array([[0.0, 1.0], [-omega ** 2, 0.0]])
    return hm.HybridModel(
        known_field=lambda x, u: A @ x, known_jacobian=lambda x, u: A.copy(),
        measurement=hm.MeasurementMap.selection((0,), 2), dt=dt, d_x=2, d_u=0,
        hidden_indices=(1,), net=net, name=f"oscillator_w{width}")


def time_epoch(model: hm.HybridModel, steps: int, repeats: int = 3, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one training epoch on ``steps`` samples."""
    if steps == 0:
        return 0.0
    t = np.arange(steps) * model.dt
    y = 0.1 * np.cos(2.0 * t)[:, None]
    data = _ProbeData(np.zeros((steps, model.d_u)), y)
    noise = rn.NoiseConfig.isotropic(model.d_x, model.d_theta, model.d_y)
    fs = rn.initial_state(model, rn.TrainConfig(1, noise, seed=seed), np.array([0.1, 0.0]))
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        rn.run_epoch(model, data, fs.copy(), noise)
        best = min(best, time.perf_counter() - start)
    return best


@dataclass
class _ProbeData:
    inputs: np.ndarray
    measurements: np.ndarray


def scaling_probe(model_family: Callable[[int], hm.HybridModel] = oscillator_family,
                  sizes: Sequence[int] = (200, 450, 1000), steps: int = 200,
                  repeats: int = 3) -> ScalingResult:
    """Epoch wall time across network sizes at fixed ``steps``.

    Args:
        model_family: maps a size parameter to a model.
        sizes: at least three size parameters.
        steps: samples per epoch.
        repeats: timing repeats; the minimum is kept.

    Returns:
        The table and the log-log slope of seconds against ``d_theta``.
    """
    if len(sizes) < 3:
        raise ConfigurationError("scaling probe needs at least three sizes")
    models = [model_family(s) for s in sizes]
    secs = np.array([time_epoch(m, steps, repeats) for m in models])
    d = np.array([m.d_theta for m in models])
    return ScalingResult(d, np.full(len(sizes), steps), secs, _loglog_slope(d, secs))
