"""Alternating state/parameter recursions and the multi-epoch training driver.

Each time step runs four solves in a fixed order:

1. predict: ``x_pred = f_o(x_hat, theta_hat)``, ``theta_pred = theta_hat``;
2. state prior and update (an extended Kalman step on ``x`` only);
3. parameter covariance: ``P_theta_minus = (P_theta^-1 + F_theta^T Q_x^-1 F_theta)^-1``
   in Woodbury form, then ``P_theta = Q_theta + P_theta_minus``;
4. parameter update driven by the gap between the prediction and the
   freshly updated state.

The Jacobians ``F_x`` and ``F_theta`` are taken at the previous estimates and
``H`` at the prediction. Every covariance is symmetrised after it is formed
and every SPD solve goes through a Cholesky factorisation.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import blas

from . import hybrid_model as hm
from . import neural_field as nf
from .errors import ConfigurationError, CovarianceDegeneracyError, NumericalError

PARAM_GAINS = ("newton", "literal")


def _sym(P: np.ndarray) -> np.ndarray:
    P += P.T
    P *= 0.5
    return P


def _cholesky(M: np.ndarray, what: str, step_index: int | None = None):
    try:
        return sla.cho_factor(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CovarianceDegeneracyError(f"{what} is not symmetric positive definite",
                                        step_index=step_index) from exc


class SpdWeight:
    """An SPD matrix kept with its Cholesky factor, for solves and weighted norms.

    Diagonal matrices take a cheaper elementwise path.
    """

    def __init__(self, matrix, what: str = "matrix"):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ConfigurationError(f"{what} must be square, got shape {M.shape}")
        if not np.array_equal(M, M.T):
            raise ConfigurationError(f"{what} must be symmetric")
        self.matrix = M
        self.n = M.shape[0]
        off = M - np.diag(np.diag(M))
        self.diag = np.diag(M).copy() if not np.any(off) else None
        if self.diag is not None:
            if np.any(self.diag <= 0) or not np.all(np.isfinite(self.diag)):
                raise ConfigurationError(f"{what} is not positive definite")
            self._chol = None
        else:
            try:
                self._chol = sla.cho_factor(M, lower=True)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise ConfigurationError(f"{what} is not positive definite") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``M^-1 b`` for a vector or a matrix with ``n`` rows."""
        if self.diag is not None:
            return b / (self.diag if b.ndim == 1 else self.diag[:, None])
        return sla.cho_solve(self._chol, b)

    def sq_norms(self, residuals: np.ndarray) -> np.ndarray:
        """Row-wise ``r^T M^-1 r`` for an ``(n_rows, n)`` array."""
        R = np.atleast_2d(residuals)
        if R.shape[1] != self.n:
            raise ConfigurationError(f"residual width {R.shape[1]} does not match weight size {self.n}")
        if self.diag is not None:
            return np.einsum("ij,ij->i", R, R / self.diag)
        Z = sla.solve_triangular(self._chol[0], R.T, lower=True)
        return np.einsum("ij,ij->j", Z, Z)

    def add_to(self, P: np.ndarray) -> np.ndarray:
        """``P + M`` without a dense copy of ``M`` when diagonal."""
        out = P.copy()
        if self.diag is not None:
            out[np.diag_indices(self.n)] += self.diag
        else:
            out += self.matrix
        return out


@dataclass(frozen=True, eq=False)
class NoiseConfig:
    """SPD weights of the cost: process ``Q_x``, parameter ``Q_theta``, measurement ``R_y``."""

    Q_x: np.ndarray
    Q_theta: np.ndarray
    R_y: np.ndarray
    _w: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        for name in ("Q_x", "Q_theta", "R_y"):
            w = SpdWeight(getattr(self, name), name)
            object.__setattr__(self, name, w.matrix)
            self._w[name] = w

    @classmethod
    def isotropic(cls, d_x: int, d_theta: int, d_y: int, q_x: float = 1e-5,
                  q_theta: float = 1e-2, r_y: float = 1e-10) -> "NoiseConfig":
        """Scaled identities; the defaults are the reference hyperparameters."""
        return cls(q_x * np.eye(d_x), q_theta * np.eye(d_theta), r_y * np.eye(d_y))

    def weight(self, name: str) -> SpdWeight:
        return self._w[name]

    def check_dims(self, model: hm.HybridModel) -> None:
        want = {"Q_x": model.d_x, "Q_theta": model.d_theta, "R_y": model.d_y}
        for name, n in want.items():
            if getattr(self, name).shape != (n, n):
                raise ConfigurationError(
                    f"{name} has shape {getattr(self, name).shape}, model needs ({n}, {n})")


@dataclass
class FilterState:
    """Running estimate. ``P_x_minus`` is the last prior, carried across epochs."""

    x_hat: np.ndarray
    theta_hat: np.ndarray
    P_x: np.ndarray
    P_theta: np.ndarray
    step_index: int = 0
    P_x_minus: np.ndarray | None = None

    def copy(self) -> "FilterState":
        return FilterState(self.x_hat.copy(), self.theta_hat.copy(), self.P_x.copy(),
                           self.P_theta.copy(), self.step_index,
                           None if self.P_x_minus is None else self.P_x_minus.copy())


@dataclass(frozen=True)
class IcSolverConfig:
    gauss_newton_iters: int = 20
    tol: float = 1e-9

    def __post_init__(self):
        if self.gauss_newton_iters < 0 or not self.tol > 0:
            raise ConfigurationError("ic solver needs iters >= 0 and tol > 0")


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``param_gain`` selects the parameter gain: ``"newton"`` weights the state
    gap by ``Q_x^-1`` (the Newton step of the parameter cost), ``"literal"``
    applies ``P_theta_minus F_theta^T`` to the raw gap.
    """

    epochs: int
    noise: NoiseConfig
    P_x0_scale: float = 1e-2
    P_theta0_scale: float = 1e2
    seed: int = 0
    ic_solver: IcSolverConfig = IcSolverConfig()
    param_gain: str = "newton"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not (self.P_x0_scale > 0 and self.P_theta0_scale > 0):
            raise ConfigurationError("initial covariance scales must be positive")
        if self.param_gain not in PARAM_GAINS:
            raise ConfigurationError(f"param_gain must be one of {PARAM_GAINS}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    wall_time: float
    x0: np.ndarray | None = None
    converged: bool = True


@dataclass
class TrainResult:
    theta: np.ndarray
    x0: np.ndarray
    curve: list[EpochRecord]
    state: FilterState
    error: Exception | None = None


# -- single-step pieces ------------------------------------------------------

def predict(fs: FilterState, model: hm.HybridModel, u) -> tuple[np.ndarray, np.ndarray]:
    """Prior mean: one Euler step for the state, identity for the parameters."""
    try:
        x_pred = hm.discrete_step(model, fs.x_hat, u, fs.theta_hat)
    except NumericalError as exc:
        raise NumericalError(str(exc), component=exc.component, step_index=fs.step_index) from exc
    return x_pred, fs.theta_hat.copy()


def propagate_state_cov(P_x, F_x, Q_x) -> np.ndarray:
    """``F_x P_x F_x^T + Q_x``, symmetrised."""
    P_x, F_x = np.atleast_2d(P_x), np.atleast_2d(F_x)
    return _sym(F_x @ P_x @ F_x.T + np.atleast_2d(Q_x))


def update_state(x_pred, P_x_minus, H, R_y, y, h_pred=None, step_index: int | None = None):
    """Measurement update of the state.

    Args:
        x_pred: prior mean.
        P_x_minus: prior covariance.
        H: measurement Jacobian at ``x_pred``.
        R_y: measurement weight.
        y: measurement.
        h_pred: ``h(x_pred)``; defaults to ``H @ x_pred`` (linear measurement).
        step_index: reported in degeneracy errors.

    Returns:
        ``(x_hat, P_x)``.
    """
    x_pred = np.atleast_1d(np.asarray(x_pred, dtype=float))
    P = np.atleast_2d(np.asarray(P_x_minus, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    h_pred = H @ x_pred if h_pred is None else np.atleast_1d(h_pred)
    HP = H @ P
    S = _sym(HP @ H.T + np.atleast_2d(R_y))
    cf = _cholesky(S, "innovation covariance", step_index)
    K = sla.cho_solve(cf, HP).T
    x_hat = x_pred - K @ (h_pred - y)
    P_x = _sym(P - K @ HP)
    return x_hat, P_x


def _param_gain_factors(P, F, Q_x: SpdWeight, step_index):
    """Pieces of the Woodbury update restricted to the nonzero rows of ``F``.

    Returns ``(rows, PGt, C)`` with ``G = F[rows]``, ``PGt = P G^T`` and ``C``
    the lower Cholesky factor of ``[(Q_x + F P F^T)^-1]_{rows, rows}``, so
    ``P F^T (Q_x + F P F^T)^-1 F P = (PGt C)(PGt C)^T``.
    """
    rows = np.flatnonzero(np.any(F != 0.0, axis=1))
    if rows.size == 0:
        return rows, None, None
    G = F[rows]
    PGt = P @ G.T
    inner = Q_x.matrix.copy()
    inner[np.ix_(rows, rows)] += G @ PGt
    cf = _cholesky(_sym(inner), "parameter innovation matrix", step_index)
    sel = np.zeros((inner.shape[0], rows.size))
    sel[rows, np.arange(rows.size)] = 1.0
    M = _sym(sla.cho_solve(cf, sel)[rows])
    C = _cholesky(M, "parameter gain block", step_index)[0]
    return rows, PGt, np.tril(C)


def _downdate(P: np.ndarray, L: np.ndarray, inplace: bool) -> np.ndarray:
    """``P - L L^T`` by rank-one BLAS updates; exactly symmetric when ``P`` is."""
    out = P if inplace else P.copy()
    for col in L.T:
        # out is symmetric, so its transpose view is the Fortran-ordered operand
        blas.dger(-1.0, col, col, a=out.T, overwrite_a=1)
    return out


def propagate_param_cov(P_theta, F_theta, Q_x, Q_theta, step_index: int | None = None):
    """Parameter prior and the covariance carried to the next step.

    Returns:
        ``(P_theta_minus, P_theta_new)`` with
        ``P_theta_minus = P - P F^T (Q_x + F P F^T)^-1 F P`` and
        ``P_theta_new = Q_theta + P_theta_minus``.
    """
    P = _sym(np.array(np.atleast_2d(P_theta), dtype=float))
    F = np.atleast_2d(np.asarray(F_theta, dtype=float))
    q_theta = Q_theta if isinstance(Q_theta, SpdWeight) else SpdWeight(Q_theta, "Q_theta")
    q_x = Q_x if isinstance(Q_x, SpdWeight) else SpdWeight(Q_x, "Q_x")
    rows, PGt, C = _param_gain_factors(P, F, q_x, step_index)
    P_minus = P if rows.size == 0 else _downdate(P, PGt @ C, inplace=True)
    return P_minus, q_theta.add_to(P_minus)


def update_params(theta_pred, P_theta_minus, F_theta, x_pred, x_hat, Q_x=None) -> np.ndarray:
    """``theta_pred - P_theta_minus F_theta^T W (x_pred - x_hat)``.

    ``W`` is the identity when ``Q_x`` is ``None`` and ``Q_x^-1`` otherwise.
    """
    theta_pred = np.atleast_1d(np.asarray(theta_pred, dtype=float))
    F = np.atleast_2d(np.asarray(F_theta, dtype=float))
    resid = np.atleast_1d(np.asarray(x_pred, dtype=float) - np.asarray(x_hat, dtype=float))
    if Q_x is not None:
        w = Q_x if isinstance(Q_x, SpdWeight) else SpdWeight(Q_x, "Q_x")
        resid = w.solve(resid)
    rows = np.flatnonzero(np.any(F != 0.0, axis=1) & (resid != 0.0))
    if rows.size == 0:
        return theta_pred.copy()
    P = np.atleast_2d(P_theta_minus)
    theta = theta_pred - P @ (F[rows].T @ resid[rows])
    if not np.all(np.isfinite(theta)):
        raise NumericalError("parameter update is not finite",
                             component=int(np.flatnonzero(~np.isfinite(theta))[0]))
    return theta


def _param_step(P, F, theta_pred, resid, noise: NoiseConfig, param_gain: str, inplace: bool,
                step_index: int):
    """Fused parameter covariance and mean update.

    Equivalent to :func:`propagate_param_cov` followed by :func:`update_params`,
    but never forms ``P_theta_minus``: with ``s = F^T W r`` restricted to the
    active rows, ``P_theta_minus F^T s = PGt (s - M G PGt s)``.
    """
    rows, PGt, C = _param_gain_factors(P, F, noise.weight("Q_x"), step_index)
    q_theta = noise.weight("Q_theta")
    if rows.size == 0:
        return theta_pred.copy(), q_theta.add_to(P)
    w = noise.weight("Q_x").solve(resid) if param_gain == "newton" else resid
    G = F[rows]
    L = PGt @ C
    s = w[rows]
    # P_minus G^T s = PGt s - L (L^T G^T s), and L^T G^T s = C^T (G PGt)^T s
    direction = PGt @ s - L @ (C.T @ ((G @ PGt).T @ s))
    theta = theta_pred - direction
    if not np.all(np.isfinite(theta)):
        raise NumericalError("parameter update is not finite",
                             component=int(np.flatnonzero(~np.isfinite(theta))[0]))
    P_new = _downdate(P, L, inplace)
    if q_theta.diag is not None:
        P_new[np.diag_indices(q_theta.n)] += q_theta.diag
    else:
        P_new += q_theta.matrix
    return theta, P_new


def step(fs: FilterState, model: hm.HybridModel, noise: NoiseConfig, u, y,
         param_gain: str = "newton", inplace: bool = False) -> FilterState:
    """One full alternating iteration; returns a new state with ``step_index + 1``.

    With ``inplace`` the parameter covariance of ``fs`` is overwritten and
    reused by the returned state, which avoids a dense copy per step.
    """
    k = fs.step_index
    try:
        x_pred, F_x, F_theta = hm.linearize(model, fs.x_hat, u, fs.theta_hat)
        theta_pred = fs.theta_hat
        P_minus = propagate_state_cov(fs.P_x, F_x, noise.Q_x)
        H = hm.jacobian_measurement(model, x_pred)
        x_hat, P_x = update_state(x_pred, P_minus, H, noise.R_y, y,
                                  h_pred=hm.measure(model, x_pred), step_index=k)
        if model.d_theta:
            theta_hat, P_theta = _param_step(fs.P_theta, F_theta, theta_pred, x_pred - x_hat,
                                             noise, param_gain, inplace, k)
        else:
            P_theta, theta_hat = fs.P_theta, theta_pred.copy()
    except NumericalError as exc:
        if exc.step_index is not None:
            raise
        raise type(exc)(str(exc), component=exc.component, step_index=k) from exc
    return FilterState(x_hat, theta_hat, P_x, P_theta, k + 1, P_minus)


# -- epochs --------------------------------------------------------------------

def reconstruct_initial_state(model: hm.HybridModel, fs_prev_end, y0, R_y,
                              ic_cfg: IcSolverConfig = IcSolverConfig()):
    """Fit ``x(t0)`` to the first measurement by damped Gauss-Newton.

    Starts from the carry-over state (a :class:`FilterState` or a vector).
    Directions that ``h`` cannot see keep their starting values.

    Returns:
        ``(x0, converged)``. When the iteration budget runs out the best
        iterate is returned with ``converged=False`` and a warning.
    """
    x0 = fs_prev_end.x_hat if isinstance(fs_prev_end, FilterState) else fs_prev_end
    x = np.array(x0, dtype=float)
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if not np.all(np.isfinite(y0)):
        raise NumericalError("initial measurement is not finite")
    r_w = R_y if isinstance(R_y, SpdWeight) else SpdWeight(R_y, "R_y")
    damping = 1e-8 * np.eye(model.d_x)

    def cost(xv):
        r = hm.measure(model, xv) - y0
        return r, float(np.linalg.norm(r))

    r, rnorm = cost(x)
    best, best_norm = x.copy(), rnorm
    for _ in range(ic_cfg.gauss_newton_iters):
        if rnorm < ic_cfg.tol:
            return x, True
        H = hm.jacobian_measurement(model, x)
        RinvH = r_w.solve(H)
        normal = H.T @ RinvH + damping
        x = x - sla.cho_solve(_cholesky(normal, "reconstruction normal matrix"), RinvH.T @ r)
        r, rnorm = cost(x)
        if rnorm < best_norm:
            best, best_norm = x.copy(), rnorm
    if rnorm < ic_cfg.tol:
        return x, True
    warnings.warn(f"initial-state reconstruction stopped at residual {best_norm:.3g}",
                  RuntimeWarning, stacklevel=2)
    return best, False


def _data_arrays(model: hm.HybridModel, dataset):
    U = np.asarray(dataset.inputs, dtype=float).reshape(len(dataset.inputs), -1)
    Y = np.asarray(dataset.measurements, dtype=float).reshape(len(dataset.measurements), -1)
    if U.shape[0] != Y.shape[0]:
        raise ConfigurationError("inputs and measurements have different lengths")
    if U.shape[1] != model.d_u or Y.shape[1] != model.d_y:
        raise ConfigurationError(
            f"dataset has d_u={U.shape[1]}, d_y={Y.shape[1]}; model needs "
            f"d_u={model.d_u}, d_y={model.d_y}")
    if U.shape[0] == 0:
        raise ConfigurationError("dataset is empty")
    return U, Y


def epoch_loss(model: hm.HybridModel, noise: NoiseConfig, x_hats, theta_hats, dataset) -> float:
    """Half the weighted sum of dynamics, data and parameter-drift residuals.

    Dynamics and drift terms run over samples ``1..N-1``; the data term over
    all ``N`` samples. ``theta_hats`` may be a single vector (constant in time).
    """
    U, Y = _data_arrays(model, dataset)
    X = np.asarray(x_hats, dtype=float).reshape(-1, model.d_x)
    T = np.asarray(theta_hats, dtype=float)
    if T.ndim == 1:
        T = np.broadcast_to(T, (X.shape[0], model.d_theta))
    if X.shape[0] != Y.shape[0] or T.shape != (Y.shape[0], model.d_theta):
        raise ConfigurationError("estimate sequences are not aligned with the dataset")
    preds = np.array([hm.discrete_step(model, X[i], U[i], T[i]) for i in range(X.shape[0] - 1)])
    meas = np.array([hm.measure(model, x) for x in X])
    total = noise.weight("R_y").sq_norms(Y - meas).sum()
    if X.shape[0] > 1:
        total += noise.weight("Q_x").sq_norms(X[1:] - preds).sum()
        if model.d_theta:
            total += noise.weight("Q_theta").sq_norms(np.diff(T, axis=0)).sum()
    return 0.5 * float(total)


def run_epoch(model: hm.HybridModel, dataset, fs_in: FilterState, noise: NoiseConfig,
              epoch: int = 1, ic_cfg: IcSolverConfig = IcSolverConfig(),
              param_gain: str = "newton"):
    """One pass over the data.

    The first sample reconstructs ``x(t0)`` from ``y(t0)`` and runs a state
    update with the carried-over prior ``fs_in.P_x_minus`` (falling back to
    ``fs_in.P_x``). Each later sample runs :func:`step`. ``theta`` and
    ``P_theta`` carry over unchanged.

    Returns:
        ``(fs_out, record)``; ``record.x0`` is the filtered ``x(t0)``.
    """
    noise.check_dims(model)
    U, Y = _data_arrays(model, dataset)
    n = Y.shape[0]
    start = time.perf_counter()
    x_rec, converged = reconstruct_initial_state(model, fs_in, Y[0], noise.weight("R_y"), ic_cfg)
    P0_minus = fs_in.P_x if fs_in.P_x_minus is None else fs_in.P_x_minus
    x0, P_x0 = update_state(x_rec, P0_minus, hm.jacobian_measurement(model, x_rec), noise.R_y,
                            Y[0], h_pred=hm.measure(model, x_rec), step_index=0)
    fs = FilterState(x0, fs_in.theta_hat.copy(), P_x0, np.array(fs_in.P_theta, order="C"), 0, P0_minus)
    x_hats = np.empty((n, model.d_x))
    theta_hats = np.empty((n, model.d_theta))
    x_hats[0], theta_hats[0] = fs.x_hat, fs.theta_hat
    for i in range(1, n):
        fs = step(fs, model, noise, U[i - 1], Y[i], param_gain, inplace=True)
        x_hats[i], theta_hats[i] = fs.x_hat, fs.theta_hat
    loss = epoch_loss(model, noise, x_hats, theta_hats, dataset)
    if not np.isfinite(loss):
        raise NumericalError("epoch loss is not finite", step_index=fs.step_index)
    record = EpochRecord(epoch, loss, time.perf_counter() - start, x0.copy(), converged)
    return fs, record


def initial_state(model: hm.HybridModel, cfg: TrainConfig, x_guess=None) -> FilterState:
    theta = nf.init_params(model.net, cfg.seed) if model.net is not None else np.zeros(0)
    x = np.zeros(model.d_x) if x_guess is None else np.array(x_guess, dtype=float)
    if x.shape != (model.d_x,):
        raise ConfigurationError(f"initial guess must have length {model.d_x}")
    P_x = cfg.P_x0_scale * np.eye(model.d_x)
    return FilterState(x, theta, P_x, cfg.P_theta0_scale * np.eye(model.d_theta), 0, P_x.copy())


def train(model: hm.HybridModel, dataset, cfg: TrainConfig, x_guess=None,
          theta_init=None, callback=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs from a fresh filter state.

    Args:
        model: learner model.
        dataset: object with ``inputs`` and ``measurements`` sequences.
        cfg: hyperparameters.
        x_guess: epoch-1 starting point for the initial-state reconstruction.
        theta_init: overrides ``init_params(net, cfg.seed)``.
        callback: called with each :class:`EpochRecord`.

    Returns:
        A :class:`TrainResult`. If an epoch fails, the result holds the
        partial curve, the last good estimates and the exception in ``error``.
    """
    cfg.noise.check_dims(model)
    fs = initial_state(model, cfg, x_guess)
    if theta_init is not None:
        fs.theta_hat = np.array(theta_init, dtype=float)
        if fs.theta_hat.shape != (model.d_theta,):
            raise ConfigurationError(f"theta_init must have length {model.d_theta}")
    curve: list[EpochRecord] = []
    x0 = fs.x_hat.copy()
    for epoch in range(1, cfg.epochs + 1):
        try:
            fs, rec = run_epoch(model, dataset, fs, cfg.noise, epoch, cfg.ic_solver, cfg.param_gain)
        except NumericalError as exc:
            return TrainResult(fs.theta_hat.copy(), x0, curve, fs, exc)
        curve.append(rec)
        x0 = rec.x0
        if callback is not None:
            callback(rec)
    return TrainResult(fs.theta_hat.copy(), x0, curve, fs)


__all__ = (
    "NoiseConfig", "FilterState", "IcSolverConfig", "TrainConfig", "EpochRecord", "TrainResult",
    "SpdWeight", "predict", "propagate_state_cov", "update_state", "propagate_param_cov",
    "update_params", "step", "reconstruct_initial_state", "run_epoch", "epoch_loss",
    "initial_state", "train",
)
