"""Continuous-time hybrid vector fields and their Euler discretisation.

A :class:`HybridModel` combines a known field ``f(x, u)`` with a neural
hidden slot ``a(x, theta)``. The slot replaces whole derivative components:
for every index in ``hidden_indices`` the derivative comes from the network,
all other components come from the known field. One explicit Euler step is

    f_o(x, u, theta) = x + dt * field(x, u, theta)

All Jacobians here are exact (hand-coded for the known field, back-propagated
through the network). :func:`fd_jacobian` exists only as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import neural_field as nf
from .errors import ConfigurationError, NumericalError
from .neural_field import MlpSpec

Vector = np.ndarray
FieldFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class MeasurementMap:
    """Measurement function ``h`` with its Jacobian.

    ``indices`` is set for coordinate selections, which lets callers reason
    about which states are measured.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    d_y: int
    indices: tuple[int, ...] | None = None

    @classmethod
    def selection(cls, indices, d_x: int) -> "MeasurementMap":
        idx = tuple(int(i) for i in indices)
        if len(set(idx)) != len(idx) or any(not 0 <= i < d_x for i in idx):
            raise ConfigurationError(f"invalid measured indices {idx} for d_x={d_x}")
        rows = np.eye(d_x)[list(idx)]
        sel = np.array(idx, dtype=int)
        return cls(lambda x: np.asarray(x, dtype=float)[sel], lambda x: rows.copy(), len(idx), idx)

    @classmethod
    def identity(cls, d_x: int) -> "MeasurementMap":
        return cls.selection(range(d_x), d_x)


@dataclass(frozen=True, eq=False)
class HybridModel:
    """Known physics plus a neural hidden slot, discretised with step ``dt``.

    Attributes:
        known_field: ``(x, u) -> dx/dt`` of length ``d_x``. Entries at
            ``hidden_indices`` are ignored.
        known_jacobian: ``(x, u) -> d known_field / dx``, shape ``(d_x, d_x)``.
        measurement: the map ``h`` and its Jacobian.
        dt: Euler step. Zero is accepted (useful in tests), negative is not.
        d_x, d_u: state and input dimensions.
        hidden_indices: state components whose derivative the network supplies.
        net: architecture of the hidden slot; ``None`` disables the slot.
        net_inputs: indices into ``concat(x, u)`` fed to the network.
            Defaults to all of ``x``.
        input_shift, input_scale: fixed affine normalisation of the network
            input, ``(z - shift) / scale``.
        output_scale: fixed scaling of the network output.
        name: free-form label.
    """

    known_field: FieldFn
    known_jacobian: FieldFn
    measurement: MeasurementMap
    dt: float
    d_x: int
    d_u: int
    hidden_indices: tuple[int, ...] = ()
    net: MlpSpec | None = None
    net_inputs: tuple[int, ...] | None = None
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    output_scale: np.ndarray | None = None
    name: str = ""
    _x_cols: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        hidden = tuple(int(i) for i in self.hidden_indices)
        object.__setattr__(self, "hidden_indices", hidden)
        if not np.isfinite(self.dt) or self.dt < 0:
            raise ConfigurationError(f"dt must be finite and non-negative, got {self.dt}")
        if len(set(hidden)) != len(hidden) or any(not 0 <= i < self.d_x for i in hidden):
            raise ConfigurationError(f"invalid hidden indices {hidden} for d_x={self.d_x}")
        if self.net is None:
            if hidden:
                raise ConfigurationError("hidden indices given but no network")
            return
        inputs = tuple(range(self.d_x)) if self.net_inputs is None else tuple(
            int(i) for i in self.net_inputs)
        if any(not 0 <= i < self.d_x + self.d_u for i in inputs):
            raise ConfigurationError(f"network inputs {inputs} out of range for d_x + d_u")
        object.__setattr__(self, "net_inputs", inputs)
        if self.net.n_inputs != len(inputs):
            raise ConfigurationError(
                f"network takes {self.net.n_inputs} inputs but {len(inputs)} are wired")
        if self.net.n_outputs != len(hidden):
            raise ConfigurationError(
                f"network has {self.net.n_outputs} outputs for {len(hidden)} hidden indices")
        n_in, n_out = len(inputs), len(hidden)
        shift = np.zeros(n_in) if self.input_shift is None else np.asarray(self.input_shift, float)
        scale = np.ones(n_in) if self.input_scale is None else np.asarray(self.input_scale, float)
        oscale = np.ones(n_out) if self.output_scale is None else np.asarray(self.output_scale, float)
        if shift.shape != (n_in,) or scale.shape != (n_in,) or oscale.shape != (n_out,):
            raise ConfigurationError("normalisation vectors do not match the network widths")
        if np.any(scale == 0):
            raise ConfigurationError("input_scale entries must be nonzero")
        object.__setattr__(self, "input_shift", shift)
        object.__setattr__(self, "input_scale", scale)
        object.__setattr__(self, "output_scale", oscale)
        # (position in network input, state column) for inputs drawn from x
        cols = tuple((k, i) for k, i in enumerate(inputs) if i < self.d_x)
        object.__setattr__(self, "_x_cols", cols)

    @property
    def d_y(self) -> int:
        return self.measurement.d_y

    @property
    def d_theta(self) -> int:
        return 0 if self.net is None else self.net.n_params


def _as_vector(v, n: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 and n == 1:
        v = v.reshape(1)
    if v.shape != (n,):
        raise ConfigurationError(f"{what} must have length {n}, got shape {v.shape}")
    return v


def _inputs(model: HybridModel, x, u, theta):
    x = _as_vector(x, model.d_x, "state")
    u = _as_vector(np.zeros(0) if u is None else u, model.d_u, "input")
    theta = _as_vector(np.zeros(0) if theta is None else theta, model.d_theta, "theta")
    return x, u, theta


def _require_finite(v: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v.ravel()))[0])
        raise NumericalError(f"{what} is not finite", component=bad)
    return v


def _hidden(model: HybridModel, x, u, theta, jacobians: bool):
    """Hidden-slot output and its Jacobians with respect to x and theta."""
    z = np.concatenate([x, u])[list(model.net_inputs)]
    zn = (z - model.input_shift) / model.input_scale
    out, j_in, j_theta = nf.evaluate(model.net, theta, zn, jacobians)
    out = model.output_scale * out
    if not jacobians:
        return out, None, None
    j_in = model.output_scale[:, None] * j_in / model.input_scale[None, :]
    j_x = np.zeros((len(model.hidden_indices), model.d_x))
    for k, col in model._x_cols:
        j_x[:, col] += j_in[:, k]
    return out, j_x, model.output_scale[:, None] * j_theta


def _field(model: HybridModel, x, u, theta) -> np.ndarray:
    f = np.array(model.known_field(x, u), dtype=float)
    if f.shape != (model.d_x,):
        raise ConfigurationError(f"known field returned shape {f.shape}, expected ({model.d_x},)")
    if model.net is not None:
        f[list(model.hidden_indices)] = _hidden(model, x, u, theta, False)[0]
    return _require_finite(f, "vector field")


def eval_field(model: HybridModel, x, u, theta) -> np.ndarray:
    """``dx/dt``: known components from the physics, hidden ones from the network."""
    return _field(model, *_inputs(model, x, u, theta))


def discrete_step(model: HybridModel, x, u, theta) -> np.ndarray:
    """One deterministic Euler step ``x + dt * field``."""
    x, u, theta = _inputs(model, x, u, theta)
    return x + model.dt * _field(model, x, u, theta)


def linearize(model: HybridModel, x, u, theta):
    """Euler step together with its exact Jacobians.

    Returns:
        ``(x_next, F_x, F_theta)`` where ``F_x = I + dt * d field/dx`` has
        shape ``(d_x, d_x)`` and ``F_theta = dt * d field/dtheta`` has shape
        ``(d_x, d_theta)``.
    """
    x, u, theta = _inputs(model, x, u, theta)
    f = np.array(model.known_field(x, u), dtype=float)
    jac = np.array(model.known_jacobian(x, u), dtype=float)
    if jac.shape != (model.d_x, model.d_x):
        raise ConfigurationError(f"known Jacobian has shape {jac.shape}")
    f_theta = np.zeros((model.d_x, model.d_theta))
    if model.net is not None:
        hidden = list(model.hidden_indices)
        out, j_x, j_theta = _hidden(model, x, u, theta, True)
        f[hidden] = out
        jac[hidden] = j_x
        f_theta[hidden] = model.dt * j_theta
    _require_finite(f, "vector field")
    _require_finite(jac, "state Jacobian")
    _require_finite(f_theta, "parameter Jacobian")
    f_x = model.dt * jac
    f_x[np.diag_indices(model.d_x)] += 1.0
    return x + model.dt * f, f_x, f_theta


def jacobian_state(model: HybridModel, x, u, theta) -> np.ndarray:
    """Exact ``d f_o / dx = I + dt * d field / dx``."""
    return linearize(model, x, u, theta)[1]


def jacobian_params(model: HybridModel, x, u, theta) -> np.ndarray:
    """Exact ``d f_o / dtheta``; rows outside ``hidden_indices`` are zero."""
    return linearize(model, x, u, theta)[2]


def measure(model: HybridModel, x) -> np.ndarray:
    """Noiseless measurement ``h(x)``."""
    x = _as_vector(x, model.d_x, "state")
    _require_finite(x, "state")
    y = np.asarray(model.measurement.fn(x), dtype=float).reshape(-1)
    if y.shape != (model.d_y,):
        raise ConfigurationError(f"measurement returned shape {y.shape}, expected ({model.d_y},)")
    return _require_finite(y, "measurement")


def jacobian_measurement(model: HybridModel, x) -> np.ndarray:
    x = _as_vector(x, model.d_x, "state")
    jac = np.asarray(model.measurement.jacobian(x), dtype=float).reshape(model.d_y, model.d_x)
    return _require_finite(jac, "measurement Jacobian")


def fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], point, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``point``. Test oracle only."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    f0 = np.atleast_1d(np.asarray(fn(point), dtype=float))
    jac = np.empty((f0.size, point.size))
    for j in range(point.size):
        e = np.zeros_like(point)
        e[j] = step
        fp = np.atleast_1d(np.asarray(fn(point + e), dtype=float))
        fm = np.atleast_1d(np.asarray(fn(point - e), dtype=float))
        jac[:, j] = (fp - fm) / (2.0 * step)
    return jac


def linear_model(A, B=None, H=None, dt: float = 1.0, name: str = "linear") -> HybridModel:
    """Model with known field ``A x + B u`` and linear measurement ``H x``.

    There is no hidden slot, so the recursion reduces to a Kalman filter on
    ``x_{k+1} = (I + dt A) x_k + dt B u_k``.
    """
    A = np.asarray(A, dtype=float)
    d_x = A.shape[0]
    B = np.zeros((d_x, 0)) if B is None else np.asarray(B, dtype=float).reshape(d_x, -1)
    H = np.eye(d_x) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    meas = MeasurementMap(lambda x: H @ x, lambda x: H.copy(), H.shape[0])
    return HybridModel(
        known_field=lambda x, u: A @ x + B @ u,
        known_jacobian=lambda x, u: A.copy(),
        measurement=meas, dt=dt, d_x=d_x, d_u=B.shape[1], name=name)
