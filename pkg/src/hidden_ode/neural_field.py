"""Small feed-forward networks used as the hidden slot of a hybrid model.

Weights live in one flat vector. The flattening order is fixed: for each
layer, the weight matrix of shape ``(out, in)`` in row-major order, followed
by the bias vector. Both Jacobians (with respect to the input and with
respect to the flat weights) are computed exactly by back-propagating one
seed row per network output.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointFormatError, ConfigurationError, NumericalError

ACTIVATIONS = ("elu", "tanh", "sigmoid", "linear")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a multilayer perceptron.

    Attributes:
        layer_widths: ``(n_in, w_1, ..., n_out)``; the first entry is the input
            width, every following entry is one dense layer.
        activations: one name per dense layer, from :data:`ACTIVATIONS`.
    """

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(str(a) for a in self.activations)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)
        if len(widths) < 2:
            raise ConfigurationError("an MLP needs an input width and at least one layer")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"layer widths must be >= 1, got {widths}")
        if len(acts) != len(widths) - 1:
            raise ConfigurationError(
                f"expected {len(widths) - 1} activations, got {len(acts)}")
        unknown = [a for a in acts if a not in ACTIVATIONS]
        if unknown:
            raise ConfigurationError(f"unknown activation(s) {unknown}; choose from {ACTIVATIONS}")

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum(w[i] * w[i - 1] + w[i] for i in range(1, len(w)))

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, data: dict) -> "MlpSpec":
        try:
            return cls(tuple(data["layer_widths"]), tuple(data["activations"]))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"invalid MLP description: {data!r}") from exc


@functools.lru_cache(maxsize=64)
def _layout(spec: MlpSpec) -> tuple[tuple[int, int, int, int], ...]:
    """(weight_start, bias_start, n_out, n_in) for every layer."""
    out = []
    offset = 0
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        out.append((offset, offset + n_out * n_in, n_out, n_in))
        offset += n_out * n_in + n_out
    return tuple(out)


def _unpack(spec: MlpSpec, w: np.ndarray):
    for w_start, b_start, n_out, n_in in _layout(spec):
        yield w[w_start:b_start].reshape(n_out, n_in), w[b_start:b_start + n_out]


def _activate(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Activation value and elementwise derivative."""
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if name == "sigmoid":
        a = 0.5 * (1.0 + np.tanh(0.5 * z))
        return a, a * (1.0 - a)
    if name == "elu":
        # alpha = 1, so the derivative is continuous at 0
        neg = np.minimum(z, 0.0)
        a = np.where(z > 0, z, np.expm1(neg))
        return a, np.where(z > 0, 1.0, np.exp(neg))
    return z, np.ones_like(z)


def elu(z):
    return _activate("elu", np.asarray(z, dtype=float))[0]


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, drawn from ``numpy.random.default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    w = np.zeros(spec.n_params)
    for w_start, b_start, n_out, n_in in _layout(spec):
        limit = math.sqrt(6.0 / (n_in + n_out))
        w[w_start:b_start] = rng.uniform(-limit, limit, size=n_out * n_in)
    return w


def _check(spec: MlpSpec, w, x) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != (spec.n_params,):
        raise ConfigurationError(f"expected {spec.n_params} weights, got shape {w.shape}")
    if x.shape != (spec.n_inputs,):
        raise ConfigurationError(f"expected input of length {spec.n_inputs}, got shape {x.shape}")
    return w, x


def evaluate(spec: MlpSpec, w, x, jacobians: bool = True):
    """Forward pass, optionally with both exact Jacobians.

    Returns:
        ``(out, d_out/d_input, d_out/d_weights)``; the Jacobians are ``None``
        when ``jacobians`` is false.
    """
    w, x = _check(spec, w, x)
    layers = list(_unpack(spec, w))
    acts = [x]
    slopes = []
    a = x
    for (W, b), name in zip(layers, spec.activations):
        a, da = _activate(name, W @ a + b)
        acts.append(a)
        slopes.append(da)
    if not np.all(np.isfinite(a)):
        bad = int(np.flatnonzero(~np.isfinite(a))[0])
        raise NumericalError("network output is not finite", component=bad)
    if not jacobians:
        return a, None, None

    n_out = spec.n_outputs
    j_theta = np.zeros((n_out, spec.n_params))
    # delta[k] = d out_k / d z_l for the current layer l
    delta = np.diag(slopes[-1])
    for l in range(len(layers) - 1, -1, -1):
        w_start, b_start, n_o, n_i = _layout(spec)[l]
        j_theta[:, w_start:b_start] = (delta[:, :, None] * acts[l][None, None, :]).reshape(n_out, -1)
        j_theta[:, b_start:b_start + n_o] = delta
        back = delta @ layers[l][0]
        if l > 0:
            delta = back * slopes[l - 1]
    return a, back, j_theta


def forward(spec: MlpSpec, w, x) -> np.ndarray:
    return evaluate(spec, w, x, jacobians=False)[0]


def jacobian_input(spec: MlpSpec, w, x) -> np.ndarray:
    """Exact ``d forward / d x``, shape ``(n_out, n_in)``."""
    return evaluate(spec, w, x)[1]


def jacobian_params(spec: MlpSpec, w, x) -> np.ndarray:
    """Exact ``d forward / d w`` in flattening order, shape ``(n_out, n_params)``."""
    return evaluate(spec, w, x)[2]


def serialize(w, spec: MlpSpec | None = None) -> str:
    """JSON text for a weight vector.

    Python's float repr is the shortest string that round-trips, so values
    survive ``deserialize`` bit for bit.
    """
    w = np.asarray(w, dtype=float).ravel()
    payload = {"length": int(w.size), "values": [float(v) for v in w]}
    if spec is not None:
        payload["mlp"] = spec.to_dict()
    return json.dumps(payload)


def weights_from_payload(payload, spec: MlpSpec | None = None) -> np.ndarray:
    if not isinstance(payload, dict) or "values" not in payload:
        raise CheckpointFormatError("weight payload must be an object with a 'values' list")
    values = payload["values"]
    if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise CheckpointFormatError("'values' must be a list of numbers")
    w = np.array(values, dtype=float)
    if "length" in payload and payload["length"] != w.size:
        raise CheckpointFormatError(
            f"declared length {payload['length']} but found {w.size} values")
    if spec is None and "mlp" in payload:
        spec = MlpSpec.from_dict(payload["mlp"])
    if spec is not None and w.size != spec.n_params:
        raise CheckpointFormatError(
            f"architecture needs {spec.n_params} weights, payload has {w.size}")
    return w


def deserialize(text: str, spec: MlpSpec | None = None) -> np.ndarray:
    """Inverse of :func:`serialize`; raises :class:`CheckpointFormatError` on bad input."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"malformed weight payload: {exc.msg}", position=exc.pos) from exc
    return weights_from_payload(payload, spec)
