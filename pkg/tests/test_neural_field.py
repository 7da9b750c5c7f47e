import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hidden_ode import neural_field as nf
from hidden_ode.errors import CheckpointFormatError, ConfigurationError, NumericalError
from hidden_ode.hybrid_model import fd_jacobian


def _spec(widths, acts):
    return nf.MlpSpec(tuple(widths), tuple(acts))


def test_param_count_formula():
    spec = _spec((3, 20, 20, 10), ("elu", "tanh", "sigmoid"))
    assert spec.n_params == 3 * 20 + 20 + 20 * 20 + 20 + 20 * 10 + 10 == 710


def test_init_is_deterministic_with_zero_biases():
    spec = _spec((4, 6, 1), ("tanh", "linear"))
    a, b = nf.init_params(spec, 7), nf.init_params(spec, 7)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, nf.init_params(spec, 8))
    one = nf.init_params(_spec((1, 1), ("linear",)), 3)
    assert one.shape == (2,) and one[1] == 0.0
    # bias blocks are zero, weights within the Glorot bound
    assert np.all(a[24:30] == 0.0) and a[36] == 0.0
    assert np.all(np.abs(a[:24]) <= np.sqrt(6.0 / 10.0))


@pytest.mark.parametrize("widths, acts", [((2,), ()), ((2, 0), ("tanh",)), ((2, 3), ("relu",)),
                                          ((2, 3, 1), ("tanh",))])
def test_invalid_specs_rejected(widths, acts):
    with pytest.raises(ConfigurationError):
        nf.MlpSpec(widths, acts)


def test_forward_simple_cases():
    spec = _spec((3, 4, 2), ("tanh", "tanh"))
    np.testing.assert_array_equal(nf.forward(spec, np.zeros(spec.n_params), np.ones(3)), 0.0)
    spec = _spec((3, 4, 2), ("tanh", "sigmoid"))
    np.testing.assert_array_equal(nf.forward(spec, np.zeros(spec.n_params), np.ones(3)), 0.5)
    lin = _spec((1, 1), ("linear",))
    np.testing.assert_allclose(nf.forward(lin, np.array([2.0, 1.0]), np.array([3.0])), [7.0])


def test_linear_layer_jacobians():
    spec = _spec((3, 2), ("linear",))
    W = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    w = np.concatenate([W.ravel(), [0.5, -0.5]])
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(nf.jacobian_input(spec, w, x), W)
    jt = nf.jacobian_params(spec, w, x)
    expected = np.zeros((2, 8))
    expected[0, 0:3] = x
    expected[1, 3:6] = x
    expected[:, 6:8] = np.eye(2)
    np.testing.assert_array_equal(jt, expected)
    jt0 = nf.jacobian_params(spec, w, np.zeros(3))
    np.testing.assert_array_equal(jt0[:, :6], 0.0)
    np.testing.assert_array_equal(jt0[:, 6:], np.eye(2))


def test_zero_weights_tanh_input_jacobian_is_zero():
    spec = _spec((3, 5, 2), ("tanh", "tanh"))
    np.testing.assert_array_equal(nf.jacobian_input(spec, np.zeros(spec.n_params), np.ones(3)), 0.0)


def test_elu_is_c1_at_zero():
    value, slope = nf._activate("elu", np.array([0.0]))
    assert value[0] == 0.0 and slope[0] == 1.0
    h = 1e-7
    assert abs((nf.elu(h) - nf.elu(-h)) / (2 * h) - 1.0) < 1e-6


def test_non_finite_output_raises():
    spec = _spec((1, 1), ("linear",))
    with pytest.raises(NumericalError):
        nf.forward(spec, np.array([np.inf, 0.0]), np.array([1.0]))


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1),
       acts=st.lists(st.sampled_from(nf.ACTIVATIONS), min_size=1, max_size=3),
       n_in=st.integers(1, 4), n_out=st.integers(1, 3))
def test_jacobians_match_finite_differences(seed, acts, n_in, n_out):
    rng = np.random.default_rng(seed)
    widths = [n_in] + [int(rng.integers(1, 6)) for _ in acts[:-1]] + [n_out]
    spec = _spec(widths, acts)
    w = rng.normal(0.0, 0.7, spec.n_params)
    x = rng.normal(0.0, 1.0, n_in)
    _, j_in, j_theta = nf.evaluate(spec, w, x)
    assert _rel_err(j_in, fd_jacobian(lambda z: nf.forward(spec, w, z), x)) <= 1e-4
    assert _rel_err(j_theta, fd_jacobian(lambda p: nf.forward(spec, p, x), w)) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=40))
def test_serialize_round_trip_is_bit_exact(values):
    w = np.array(values, dtype=float)
    back = nf.deserialize(nf.serialize(w))
    assert back.tobytes() == w.tobytes()


def test_serialize_empty_and_with_spec():
    payload = json.loads(nf.serialize(np.zeros(0)))
    assert payload == {"length": 0, "values": []}
    assert nf.deserialize(nf.serialize(np.zeros(0))).size == 0
    spec = _spec((2, 3, 1), ("tanh", "linear"))
    w = nf.init_params(spec, 0)
    np.testing.assert_array_equal(nf.deserialize(nf.serialize(w, spec)), w)


def test_deserialize_errors():
    text = nf.serialize(np.arange(4.0))
    with pytest.raises(CheckpointFormatError) as info:
        nf.deserialize(text[:-5])
    assert info.value.position is not None
    with pytest.raises(CheckpointFormatError):
        nf.deserialize('{"length": 3, "values": [1, 2]}')
    with pytest.raises(CheckpointFormatError):
        nf.deserialize(text, _spec((2, 3, 1), ("tanh", "linear")))
    with pytest.raises(CheckpointFormatError):
        nf.deserialize('{"values": ["a"]}')
