import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hidden_ode import benchmarks as bm
from hidden_ode import evaluation as ev
from hidden_ode import hybrid_model as hm
from hidden_ode import recursive_newton as rn
from hidden_ode.errors import ConfigurationError, DivergenceError, NumericalError


class TestRollout:
    def test_zero_field_is_constant(self):
        model = hm.linear_model(np.zeros((2, 2)))
        X = ev.rollout(model, np.zeros(0), [1.0, -1.0], np.zeros((5, 0)))
        np.testing.assert_array_equal(X, np.tile([1.0, -1.0], (5, 1)))

    @pytest.mark.parametrize("name", sorted(bm.BUILDERS))
    def test_true_model_reproduces_data(self, name):
        spec = bm.get_benchmark(name)
        data = bm.simulate_dataset(spec, steps=500)
        res = ev.evaluate_rollout(bm.true_model(spec), np.zeros(0), data.states[0], data)
        np.testing.assert_array_equal(res.states, data.states)
        np.testing.assert_array_equal(res.per_state_nrmse, 0.0)
        assert res.overall_nrmse == 0.0 and res.hidden_nrmse is None

    def test_divergence_returns_partial_trajectory(self):
        model = hm.linear_model(np.array([[50.0]]), dt=1.0)
        with pytest.raises(DivergenceError) as info:
            ev.rollout(model, np.zeros(0), [1.0], np.zeros((1000, 0)))
        assert info.value.step_index is not None
        assert info.value.partial.shape[0] == info.value.step_index
        assert np.all(np.isfinite(info.value.partial))

    def test_start_offset(self):
        spec = bm.harmonic_oscillator(steps=100)
        data = bm.simulate_dataset(spec)
        res = ev.evaluate_rollout(bm.true_model(spec), np.zeros(0), data.states[40], data, start=40)
        assert res.states.shape == (60, 2)
        assert res.overall_nrmse == 0.0


class TestNrmse:
    def test_examples(self):
        per, mean = ev.nrmse([1.0, 2.0], [0.0, 1.0])
        np.testing.assert_array_equal(per, [1.0])
        assert mean == 1.0
        truth = np.random.default_rng(0).normal(size=(10, 3))
        per, mean = ev.nrmse(truth, truth)
        np.testing.assert_array_equal(per, 0.0)

    def test_mean_over_components(self):
        per, mean = ev.nrmse([[1.0, 0.0], [2.0, 2.0]], [[0.0, 0.0], [1.0, 2.0]])
        np.testing.assert_allclose(per, [1.0, 0.0])
        assert mean == 0.5

    def test_constant_truth_raises(self):
        with pytest.raises(NumericalError):
            ev.nrmse([1.0, 2.0], [3.0, 3.0])
        with pytest.raises(ConfigurationError):
            ev.nrmse([1.0], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10 ** 6), shift=st.floats(-100, 100), scale=st.floats(0.01, 100))
    def test_shift_and_scale_invariance(self, seed, shift, scale):
        rng = np.random.default_rng(seed)
        truth = rng.normal(size=(20, 2))
        est = truth + 0.1 * rng.normal(size=(20, 2))
        per, _ = ev.nrmse(est, truth)
        per2, _ = ev.nrmse(scale * est + shift, scale * truth + shift)
        np.testing.assert_allclose(per2, per, rtol=1e-9)


class TestJointGain:
    def test_three_state_vanishes_exactly(self):
        report = ev.joint_gain_diagnostic(*ev.three_state_example())
        assert report.vanishes
        assert np.all(report.product == 0.0)
        assert np.all(report.joint_gain == 0.0)
        assert np.max(np.abs(report.alternating_gain)) > 0.0

    def test_hh_configuration_vanishes(self):
        spec = bm.hodgkin_huxley()
        model = bm.learner_model(spec)
        theta = rn.initial_state(model, rn.TrainConfig(1, rn.NoiseConfig.isotropic(4, model.d_theta, 3))).theta_hat
        noise = rn.NoiseConfig.isotropic(4, model.d_theta, 3)
        report = ev.joint_gain_diagnostic(model, spec.initial_state, [10.0], theta, noise)
        assert report.max_abs_entry == 0.0 and np.all(report.joint_gain == 0.0)
        assert np.max(np.abs(report.alternating_gain)) > 0.0

    def test_full_measurement_does_not_vanish(self):
        model, x, u, theta, noise = ev.three_state_example()
        full = hm.HybridModel(model.known_field, model.known_jacobian, hm.MeasurementMap.identity(3),
                              model.dt, 3, 0, hidden_indices=(2,), net=model.net)
        noise = rn.NoiseConfig.isotropic(3, model.d_theta, 3, q_theta=1e2)
        report = ev.joint_gain_diagnostic(full, x, u, theta, noise)
        assert report.max_abs_entry > 0.0 and not report.vanishes
        assert np.max(np.abs(report.joint_gain)) > 0.0
        assert set(report.to_dict()) == {"max_abs_entry", "joint_gain_norm", "alternating_gain_norm",
                                         "vanishes"}


class TestAssimilate:
    def test_true_model_recovers_hidden_state(self):
        spec = bm.harmonic_oscillator(steps=400)
        data = bm.simulate_dataset(spec)
        noise = rn.NoiseConfig.isotropic(2, 0, 1)
        x = ev.assimilate(bm.true_model(spec), np.zeros(0), data, noise, 300, spec.guess())
        np.testing.assert_allclose(x, data.states[299], atol=1e-3)


class TestScaling:
    def test_zero_steps_take_no_time(self):
        assert ev.time_epoch(ev.oscillator_family(4), 0) == 0.0

    def test_family_size(self):
        assert ev.oscillator_family(10).d_theta == 41

    def test_probe_shape(self):
        res = ev.scaling_probe(sizes=(2, 4, 8), steps=5, repeats=1)
        np.testing.assert_array_equal(res.d_thetas, [9, 17, 33])
        assert res.seconds.shape == (3,) and np.isfinite(res.slope)
        with pytest.raises(ConfigurationError):
            ev.scaling_probe(sizes=(2, 4), steps=5)
