import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hidden_ode import benchmarks as bm
from hidden_ode import hybrid_model as hm
from hidden_ode.errors import ConfigurationError, DatasetFormatError, NumericalError


class TestHodgkinHuxley:
    def test_removable_singularities_use_limits(self):
        assert bm.hh_rates(-55.0)["an"][0] == 0.1
        assert bm.hh_rates(-40.0)["am"][0] == 1.0
        # limit of the derivative: 0.01 * 1/2 and 0.1 * 1/2
        assert bm.hh_rates(-55.0)["an"][1] == 0.005
        assert bm.hh_rates(-40.0)["am"][1] == 0.05

    @pytest.mark.parametrize("V0, key, scale", [(-55.0, "an", 0.01), (-40.0, "am", 0.1)])
    def test_rates_are_continuous_across_series_branch(self, V0, key, scale):
        for dv in (1e-9, 1e-7, 1e-6, 1e-3, 1e-2):
            for sign in (1.0, -1.0):
                V = V0 + sign * dv
                direct = scale * (V - V0) / -math.expm1(-(V - V0) / 10.0)
                if dv >= 1e-6:
                    assert abs(bm.hh_rates(V)[key][0] - direct) <= 1e-12
                assert abs(bm.hh_rates(V)[key][0] - bm.hh_rates(V0)[key][0]) <= scale * dv

    def test_gate_boundaries_zero_out_terms(self):
        V = -50.0
        r = bm.hh_rates(V)
        at_zero = bm.hh_field([V, 0.0, 0.0, 0.0], 0.0)
        at_one = bm.hh_field([V, 1.0, 1.0, 1.0], 0.0)
        np.testing.assert_allclose(at_zero[1:], [r["an"][0], r["am"][0], r["ah"][0]])
        np.testing.assert_allclose(at_one[1:], [-r["bn"][0], -r["bm"][0], -r["bh"][0]])
        assert at_zero[0] == -0.3 * (V + 54.4)

    def test_resting_state_is_an_equilibrium(self):
        rest = bm.hh_resting_state()
        assert -66.0 < rest[0] < -64.0
        np.testing.assert_allclose(bm.hh_field(rest, 0.0), 0.0, atol=1e-10)

    def test_spiking_at_reference_protocol(self):
        spec = bm.hodgkin_huxley(start="rest")
        data = bm.simulate_dataset(spec, steps=50000, dt=1e-3)
        V = data.states[:, 0]
        assert V.max() - V.min() > 50.0
        gates = data.states[:, 1:]
        assert gates.min() >= -0.05 and gates.max() <= 1.05

    def test_cycle_start_recurs_in_h(self):
        spec = bm.hodgkin_huxley()
        data = bm.simulate_dataset(spec)
        assert data.states[0, 0] < -60.0
        assert abs(data.states[0, 3] - data.states[-1, 3]) < 1e-3
        assert np.ptp(data.states[:, 0]) > 50.0

    def test_unknown_start(self):
        with pytest.raises(ConfigurationError):
            bm.hodgkin_huxley(start="elsewhere")


class TestCartpole:
    def test_upright_equilibrium(self):
        np.testing.assert_array_equal(bm.cartpole_field(np.zeros(4), 0.0), 0.0)

    def test_horizontal_pole_hand_value(self):
        phid = 0.7
        f = bm.cartpole_field([0.0, 0.0, math.pi / 2, phid], 0.0)
        assert abs(f[1] - (-0.05 * phid) / 1.1) < 1e-15

    @settings(max_examples=50, deadline=None)
    @given(z=st.floats(-2, 2), zd=st.floats(-2, 2), phi=st.floats(-1.5, 1.5), u=st.floats(-5, 5))
    def test_odd_symmetry_with_pole_at_rest(self, z, zd, phi, u):
        x = np.array([z, zd, phi, 0.0])
        np.testing.assert_allclose(bm.cartpole_field(-x, -u), -bm.cartpole_field(x, u), atol=1e-12)

    def test_symmetry_breaks_with_first_power_term(self):
        x = np.array([0.0, 0.0, 0.3, 1.0])
        assert not np.allclose(bm.cartpole_field(-x, 0.0), -bm.cartpole_field(x, 0.0))

    def test_lqr_stabilises_data_run(self):
        spec = bm.cartpole()
        data = bm.simulate_dataset(spec)
        assert np.linalg.norm(data.states[-1]) < np.linalg.norm(data.states[0])

    def test_long_pole_variant_settles_and_normalises(self):
        spec = bm.cartpole_long_pole()
        data = bm.simulate_dataset(spec)
        assert spec.params["l"] == 5.0
        assert np.linalg.norm(data.states[-1, [1, 3]]) < 0.02
        Z = (np.hstack([data.states, data.inputs]) - spec.input_shift) / spec.input_scale
        assert np.max(np.abs(Z)) < 2.5


class TestLqr:
    def test_scalar_case(self):
        policy = bm.lqr_gain(0.0, 1.0, 1.0, 1.0)
        np.testing.assert_allclose(policy.riccati, [[1.0]], rtol=1e-12)
        np.testing.assert_allclose(policy.gain, [1.0], rtol=1e-12)
        np.testing.assert_allclose(policy(np.array([2.0])), [-2.0], rtol=1e-12)

    def test_cartpole_residual_and_stability(self):
        A, B = bm.cartpole_jacobians(np.zeros(4), 0.0)
        Qc, Rc = np.diag([1.0, 1.0, 10.0, 1.0]), np.eye(1)
        policy = bm.lqr_gain(A, B, Qc, Rc)
        P, K = policy.riccati, policy.gain[None, :]
        resid = A.T @ P + P @ A - P @ B @ np.linalg.solve(Rc, B.T) @ P + Qc
        assert np.max(np.abs(resid)) <= 1e-8
        assert np.max(np.linalg.eigvals(A - B @ K).real) < 0

    def test_unstabilisable_raises(self):
        with pytest.raises(NumericalError):
            bm.lqr_gain(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1))


class TestOtherFields:
    def test_harmonic_oscillator(self):
        np.testing.assert_array_equal(bm.ho_field([0.0, 1.0], 0.0, 2.0), [1.0, 0.0])
        np.testing.assert_array_equal(bm.ho_field([0.0, 0.0]), [0.0, 0.0])

    def test_yeast_at_zero(self):
        f = bm.yeast_field(np.zeros(7))
        assert f[0] == bm.YEAST_CONSTANTS["c"][0] == 2.5
        np.testing.assert_array_equal(f[1:], 0.0)

    def test_yeast_stays_finite_and_positive(self):
        data = bm.simulate_dataset(bm.yeast_glycolysis())
        assert np.all(np.isfinite(data.states))
        assert data.states.min() > 0.0


class TestSimulation:
    def test_single_sample_and_single_step(self):
        spec = bm.harmonic_oscillator()
        one = bm.simulate_dataset(spec, steps=1)
        assert len(one) == 1
        np.testing.assert_array_equal(one.states[0], spec.initial_state)
        two = bm.simulate_dataset(spec, steps=2)
        np.testing.assert_array_equal(
            two.states[1], hm.discrete_step(bm.true_model(spec), spec.initial_state, two.inputs[0], None))

    def test_seeded_noise_is_deterministic(self):
        spec = bm.cartpole()
        a = bm.simulate_dataset(spec, process_std=0.1, meas_std=0.01, seed=4, steps=200)
        b = bm.simulate_dataset(spec, process_std=0.1, meas_std=0.01, seed=4, steps=200)
        c = bm.simulate_dataset(spec, process_std=0.1, meas_std=0.01, seed=5, steps=200)
        np.testing.assert_array_equal(a.measurements, b.measurements)
        assert not np.array_equal(a.measurements, c.measurements)

    @pytest.mark.parametrize("name", sorted(bm.BUILDERS))
    def test_resimulation_reproduces_states(self, name):
        spec = bm.get_benchmark(name)
        data = bm.simulate_dataset(spec, steps=300)
        model = bm.true_model(spec)
        x = data.states[0]
        for i in range(299):
            x = hm.discrete_step(model, x, data.inputs[i], None)
            assert np.array_equal(x, data.states[i + 1])
        np.testing.assert_array_equal(data.measurements, data.states[:, list(spec.measured_indices)])

    def test_divergence_reports_step(self):
        spec = bm.harmonic_oscillator().with_protocol(initial_state=[1e300, 0.0])
        with pytest.raises(NumericalError) as info:
            bm.simulate_dataset(spec, steps=10, dt=10.0)
        assert info.value.step_index is not None

    def test_registry(self):
        assert bm.get_benchmark("hh").name == "hodgkin_huxley"
        with pytest.raises(ConfigurationError):
            bm.get_benchmark("foo")


class TestDatasetIo:
    def test_round_trip_is_exact(self, tmp_path):
        data = bm.simulate_dataset(bm.cartpole(), steps=100)
        path = tmp_path / "cp.csv"
        bm.write_dataset(data, path)
        back = bm.load_dataset(path)
        for name in ("times", "inputs", "measurements", "states"):
            np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.splitlines()[0] == b"t,u_0,y_0,y_1,x_0,x_1,x_2,x_3"

    def test_missing_measurement_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,u_0,y_0,y_2\n0,0,0,0\n")
        with pytest.raises(DatasetFormatError, match="y_1") as info:
            bm.load_dataset(path)
        assert info.value.line == 1
        path.write_text("t,u_0\n0,0\n")
        with pytest.raises(DatasetFormatError, match="y_0"):
            bm.load_dataset(path)

    def test_bad_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,y_0\n0,1\n0.1,abc\n")
        with pytest.raises(DatasetFormatError) as info:
            bm.load_dataset(path)
        assert info.value.line == 3
        path.write_text("t,y_0\n0,1\n0.1\n")
        with pytest.raises(DatasetFormatError) as info:
            bm.load_dataset(path)
        assert info.value.line == 3

    def test_non_uniform_spacing(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,y_0\n0,1\n0.1,1\n0.25,1\n")
        with pytest.raises(DatasetFormatError, match="non-uniform"):
            bm.load_dataset(path)

    def test_emps_shaped_file(self, tmp_path):
        n = 24801
        t = np.arange(n) * 1e-3
        data = bm.Dataset(t, np.sin(t)[:, None], np.cos(t)[:, None])
        path = tmp_path / "emps.csv"
        bm.write_dataset(data, path)
        back = bm.load_dataset(path, d_u=1, d_y=1)
        assert len(back) == n and back.states is None
        assert abs(back.dt - 1e-3) < 1e-15
