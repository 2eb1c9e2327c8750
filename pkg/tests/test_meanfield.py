"""
Tests for the mean-field overlap equations, the RK4 integrator and the
trajectory classifier
"""
import csv
import itertools
import json

import numpy as np
import pytest
from pydantic import ValidationError

from fixedpoint import find_fixed_points
from meanfield import (
    DivergenceError,
    ModelParams,
    OverlapState,
    Trajectory,
    TrajectoryVerdict,
    VerdictKind,
    VerdictSettings,
    basin_radius,
    classify_trajectory,
    drive_term,
    integrate,
    integrate_batch,
    rhs,
)


class TestModelParams:
    """Parameter validation"""

    def test_temperature_sets_beta(self):
        """Test temperature is converted to its reciprocal"""
        params = ModelParams(x=2, temperature=0.5, omega=0.6)
        assert params.beta == pytest.approx(2.0)
        assert params.temperature == pytest.approx(0.5)

    def test_both_beta_and_temperature_rejected(self):
        """Test giving both beta and temperature is an error"""
        with pytest.raises(ValidationError, match="either beta or temperature"):
            ModelParams(x=2, beta=1.0, temperature=1.0)

    def test_odd_exponent_rejected(self):
        """Test odd x is rejected"""
        with pytest.raises(ValidationError, match="even"):
            ModelParams(x=3, beta=1.0)

    def test_non_positive_beta_rejected(self):
        """Test beta must be positive"""
        with pytest.raises(ValidationError):
            ModelParams(x=2, beta=0.0)


class TestDrive:
    """Exact pattern average of the tanh drive"""

    def test_single_pattern_collapses(self):
        """Test p=1 reduces to tanh(beta m^{x-1})"""
        params = ModelParams(x=4, p=1, beta=1.7)
        assert drive_term([0.8], params)[0] == pytest.approx(np.tanh(1.7 * 0.8 ** 3), abs=1e-15)

    def test_two_patterns_closed_form(self):
        """Test p=2 matches the two-term closed form"""
        params = ModelParams(x=2, p=2, beta=1.3)
        m = np.array([0.6, -0.2])
        expected = 0.5 * (np.tanh(1.3 * (m[0] + m[1])) + np.tanh(1.3 * (m[0] - m[1])))
        assert drive_term(m, params)[0] == pytest.approx(expected, abs=1e-15)

    def test_three_patterns_enumeration(self, rng):
        """Test p=3 matches a direct sum over the eight sign vectors"""
        params = ModelParams(x=4, p=3, beta=1.3)
        m = rng.uniform(-1, 1, size=3)
        a = m ** 3
        expected = np.zeros(3)
        for xi in itertools.product([1.0, -1.0], repeat=3):
            xi = np.array(xi)
            expected += xi * np.tanh(1.3 * xi @ a)
        expected /= 8
        assert np.allclose(drive_term(m, params), expected, atol=1e-14)

    def test_too_many_patterns(self):
        """Test p above p_max is refused"""
        params = ModelParams(x=2, p=3, beta=1.0)
        with pytest.raises(ValueError, match="p_max"):
            drive_term(np.zeros(3), params, p_max=2)


class TestRhs:
    """Right-hand side of the equations of motion"""

    def test_origin_is_fixed(self):
        """Test the derivative vanishes at the origin"""
        params = ModelParams(x=4, p=2, beta=2.0, omega=0.7)
        derivative = rhs(OverlapState.origin(2), params)
        assert np.all(derivative.m_z == 0) and np.all(derivative.m_y == 0)

    def test_direct_substitution(self):
        """Test x=4, beta=1, Omega=0 at (1, 0)"""
        params = ModelParams(x=4, p=1, beta=1.0, omega=0.0)
        derivative = rhs(OverlapState.probe(1.0, 0.0), params)
        assert derivative.m_z[0] == pytest.approx(-1 + np.tanh(1.0), abs=1e-12)
        assert derivative.m_z[0] == pytest.approx(-0.23840, abs=1e-5)
        assert derivative.m_y[0] == 0.0

    @pytest.mark.parametrize("x,beta,omega", [(2, 2.0, 0.0), (2, 2.0, 0.3), (4, 3.0, 0.0), (4, 5.0, 0.2)])
    def test_fixed_points_are_stationary(self, x, beta, omega):
        """Test every reported fixed point has a vanishing derivative"""
        params = ModelParams(x=x, p=1, beta=beta, omega=omega)
        for root in find_fixed_points(params):
            derivative = rhs(OverlapState.probe(root.m_z, root.m_y), params)
            assert np.max(np.abs(derivative.as_vector())) < 1e-9


class TestIntegrate:
    """Fixed-step RK4"""

    def test_origin_stays_put(self):
        """Test a trajectory from the origin is identically zero"""
        params = ModelParams(x=2, p=1, beta=2.0, omega=0.4)
        traj = integrate(OverlapState.origin(), params, t_max=5.0)
        assert np.all(traj.states == 0.0)

    def test_converges_to_self_consistent_root(self):
        """Test x=2, beta=2 from (0.5, 0) reaches the root of M = tanh 2M"""
        params = ModelParams(x=2, p=1, beta=2.0, omega=0.0)
        traj = integrate(OverlapState.probe(0.5, 0.0), params, t_max=60.0, stride=100)
        assert traj.m_z[-1, 0] == pytest.approx(0.95750, abs=1e-4)

    def test_step_halving(self):
        """Test halving dt changes M_Z(50) by less than 1e-6"""
        params = ModelParams(x=2, p=1, beta=2.0, omega=0.0)
        coarse = integrate(OverlapState.probe(0.5, 0.0), params, dt=1e-2, t_max=50.0)
        fine = integrate(OverlapState.probe(0.5, 0.0), params, dt=5e-3, t_max=50.0)
        assert abs(coarse.m_z[-1, 0] - fine.m_z[-1, 0]) < 1e-6

    def test_fourth_order(self):
        """Test the step-halving error ratio is close to 16"""
        params = ModelParams(x=2, p=1, beta=2.0, omega=0.3)
        start = OverlapState.probe(0.5, 0.1)
        ends = [integrate(start, params, dt=dt, t_max=2.0).states[-1] for dt in (0.2, 0.1, 0.05)]
        ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
        assert 12.0 <= ratio <= 20.0

    def test_inversion_symmetry(self):
        """Test the trajectory from -state0 is the negated trajectory"""
        params = ModelParams(x=4, p=2, beta=2.5, omega=0.3)
        start = OverlapState(np.array([0.9, -0.3]), np.array([-0.2, 0.4]))
        flipped = OverlapState(-start.m_z, -start.m_y)
        a = integrate(start, params, t_max=20.0)
        b = integrate(flipped, params, t_max=20.0)
        assert np.max(np.abs(a.states + b.states)) < 1e-12

    def test_bounded_from_large_start(self):
        """Test trajectories from large overlaps stay finite and bounded"""
        for omega in (0.0, 0.5, 2.0):
            params = ModelParams(x=6, p=1, beta=10.0, omega=omega)
            traj = integrate(OverlapState.probe(50.0, -50.0), params, t_max=50.0, stride=10)
            assert np.all(np.isfinite(traj.states))
            assert np.max(np.abs(traj.states[-1])) < 5.0

    def test_stride_and_times(self):
        """Test recorded times follow the stride"""
        params = ModelParams(x=2, p=1, beta=1.0)
        traj = integrate(OverlapState.probe(0.1, 0.0), params, dt=0.01, t_max=1.0, stride=10)
        assert traj.times.shape == (11,)
        assert traj.times[-1] == pytest.approx(1.0)

    def test_bad_step_rejected(self):
        """Test t_max must exceed dt"""
        params = ModelParams(x=2, p=1, beta=1.0)
        with pytest.raises(ValueError, match="t_max"):
            integrate(OverlapState.origin(), params, dt=0.1, t_max=0.05)

    def test_non_finite_state_raises(self):
        """Test a non-finite state aborts with a divergence error"""
        y0 = np.array([[np.inf, 0.0]])
        with pytest.raises(DivergenceError):
            integrate_batch(y0, np.array([1.0]), np.array([0.0]), 2, 1, dt=0.1, t_max=1.0)

    def test_csv_layout(self, out_dir):
        """Test trajectory CSV header for p=2"""
        params = ModelParams(x=2, p=2, beta=1.0)
        traj = integrate(OverlapState(np.array([0.1, 0.2]), np.array([0.0, 0.0])), params, t_max=0.5, dt=0.1)
        path = traj.to_csv(out_dir / "traj.csv")
        with path.open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["t", "m_z_1", "m_z_2", "m_y_1", "m_y_2"]
        assert len(rows) == 1 + traj.times.shape[0]


class TestClassifyTrajectory:
    """Converged / limit cycle / undecided verdicts"""

    def test_x2_limit_cycle(self, lc_params_x2):
        """Test x=2, T=0.5, Omega=0.6 from (3, -3) is a limit cycle"""
        traj = integrate(OverlapState.probe(3.0, -3.0), lc_params_x2, stride=10)
        verdict = classify_trajectory(traj)
        assert verdict.kind == VerdictKind.LIMIT_CYCLE
        assert verdict.amplitude > 1e-3
        assert verdict.period > 0

    def test_x2_paramagnet_converges(self):
        """Test x=2, beta=0.5, Omega=0.1 from (3, -3) reaches the origin"""
        params = ModelParams(x=2, p=1, beta=0.5, omega=0.1)
        verdict = classify_trajectory(integrate(OverlapState.probe(3.0, -3.0), params, stride=10))
        assert verdict.kind == VerdictKind.CONVERGED
        assert verdict.converged_to_origin()

    @pytest.mark.parametrize("temperature,omega", [(0.1, 0.0), (0.3, 0.6), (1.0, 1.5), (2.0, 0.05)])
    def test_x4_near_origin_converges(self, temperature, omega):
        """Test x=4 trajectories started next to the origin return to it"""
        params = ModelParams(x=4, p=1, temperature=temperature, omega=omega)
        traj = integrate(OverlapState.probe(1e-3, -1e-3), params, t_max=200.0, stride=10)
        assert classify_trajectory(traj).converged_to_origin()

    def test_ferromagnet_converges_off_origin(self, fm_params_x4):
        """Test x=4 from (1, 0) settles on the large root, not the origin"""
        verdict = classify_trajectory(integrate(OverlapState.probe(1.0, 0.0), fm_params_x4, t_max=100.0, stride=10))
        assert verdict.kind == VerdictKind.CONVERGED
        assert not verdict.converged_to_origin()
        assert verdict.terminal_point[0] == pytest.approx(0.995, abs=1e-2)

    def test_slow_decay_is_undecided(self):
        """Test a slowly shrinking spiral is neither converged nor a cycle"""
        times = np.linspace(0.0, 100.0, 2001)
        decay = np.exp(-0.02 * times)
        states = np.column_stack((decay * np.cos(times), decay * np.sin(times)))
        traj = Trajectory(times, states, ModelParams(x=2, beta=1.0))
        assert classify_trajectory(traj).kind == VerdictKind.UNDECIDED

    def test_short_trajectory_rejected(self):
        """Test a trajectory too short for two windows is refused"""
        params = ModelParams(x=2, beta=1.0)
        traj = integrate(OverlapState.probe(0.1, 0.0), params, dt=0.1, t_max=1.0)
        with pytest.raises(ValueError, match="too short"):
            classify_trajectory(traj, VerdictSettings(min_window_samples=50))

    def test_verdict_json_line(self):
        """Test verdicts serialize to a single JSON line"""
        verdict = TrajectoryVerdict(kind=VerdictKind.LIMIT_CYCLE, amplitude=0.5, period=3.0)
        line = verdict.to_json_line()
        assert "\n" not in line
        assert json.loads(line)["kind"] == "LimitCycle"


class TestBasinRadius:
    """Basin of attraction of the origin"""

    def test_x2_saddle_has_no_basin(self):
        """Test the x=2 saddle origin has a vanishing basin"""
        params = ModelParams(x=2, p=1, beta=2.0, omega=0.0)
        result = basin_radius(params, tol=1e-3, t_max=100.0)
        assert not result.saturated
        assert result.radius <= 2e-3

    def test_x4_radius_below_middle_root(self, fm_params_x4):
        """Test the x=4 basin edge sits between 0 and the smaller positive root"""
        roots = [r.m_z for r in find_fixed_points(fm_params_x4) if r.m_z > 0]
        result = basin_radius(fm_params_x4, direction=(1.0, 0.0), tol=1e-3, t_max=100.0)
        assert not result.saturated
        assert 0.0 < result.radius
        assert result.radius - 1e-3 <= roots[0] <= result.radius + 1e-3

    def test_requires_single_pattern(self):
        """Test p > 1 is refused"""
        with pytest.raises(ValueError, match="p=1"):
            basin_radius(ModelParams(x=4, p=2, beta=3.0))

    def test_saturation_flag(self):
        """Test a paramagnet returns r_max with the saturation flag"""
        params = ModelParams(x=4, p=1, beta=0.5, omega=0.5)
        result = basin_radius(params, r_max=2.0, t_max=100.0)
        assert result.saturated
        assert result.radius == 2.0
