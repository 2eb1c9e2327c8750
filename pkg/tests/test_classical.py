"""
Tests for classical Hopfield storage, energies, retrieval and capacity
"""
import csv
import logging

import numpy as np
import pytest

from classical import (
    CapacityReport,
    LoadPoint,
    PatternSet,
    capacity_experiment,
    delta_e,
    flip_bits,
    hebbian_couplings,
    hopfield_energy,
    modern_energy,
    retrieve,
    update_async,
)


class TestPatternSet:
    """Validation of stored patterns"""

    def test_random_patterns_are_spins(self, rng):
        """Test random patterns have the requested shape and only +-1 entries"""
        patterns = PatternSet.random(5, 40, rng)
        assert patterns.patterns.shape == (5, 40)
        assert set(np.unique(patterns.patterns)) <= {-1, 1}

    def test_rejects_non_spin_entries(self):
        """Test a zero entry is rejected"""
        with pytest.raises(ValueError, match="exactly \\+1 or -1"):
            PatternSet(np.array([[1, 0, -1]]))

    def test_single_vector_becomes_one_pattern(self):
        """Test a 1-D input is treated as p=1"""
        patterns = PatternSet(np.array([1, -1, 1]))
        assert patterns.n_patterns == 1
        assert patterns.n_spins == 3


class TestEnergies:
    """Hebbian couplings, Hopfield energy and the dense energy"""

    def test_couplings_symmetric(self, small_patterns):
        """Test Hebbian couplings are symmetric with diagonal p/N"""
        j = hebbian_couplings(small_patterns)
        assert np.allclose(j, j.T)
        assert np.allclose(np.diag(j), small_patterns.n_patterns / small_patterns.n_spins)

    def test_couplings_match_triple_loop(self, small_patterns):
        """Test the Hebb rule against an explicit sum over patterns and site pairs"""
        xi = small_patterns.patterns
        p, n = xi.shape
        expected = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                for mu in range(p):
                    expected[i, j] += xi[mu, i] * xi[mu, j]
        assert np.allclose(hebbian_couplings(small_patterns), expected / n, atol=1e-12)

    @pytest.mark.parametrize(
        "rows, j12",
        [
            ([[1, 1]], 0.5),
            ([[1, 1], [1, -1]], 0.0),
        ],
    )
    def test_two_spin_couplings(self, rows, j12):
        """Test J_12 for one aligned pattern and for two orthogonal patterns"""
        assert hebbian_couplings(PatternSet(np.array(rows)))[0, 1] == pytest.approx(j12)

    def test_x4_energy_matches_direct_sum(self, small_patterns, rng):
        """Test the x=4 energy against an explicit sum of fourth powers"""
        xi = small_patterns.patterns
        p, n = xi.shape
        for _ in range(5):
            s = rng.choice([-1, 1], size=n)
            total = 0.0
            for mu in range(p):
                overlap = sum(int(xi[mu, i]) * int(s[i]) for i in range(n))
                total += overlap ** 4
            assert modern_energy(small_patterns, s, 4) == pytest.approx(-total / (2 * n ** 3), abs=1e-12)

    @pytest.mark.parametrize("x", [2, 4, 6])
    def test_energy_invariant_under_global_flip(self, small_patterns, rng, x):
        """Test E(s) = E(-s) for even exponents"""
        for _ in range(20):
            s = rng.choice([-1, 1], size=small_patterns.n_spins)
            assert modern_energy(small_patterns, s, x) == modern_energy(small_patterns, -s, x)

    def test_x2_energy_matches_hopfield_energy(self, small_patterns, rng):
        """Test the x=2 dense energy equals the quadratic Hopfield energy"""
        s = rng.choice([-1, 1], size=small_patterns.n_spins)
        j = hebbian_couplings(small_patterns)
        assert modern_energy(small_patterns, s, 2) == pytest.approx(hopfield_energy(j, s), abs=1e-12)

    def test_stored_pattern_energy(self):
        """Test the energy of a lone stored pattern is -N/2"""
        patterns = PatternSet(np.array([[1, -1, 1, 1, -1, -1]]))
        assert modern_energy(patterns, patterns.patterns[0], 4) == pytest.approx(-3.0)

    def test_odd_exponent_rejected(self, small_patterns):
        """Test odd x is refused with the symmetry message"""
        with pytest.raises(ValueError, match="even"):
            modern_energy(small_patterns, small_patterns.patterns[0], 3)

    def test_dimension_mismatch(self, small_patterns):
        """Test a state of the wrong length is refused"""
        with pytest.raises(ValueError, match="dimension mismatch"):
            modern_energy(small_patterns, np.ones(5), 2)


class TestDeltaE:
    """Local drive and its relation to energy differences"""

    def test_x2_equals_local_field(self, small_patterns, rng):
        """Test x=2 drive is sum_{j != i} J_ij s_j"""
        s = rng.choice([-1, 1], size=small_patterns.n_spins)
        j = hebbian_couplings(small_patterns)
        for i in range(small_patterns.n_spins):
            field = j[i] @ s - j[i, i] * s[i]
            assert delta_e(small_patterns, s, i, 2) == pytest.approx(field, abs=1e-12)

    def test_x2_twice_drive_is_energy_gap(self, small_patterns, rng):
        """Test 2 * drive equals E(s_i=-1) - E(s_i=+1) for x=2"""
        s = rng.choice([-1, 1], size=small_patterns.n_spins)
        for i in range(small_patterns.n_spins):
            down, up = s.copy(), s.copy()
            down[i], up[i] = -1, 1
            gap = modern_energy(small_patterns, down, 2) - modern_energy(small_patterns, up, 2)
            assert 2 * delta_e(small_patterns, s, i, 2) == pytest.approx(gap, abs=1e-12)

    def test_x4_hand_example(self):
        """Test x=4, N=3, xi=(+,+,+), s=(+,+,-) at site 0 gives 0"""
        patterns = PatternSet(np.array([[1, 1, 1]]))
        # inner sum over j != 0 is 1 - 1 = 0
        assert delta_e(patterns, [1, 1, -1], 0, 4) == 0.0
        # site 2: inner sum 1 + 1 = 2, so 2^3 / 3^3
        assert delta_e(patterns, [1, 1, -1], 2, 4) == pytest.approx(8 / 27)

    def test_x4_matches_direct_sum(self, small_patterns, rng):
        """Test the x=4 drive against explicit loops over patterns and j != i"""
        xi = small_patterns.patterns
        p, n = xi.shape
        s = rng.choice([-1, 1], size=n)
        for i in range(n):
            expected = 0.0
            for mu in range(p):
                inner = sum(int(xi[mu, j]) * int(s[j]) for j in range(n) if j != i)
                expected += xi[mu, i] * inner ** 3
            assert delta_e(small_patterns, s, i, 4) == pytest.approx(expected / n ** 3, abs=1e-12)

    @pytest.mark.parametrize("x", [2, 4])
    def test_stored_pattern_drive(self, x):
        """Test a lone stored pattern drives every spin with (N-1)^{x-1} / N^{x-1}"""
        pattern = np.array([1, -1, -1, 1, 1, -1, 1])
        patterns = PatternSet(pattern)
        n = pattern.size
        for i in range(n):
            drive = delta_e(patterns, pattern, i, x)
            assert drive * pattern[i] == pytest.approx((n - 1) ** (x - 1) / n ** (x - 1))

    def test_index_out_of_range(self, small_patterns):
        """Test an invalid site index is rejected"""
        with pytest.raises(ValueError, match="out of range"):
            delta_e(small_patterns, small_patterns.patterns[0], small_patterns.n_spins, 2)


class TestRetrieval:
    """Asynchronous updates and retrieval"""

    def test_stored_pattern_is_fixed(self, rng):
        """Test a stored pattern converges in one sweep without change"""
        patterns = PatternSet.random(3, 60, rng)
        result = retrieve(patterns, patterns.patterns[0], 4)
        assert result.converged
        assert result.sweeps == 1
        assert np.array_equal(result.state, patterns.patterns[0])

    @pytest.mark.parametrize("x", [2, 4])
    def test_inverted_pattern_is_fixed(self, rng, x):
        """Test -xi is left unchanged when a single pattern is stored"""
        patterns = PatternSet.random(1, 30, rng)
        inverted = -patterns.patterns[0]
        assert np.array_equal(update_async(patterns, inverted, x), inverted)
        result = retrieve(patterns, inverted, x)
        assert result.converged
        assert np.array_equal(result.state, inverted)

    @pytest.mark.parametrize("x", [2, 4])
    def test_update_commutes_with_global_flip(self, rng, x):
        """Test a sweep from -s is the global flip of the sweep from s"""
        patterns = PatternSet.random(4, 25, rng)
        for _ in range(50):
            s = rng.choice([-1, 1], size=25)
            order = rng.permutation(25)
            assert np.array_equal(update_async(patterns, -s, x, order), -update_async(patterns, s, x, order))

    def test_dense_recall_from_ten_percent_noise(self):
        """Test x=4, N=100, p=5 recovers xi from 10 flipped bits in at least 95 of 100 trials"""
        rng = np.random.default_rng(4242)
        recovered = 0
        for _ in range(100):
            patterns = PatternSet.random(5, 100, rng)
            noisy = flip_bits(patterns.patterns[0], 10, rng)
            result = retrieve(patterns, noisy, 4, max_sweeps=5)
            recovered += bool(np.array_equal(result.state, patterns.patterns[0]))
        assert recovered >= 95

    def test_dense_energy_rise_is_logged(self, caplog):
        """Test an x=4 flip that raises the energy is accepted and logged"""
        # site 0 sees other-site overlaps a = 7, 5 and eight times 3 with
        # xi_0 = +1, -1, -1...: sum xi_0 a^3 = 2 > 0 but sum xi_0 (a^3 + a) < 0
        rows = [[1] * 8, [-1, -1] + [1] * 6] + [[-1, -1, -1] + [1] * 5] * 8
        patterns = PatternSet(np.array(rows))
        start = np.array([-1] + [1] * 7)
        assert delta_e(patterns, start, 0, 4) > 0
        with caplog.at_level(logging.WARNING, logger="classical"):
            result = retrieve(patterns, start, 4, site_order=[0])
        assert result.state[0] == 1
        assert result.energies[1] > result.energies[0]
        assert result.converged
        assert "Energy increased" in caplog.text

    def test_noisy_probe_recovered(self, rng):
        """Test x=2 with few patterns repairs a corrupted probe"""
        patterns = PatternSet.random(3, 100, rng)
        probe = flip_bits(patterns.patterns[1], 10, rng)
        result = retrieve(patterns, probe, 2)
        assert result.converged
        assert np.array_equal(result.state, patterns.patterns[1])

    def test_energy_never_increases(self, rng):
        """Test the x=2 energy is non-increasing across sweeps"""
        patterns = PatternSet.random(8, 30, rng)
        probe = rng.choice([-1, 1], size=30)
        result = retrieve(patterns, probe, 2, site_order="random", rng=rng)
        assert all(b <= a + 1e-9 for a, b in zip(result.energies, result.energies[1:]))

    def test_tie_keeps_spin(self):
        """Test a zero drive leaves the spin unchanged"""
        patterns = PatternSet(np.array([[1, 1, 1]]))
        # site 0 sees 1 - 1 = 0 from the other spins
        state = update_async(patterns, [-1, 1, -1], 2, site_order=[0])
        assert state[0] == -1

    def test_random_order_needs_rng(self, small_patterns):
        """Test random order without a generator is refused"""
        with pytest.raises(ValueError, match="generator"):
            update_async(small_patterns, small_patterns.patterns[0], 2, site_order="random")

    def test_flip_bits_exact_count(self, rng):
        """Test exactly k distinct spins are inverted"""
        s = np.ones(50, dtype=int)
        corrupted = flip_bits(s, 7, rng)
        assert int(np.sum(corrupted != s)) == 7
        assert np.all(s == 1)


class TestCapacity:
    """Capacity experiment plumbing"""

    def test_report_is_reproducible(self):
        """Test identical seeds give identical reports regardless of threads"""
        kwargs = dict(
            n_spins=40, x=2, noise_fraction=0.05, error_threshold=0.05, trials=2, p_schedule=[2, 4, 8], seed=7
        )
        one = capacity_experiment(threads=1, **kwargs)
        many = capacity_experiment(threads=4, **kwargs)
        assert one.model_dump() == many.model_dump()

    def test_low_load_succeeds(self):
        """Test a lightly loaded network retrieves every probe"""
        report = capacity_experiment(
            n_spins=100, x=2, noise_fraction=0.05, error_threshold=0.01, trials=2, p_schedule=[1, 2], seed=3
        )
        assert [point.success_rate for point in report.load_curve] == [1.0, 1.0]
        assert report.estimated_capacity == 2

    def test_schedule_must_increase(self):
        """Test an unsorted load schedule is rejected"""
        with pytest.raises(ValueError, match="strictly increasing"):
            capacity_experiment(
                n_spins=20, x=2, noise_fraction=0.05, error_threshold=0.01, trials=1, p_schedule=[4, 2], seed=1
            )

    def test_csv_layout(self, out_dir):
        """Test the capacity CSV header and one row per load"""
        report = CapacityReport(
            network_size=100,
            exponent=2,
            trials=1,
            noise_fraction=0.05,
            error_threshold=0.01,
            estimated_capacity=10,
            load_curve=[LoadPoint(p=10, success_rate=1.0, mean_final_distance=0.0),
                        LoadPoint(p=20, success_rate=0.5, mean_final_distance=3.5)],
        )
        path = report.to_csv(out_dir / "capacity.csv")
        with path.open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["p", "success_rate", "mean_final_distance"]
        assert rows[2] == ["20", "0.500000", "3.500000"]
