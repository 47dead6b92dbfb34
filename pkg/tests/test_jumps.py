import numpy as np
import pytest
from scipy import stats

from nonlocal_fk import (
    CoverageError,
    DomainError,
    FieldSeries,
    Gaussian,
    Grid,
    SeedSpec,
    SignedKernel,
    build_kernel,
    sample_ensemble,
    sample_path,
)
from nonlocal_fk.jumps import (
    AliasTable,
    JumpPath,
    ensemble_potential_integrals,
    path_potential_integral,
    position_at,
)

from oracles import semigroup_dense


class TestAliasTable:
    def test_reproduces_weights(self):
        w = np.array([0.1, 0.0, 2.0, 0.7, 0.2])
        assert np.allclose(AliasTable(w).probabilities(), w / w.sum(), atol=1e-15)

    def test_empirical_frequencies(self):
        w = np.array([1.0, 2.0, 3.0, 4.0])
        draws = AliasTable(w).sample(np.random.default_rng(0), 200_000)
        counts = np.bincount(draws, minlength=4)
        assert stats.chisquare(counts, 200_000 * w / w.sum()).pvalue > 1e-3

    def test_rejects_bad_weights(self):
        with pytest.raises(DomainError):
            AliasTable([0.0, 0.0])
        with pytest.raises(DomainError):
            AliasTable([1.0, -1.0])


class TestSamplePath:
    def test_zero_horizon(self, kernel64):
        p = sample_path(kernel64, 5, 0.0, SeedSpec(1))
        assert p.jump_times.size == 0 and position_at(p, 0.0) == 5

    def test_mean_jump_count(self):
        g = Grid(1, 20.0, 64)
        J = SignedKernel(g, 2.0 * build_kernel(Gaussian(1.0), g).values)  # mu = 2
        ens = sample_ensemble(J, 5.0, 100_000, master_seed=3)
        mean = ens.counts.mean()
        assert abs(mean - 10.0) < 3.0 * np.sqrt(10.0 / 100_000)

    def test_delta_kernel_stays_put(self):
        g = Grid(1, 4.0, 16)
        J = SignedKernel(g, 3.0 * np.eye(1, 16)[0] / g.spacing)
        p = sample_path(J, 7, 4.0, SeedSpec(9))
        assert p.jump_times.size > 0
        assert np.all(p.positions == 7)

    def test_cadlag_positions(self):
        p = JumpPath(3, 2.0, np.array([1.0]), np.array([11]))
        assert position_at(p, 0.0) == 3
        assert position_at(p, np.nextafter(1.0, 0.0)) == 3
        assert position_at(p, 1.0) == 11
        assert position_at(p, 2.0) == 11
        with pytest.raises(DomainError):
            position_at(p, 2.5)

    def test_signed_kernel_rejected(self):
        g = Grid(1, 4.0, 8)
        with pytest.raises(DomainError):
            sample_path(SignedKernel(g, np.array([1.0, -0.1, 0, 0, 0, 0, 0, 0])), 0, 1.0, SeedSpec(0))

    def test_path_matches_ensemble_stream(self, kernel64):
        ens = sample_ensemble(kernel64, 3.0, 5, master_seed=11, first_stream=2)
        single = sample_path(kernel64, 9, 3.0, SeedSpec(11, 4))
        via_ens = ens.path(2, start=9)
        assert np.array_equal(single.jump_times, via_ens.jump_times)
        assert np.array_equal(single.positions, via_ens.positions)


class TestTransitionLaw:
    def test_end_site_distribution_matches_semigroup(self):
        # P(X_t = y | X_0 = x) = [exp(t L_J) e_y](x)
        g = Grid(1, 8.0, 16)
        base = build_kernel(Gaussian(1.0), g)
        # asymmetric kernel so that the reflection convention matters
        vals = base.values * (1.0 + 0.8 * (g.offsets() > 0))
        J = SignedKernel(g, vals)
        t, n = 1.5, 40_000
        ens = sample_ensemble(J, t, n, master_seed=5)
        start = 3
        ends = ens.positions_at(start, t)
        counts = np.bincount(ends, minlength=16)
        probs = np.array([semigroup_dense(J.values, g.spacing, t, np.eye(16)[y])[start] for y in range(16)])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert stats.chisquare(counts, n * probs).pvalue > 1e-3


class TestDeterminism:
    def test_same_seed_same_paths(self, kernel64):
        a = sample_ensemble(kernel64, 2.0, 300, master_seed=42)
        b = sample_ensemble(kernel64, 2.0, 300, master_seed=42)
        assert np.array_equal(a.jump_times, b.jump_times)
        assert np.array_equal(a.cells, b.cells)

    def test_parallel_equals_serial(self, kernel64):
        a = sample_ensemble(kernel64, 2.0, 500, master_seed=42)
        b = sample_ensemble(kernel64, 2.0, 500, master_seed=42, n_jobs=2)
        assert np.array_equal(a.jump_times, b.jump_times)
        assert np.array_equal(a.cells, b.cells)

    def test_different_seeds_differ(self, kernel64):
        a = sample_ensemble(kernel64, 2.0, 50, master_seed=1)
        b = sample_ensemble(kernel64, 2.0, 50, master_seed=2)
        assert not np.array_equal(a.counts, b.counts) or not np.array_equal(a.jump_times, b.jump_times)


class TestPotentialIntegral:
    def _path(self, kernel64):
        return sample_path(kernel64, 10, 2.0, SeedSpec(7))

    def test_zero(self, kernel64, grid64):
        W = FieldSeries.constant(grid64, [0.0, 2.0], 0.0)
        assert path_potential_integral(self._path(kernel64), W) == 0.0

    def test_constant(self, kernel64, grid64):
        W = FieldSeries.constant(grid64, [0.0, 2.0], 1.7)
        assert path_potential_integral(self._path(kernel64), W) == pytest.approx(3.4, abs=1e-14)

    def test_linear_in_time(self, kernel64, grid64):
        W = FieldSeries.from_function(grid64, [0.0, 2.0], lambda s, x: s + 0 * x)
        assert path_potential_integral(self._path(kernel64), W) == pytest.approx(2.0, abs=1e-14)

    def test_coverage(self, kernel64, grid64):
        W = FieldSeries.constant(grid64, [0.0, 1.0], 1.0)
        with pytest.raises(CoverageError):
            path_potential_integral(self._path(kernel64), W)

    def test_scalar_and_vectorized_routes_agree(self, kernel64, grid64):
        times = np.linspace(0.0, 2.0, 9)
        W = FieldSeries.from_function(grid64, times, lambda s, x: np.sin(x + 3 * s) * (1 + s))
        ens = sample_ensemble(kernel64, 2.0, 60, master_seed=8)
        starts = np.array([0, 17, 40])
        vec, ends = ensemble_potential_integrals(ens, W, starts, 2.0)
        for a, x in enumerate(starts):
            for i in range(ens.n_paths):
                p = ens.path(i, start=x)
                assert vec[a, i] == pytest.approx(path_potential_integral(p, W), abs=1e-12)
                assert ends[a, i] == position_at(p, 2.0)

    def test_truncated_horizon(self, kernel64, grid64):
        times = np.linspace(0.0, 1.0, 5)
        W = FieldSeries.from_function(grid64, times, lambda s, x: np.cos(x) * s)
        ens = sample_ensemble(kernel64, 2.0, 30, master_seed=8)
        vec, _ = ensemble_potential_integrals(ens, W, [5], 1.0)
        for i in range(ens.n_paths):
            p = ens.path(i, start=5)
            keep = p.jump_times <= 1.0
            cut = JumpPath(5, 1.0, p.jump_times[keep], p.positions[keep])
            assert vec[0, i] == pytest.approx(path_potential_integral(cut, W), abs=1e-12)
