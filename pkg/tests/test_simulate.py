"""Path generation: exact laws, coupling structure, kernels, determinism.

The constant-amplitude family gives closed-form laws (the Euler recursion
is exact when sigma does not depend on x), which pins the simulator against
analytic targets rather than against itself.
"""

import math

import numpy as np
import pytest
from scipy import stats

from smalljumps import _kernels_py
from smalljumps._backend import COMPILED, kernels
from smalljumps.distance import _weight_table
from smalljumps.measure import BandDecomposition, frozen_variance_scalar, substitution_scalars
from smalljumps.models import make_constant_model, make_sine_model
from smalljumps.simulate import (
    PathConfig,
    coupled_pair,
    euler_transformed,
    run_coupled_batch,
    run_terminals,
    sample_big_jumps,
    simulate_path,
)


class TestPathConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PathConfig(eps=0.0)
        with pytest.raises(ValueError):
            PathConfig(eps=1.2)
        with pytest.raises(ValueError):
            PathConfig(scheme="milstein")
        with pytest.raises(ValueError):
            PathConfig(eps=0.1, eps_ref=0.2)

    def test_reference_scheme_effective_level(self):
        cfg = PathConfig(eps=0.2, scheme="reference")
        eps_eff, _ = cfg.effective()
        assert eps_eff == pytest.approx(0.025)


class TestExactLaws:
    def test_pure_substitution_terminal_is_gaussian(self):
        # eps = 1 removes every big jump; with constant sigma the recursion
        # telescopes to x0 + scale*(B*T + sqrt(A) * W_T) exactly
        model = make_constant_model(rho=0.5, scale=1.5)
        cfg = PathConfig(x0=2.0, T=1.0, eps=1.0, n_steps=32, seed=11)
        xs = run_terminals(model, cfg, 3000)
        B, A = substitution_scalars(model, 1.0)
        assert B == pytest.approx(2.0, rel=1e-9)
        assert A == pytest.approx(2.0 / 3.0, rel=1e-9)
        z = (xs - (2.0 + 1.5 * B)) / (1.5 * math.sqrt(A))
        assert stats.kstest(z, "norm").pvalue > 1e-3

    def test_terminal_mean_matches_first_moment(self):
        # compensated structure: E X_T = x0 + scale * T * int z mu(dz)
        #                              = x0 + scale * T / (1 - rho)
        model = make_constant_model(rho=0.5, scale=1.0)
        cfg = PathConfig(x0=0.0, T=1.0, eps=0.1, n_steps=64, seed=5)
        xs = run_terminals(model, cfg, 4000)
        se = xs.std(ddof=1) / math.sqrt(xs.size)
        assert abs(xs.mean() - 2.0) < 4.0 * se

    def test_big_jump_counts_are_poisson(self, sine_model):
        bands = BandDecomposition.build(sine_model, 0.2)
        T = 1.0
        counts = np.array([
            sample_big_jumps(sine_model, bands,
                             PathConfig(T=T, eps=0.2, seed=2, path_index=i)).counts()
            for i in range(2000)
        ])
        masses = bands.masses() * T
        mean = counts.mean(axis=0)
        var = counts.var(axis=0)
        se = np.sqrt(masses / 2000.0)
        assert np.all(np.abs(mean - masses) < 4.0 * se)
        # Poisson index of dispersion is 1; allow generous sampling noise
        assert np.all(np.abs(var / masses - 1.0) < 0.2)

    def test_jump_marks_lie_in_their_bands(self, sine_model):
        bands = BandDecomposition.build(sine_model, 0.25)
        stream = sample_big_jumps(sine_model, bands, PathConfig(eps=0.25, seed=9))
        for bj in stream.per_band:
            assert np.all((bj.z >= bj.band.lo) & (bj.z < bj.band.hi))
            assert np.all((bj.times >= 0) & (bj.times <= 1.0))
            np.testing.assert_array_equal(bj.z, np.where(bj.xi == 1, bj.v, bj.u))


class TestSchemes:
    def test_truncation_only_has_no_gaussian_noise(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=32, scheme="truncation_only", seed=3)
        traj = simulate_path(sine_model, None, cfg)
        assert np.all(traj.gaussian_increments.variances == 0.0)
        sub = simulate_path(sine_model, None,
                            PathConfig(eps=0.2, n_steps=32, seed=3))
        assert np.all(sub.gaussian_increments.variances > 0.0)

    def test_schemes_share_jump_skeleton(self, sine_model):
        cfg_t = PathConfig(eps=0.2, n_steps=32, scheme="truncation_only", seed=3)
        cfg_g = PathConfig(eps=0.2, n_steps=32, seed=3)
        jt = [e.time for e in simulate_path(sine_model, None, cfg_t).events]
        jg = [e.time for e in simulate_path(sine_model, None, cfg_g).events]
        assert jt == jg

    def test_frozen_variance_scalar_converges_to_exact_tail(self, sine_model):
        _, A = substitution_scalars(sine_model, 0.1)
        coarse = frozen_variance_scalar(sine_model, M=10.0, h=0.5)
        fine = frozen_variance_scalar(sine_model, M=10.0, h=1e-3)
        assert fine == pytest.approx(A, rel=1e-4)
        assert abs(coarse - A) > abs(fine - A)

    def test_frozen_euler_runs_and_records_variances(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=16, seed=4)
        traj = euler_transformed(sine_model, cfg, 16, space_grid=64)
        assert traj.terminal == traj.states[-1]
        assert np.all(traj.gaussian_increments.variances >= 0.0)


class TestCoupling:
    def test_equal_levels_reproduce_bitwise(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=32, seed=6)
        ta, tb = coupled_pair(sine_model, None, cfg, 0.2, 0.2)
        np.testing.assert_array_equal(ta.states, tb.states)

    def test_fine_member_nests_coarse_jumps(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=32, seed=6)
        ta, tb = coupled_pair(sine_model, None, cfg, 0.2, 0.05)
        coarse = {(e.time, e.mark) for e in ta.events}
        fine = {(e.time, e.mark) for e in tb.events}
        assert coarse <= fine
        extra_marks = [m for (_, m) in fine - coarse]
        assert all(m >= 5.0 for m in extra_marks)

    def test_uncoupled_pair_draws_independently(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=32, seed=6, couple_big_jumps=False)
        ta, tb = coupled_pair(sine_model, None, cfg, 0.2, 0.2)
        assert not np.array_equal(ta.states, tb.states)


class TestCoupledBatch:
    def test_rejects_non_substitution_scheme(self, sine_model):
        cfg = PathConfig(eps=0.2, scheme="truncation_only")
        with pytest.raises(ValueError, match="derives truncation variants"):
            run_coupled_batch(sine_model, cfg, 0.2, 0.05, 8)

    def test_identical_levels_have_zero_difference(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=32, seed=1)
        b = run_coupled_batch(sine_model, cfg, 0.2, 0.2, 64)
        for r in range(b.n_replicas):
            np.testing.assert_array_equal(b.xa[0], b.xb[0, r])
            np.testing.assert_array_equal(b.xa[1], b.xb[1, r])
        np.testing.assert_array_equal(b.xa_trunc, b.xb_trunc)

    def test_antithetic_average_is_exact_without_jumps(self):
        # constant amplitude and eps = 1: the Gaussian part cancels between
        # the antithetic rows, leaving the deterministic drift
        model = make_constant_model(rho=0.5, scale=1.0)
        cfg = PathConfig(x0=0.0, T=1.0, eps=1.0, n_steps=16, seed=8)
        b = run_coupled_batch(model, cfg, 1.0, 1.0, 32, include_truncation=False)
        B, _ = substitution_scalars(model, 1.0)
        np.testing.assert_allclose(0.5 * (b.xa[0] + b.xa[1]), B, rtol=1e-12)

    def test_control_variates_are_centred(self, sine_model):
        cfg = PathConfig(x0=1.0, eps=0.2, n_steps=64, seed=2)
        b = run_coupled_batch(sine_model, cfg, 0.2, 0.05, 3000,
                              include_truncation=False,
                              cv_table=_weight_table(sine_model, cfg))
        for row in list(b.cv) + list(b.cv_quad):
            se = row.std(ddof=1) / math.sqrt(row.size)
            assert abs(row.mean()) < 4.5 * se

    def test_worker_count_never_changes_results(self, sine_model):
        cfg = PathConfig(x0=1.0, eps=0.2, n_steps=16, seed=2)
        tab = _weight_table(sine_model, cfg)
        b1 = run_coupled_batch(sine_model, cfg, 0.2, 0.05, 300, cv_table=tab,
                               workers=1, block_size=64)
        b2 = run_coupled_batch(sine_model, cfg, 0.2, 0.05, 300, cv_table=tab,
                               workers=2, block_size=32)
        np.testing.assert_array_equal(b1.xa, b2.xa)
        np.testing.assert_array_equal(b1.xb, b2.xb)
        np.testing.assert_array_equal(b1.xa_trunc, b2.xa_trunc)
        np.testing.assert_array_equal(b1.cv, b2.cv)
        np.testing.assert_array_equal(b1.cv_quad, b2.cv_quad)


class TestRunTerminals:
    def test_worker_invariance(self, sine_model):
        cfg = PathConfig(eps=0.2, n_steps=16, seed=7)
        a = run_terminals(sine_model, cfg, 200, workers=1, block_size=64)
        b = run_terminals(sine_model, cfg, 200, workers=2, block_size=50)
        np.testing.assert_array_equal(a, b)

    def test_paths_indexed_not_sequential(self, sine_model):
        # the first 100 paths of a 200-path run equal a 100-path run
        cfg = PathConfig(eps=0.2, n_steps=16, seed=7)
        long = run_terminals(sine_model, cfg, 200)
        short = run_terminals(sine_model, cfg, 100)
        np.testing.assert_array_equal(long[:100], short)


class TestKernels:
    def _inputs(self):
        gen = np.random.default_rng(3)
        n = 40
        seg = gen.uniform(0.01, 0.05, n)
        normals = gen.standard_normal(n)
        marks = np.where(gen.random(n) < 0.3, gen.uniform(1.0, 5.0, n), 0.0)
        has = (marks > 0).astype(np.uint8)
        ends = gen.random(n) < 0.5
        ends[-1] = True
        return seg, normals, marks, has, ends.astype(np.uint8)

    @pytest.mark.skipif(not COMPILED, reason="compiled kernels unavailable")
    def test_compiled_matches_python_bitwise(self):
        seg, normals, marks, has, ends = self._inputs()
        for kind, p0, p1 in ((kernels.KIND_SINE, 2.0, 0.5),
                             (kernels.KIND_CONSTANT, 1.3, 0.0)):
            for frozen in (False, True):
                pre_c = np.empty(seg.size)
                post_c = np.empty(seg.size)
                out_c = kernels.evolve_path(kind, p0, p1, 0.7, seg, normals,
                                            marks, has, ends, 0.4, 0.2, frozen,
                                            pre_c, post_c)
                pre_p = np.empty(seg.size)
                post_p = np.empty(seg.size)
                out_p = _kernels_py.evolve_path(kind, p0, p1, 0.7, seg, normals,
                                                marks, has, ends, 0.4, 0.2,
                                                frozen, pre_p, post_p)
                assert out_c == out_p
                np.testing.assert_array_equal(pre_c, pre_p)
                np.testing.assert_array_equal(post_c, post_p)

    def test_python_kernel_truncation_consumes_normals(self):
        # zero scales must advance the jump part only, yet keep the same
        # number of draws so coupled schemes stay aligned
        seg, normals, marks, has, ends = self._inputs()
        pre = np.empty(seg.size)
        post = np.empty(seg.size)
        out = _kernels_py.evolve_path(_kernels_py.KIND_SINE, 2.0, 0.5, 0.7,
                                      seg, normals, marks, has, ends, 0.0, 0.0,
                                      False, pre, post)
        jumps_only = 0.7
        for m in marks[has.astype(bool)]:
            jumps_only += (2.0 + 0.5 * math.sin(jumps_only)) / m
        assert out == pytest.approx(jumps_only)
