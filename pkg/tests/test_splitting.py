"""Jump splitting: bump geometry, split law identity, residual rejection.

The bump mass constant was frozen from a 50-digit quadrature of
``0.5 + 0.5 * int_0^1 exp(1 - 1/(1 - u^2)) du`` run outside the package.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from smalljumps.measure import BandDecomposition
from smalljumps.splitting import (
    BUMP,
    MinorizationError,
    SplitSampler,
    draw_band_jumps,
    m_psi,
    psi_eval,
    residual_density,
    sample_split,
    split_probability,
    splitting_report,
)

M_PSI = 0.8017250806094686


class TestBumpFunction:
    def test_plateau_support_and_symmetry(self):
        assert psi_eval(0.0) == 1.0
        assert psi_eval(0.25) == 1.0
        assert psi_eval(-0.25) == 1.0
        assert psi_eval(0.5) == 0.0
        assert psi_eval(-0.7) == 0.0
        y = np.linspace(-0.6, 0.6, 241)
        np.testing.assert_allclose(BUMP(y), BUMP(-y), rtol=0, atol=0)
        trans = BUMP(np.linspace(0.26, 0.49, 50))
        assert np.all((trans > 0.0) & (trans < 1.0))
        assert np.all(np.diff(trans) < 0.0)

    def test_transition_value(self):
        # at y = 3/8 the exponent is 1 - 1/(1 - (1/2)^2) = -1/3
        assert psi_eval(0.375) == pytest.approx(math.exp(-1.0 / 3.0), rel=1e-14)

    def test_mass_constant(self):
        assert m_psi() == pytest.approx(M_PSI, rel=1e-11)
        assert 0.5 < m_psi() < 1.0

    def test_log_derivative_matches_finite_difference(self):
        y = np.linspace(2.80, 2.97, 9)  # transition region of band k=2
        h = 1e-7
        num = (np.log(BUMP.psi_k(2, y + h)) - np.log(BUMP.psi_k(2, y - h))) / (2 * h)
        np.testing.assert_allclose(BUMP.theta_k(2, y), num, rtol=1e-5)
        assert BUMP.theta_k(2, np.array([2.5]))[0] == 0.0

    def test_inverse_cdf_symmetric_and_monotone(self):
        u = np.linspace(0.001, 0.999, 200)
        y = BUMP.inverse_cdf(u)
        assert np.all(np.diff(y) > 0.0)
        assert abs(BUMP.inverse_cdf(0.5)) < 1e-12
        np.testing.assert_allclose(y, -BUMP.inverse_cdf(1.0 - u), atol=1e-9)

    def test_inverse_cdf_roundtrip(self):
        # push quantiles back through the numeric CDF of psi / m(psi)
        u = np.array([0.1, 0.3, 0.7, 0.9])
        y = BUMP.inverse_cdf(u)
        grid = np.linspace(-0.5, 0.5, 20001)
        dens = BUMP(grid)
        cdf = np.concatenate([[0.0], np.cumsum((dens[:-1] + dens[1:]) * 0.5 * np.diff(grid))])
        cdf /= cdf[-1]
        np.testing.assert_allclose(np.interp(y, grid, cdf), u, atol=5e-6)


class TestSplitLaw:
    def test_split_probability_closed_form(self, sine_model):
        bands = BandDecomposition.build(sine_model, 0.25)
        for band in bands:
            assert split_probability(band) == pytest.approx(
                band.eps_k * band.width * M_PSI, rel=1e-11)
            assert 0.0 < split_probability(band) < 1.0

    def test_bump_draws_stay_on_their_cell(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.2))[1]
        sampler = SplitSampler.from_key(sine_model, band, seed=4)
        _, v, u, _ = sampler.draw(2000)
        assert np.all(np.abs(v - band.center) <= 0.5 * band.width)
        assert np.all((u >= band.lo) & (u < band.hi))

    def test_reassembled_mixture_matches_direct_draws(self, sine_model):
        # the default ks_tol targets 1e5 draws per side; at 4000 the null
        # fluctuation of the two-sample statistic is already near 0.03
        checks = splitting_report(sine_model, [1, 2, 3], n=4000, seed=0,
                                  ks_tol=0.04)
        assert [c.index for c in checks] == [1, 2, 3]
        assert all(c.ok for c in checks)

    def test_band_streams_do_not_interact(self, sine_model):
        # dropping band 2 must not change bands 1 and 3
        full = splitting_report(sine_model, [1, 2, 3], n=500, seed=0)
        part = splitting_report(sine_model, [1, 3], n=500, seed=0)
        assert full[0] == part[0]
        assert full[2] == part[1]

    def test_sampler_key_determinism(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.25))[0]
        a = SplitSampler.from_key(sine_model, band, seed=3).draw(50)
        b = SplitSampler.from_key(sine_model, band, seed=3).draw(50)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        c = SplitSampler.from_key(sine_model, band, seed=3, path_index=1).draw(50)
        assert not np.array_equal(a[3], c[3])

    def test_sample_split_reassembles(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.25))[0]
        sampler = SplitSampler.from_key(sine_model, band, seed=8)
        for _ in range(20):
            xi, v, u, z = sample_split(sampler)
            assert z == (v if xi == 1 else u)

    def test_split_frequency_uses_all_components(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.2))[0]
        xi, v, u, z = draw_band_jumps(
            sine_model, band, 5000,
            SplitSampler.from_key(sine_model, band, seed=1).gen_splits,
            SplitSampler.from_key(sine_model, band, seed=1).gen_marks)
        p = split_probability(band)
        assert abs(np.mean(xi) - p) < 4.0 * math.sqrt(p * (1 - p) / 5000)
        np.testing.assert_array_equal(z, np.where(xi == 1, v, u))


class TestResidual:
    def test_density_nonnegative_and_normalised(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.25))[2]
        sampler = SplitSampler.from_key(sine_model, band, seed=0)
        grid = np.linspace(band.lo, band.hi, 4001)
        dens = sampler.residual_density(grid)
        assert np.all(dens >= 0.0)
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=2e-4)
        assert residual_density(sampler, float(band.center)) >= 0.0

    def test_overweighted_cell_breaks_minorisation(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.25))[0]
        bad = replace(band, eps_k=1.2)
        sampler = SplitSampler(model=sine_model, band=bad,
                               gen_splits=np.random.default_rng(0),
                               gen_marks=np.random.default_rng(1))
        with pytest.raises(MinorizationError, match="residual density negative"):
            sampler.residual_density(np.linspace(bad.lo, bad.hi, 101))

    def test_saturated_split_probability_rejected(self, sine_model):
        band = list(BandDecomposition.build(sine_model, 0.25))[0]
        with pytest.raises(MinorizationError, match="split probability"):
            SplitSampler(model=sine_model, band=replace(band, eps_k=1.5),
                         gen_splits=np.random.default_rng(0),
                         gen_marks=np.random.default_rng(1))


class TestReportValidation:
    def test_rejects_bad_indices(self, sine_model):
        with pytest.raises(ValueError, match="band indices"):
            splitting_report(sine_model, [], n=500)
        with pytest.raises(ValueError, match="band indices"):
            splitting_report(sine_model, [0, 1], n=500)

    def test_rejects_tiny_samples(self, sine_model):
        with pytest.raises(ValueError, match="at least 100"):
            splitting_report(sine_model, [1], n=50)
