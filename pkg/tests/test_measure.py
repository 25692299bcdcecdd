"""Quadrature against closed forms, bands, and the hypothesis checker.

The truncated-stable family has power-law antiderivatives, so every
substitution coefficient has an exact value; the quadrature paths never see
those closed forms and must reproduce them to eight digits.
"""

import math

import numpy as np
import pytest

from smalljumps.measure import (
    BandDecomposition,
    CheckGrid,
    CoefficientLattice,
    JumpCoefficient,
    LevyModel,
    QuadratureError,
    SectorParams,
    a_eps,
    b_eps,
    check_hypotheses,
    eta_p,
    small_jump_integral,
    substitution_scalars,
    transform_measure,
    truncated_stable,
)
from smalljumps.models import make_constant_model, make_sine_model

RHOS = (0.0, 0.3, 0.5, 0.9)
EPSES = (0.4, 0.2, 0.1, 0.05, 0.01)


def stable_moment(p, rho, eps):
    """int_(0,eps] z**p mu(dz) for mu = dz / z**(1+rho), exact."""
    return eps ** (p - rho) / (p - rho)


class TestClosedFormAgreement:
    def test_drift_coefficient_matches_power_law(self):
        for rho in RHOS:
            model = make_sine_model(rho=rho)
            sig = model.coeff.separable[0]
            for eps in EPSES:
                for x in (-1.3, 0.0, 2.0):
                    exact = float(sig(x)) * stable_moment(1.0, rho, eps)
                    got = b_eps(model, 0.0, x, eps)
                    assert got == pytest.approx(exact, rel=1e-8)

    def test_variance_coefficient_matches_power_law(self):
        for rho in RHOS:
            model = make_sine_model(rho=rho)
            sig = model.coeff.separable[0]
            for eps in EPSES:
                for x in (-1.3, 0.0, 2.0):
                    exact = float(sig(x)) ** 2 * stable_moment(2.0, rho, eps)
                    got = a_eps(model, 0.0, x, eps)
                    assert got == pytest.approx(exact, rel=1e-8)

    def test_eta_three_matches_envelope_moment(self):
        # on (0, 0.4] the upper envelope is sigma_bar * z, so the third
        # moment scale is sigma_bar**3 * eps**(3-rho) / (3-rho) exactly
        for rho in RHOS:
            model = make_sine_model(rho=rho)
            for eps in EPSES:
                exact = 2.5**3 * stable_moment(3.0, rho, eps)
                assert eta_p(model, 3.0, eps) == pytest.approx(exact, rel=1e-8)

    def test_unit_scale_eta_values(self, unit_model):
        assert eta_p(unit_model, 3.0, 0.1) == pytest.approx(1.2649110640673518e-3, rel=1e-10)
        assert eta_p(unit_model, 1.0, 0.1) == pytest.approx(0.6324555320336759, rel=1e-10)

    def test_substitution_scalars_match_bare_moments(self):
        for rho in RHOS:
            model = make_constant_model(rho=rho, scale=1.0)
            for eps in (0.4, 0.05):
                B, A = substitution_scalars(model, eps)
                assert B == pytest.approx(stable_moment(1.0, rho, eps), rel=1e-8)
                assert A == pytest.approx(stable_moment(2.0, rho, eps), rel=1e-8)


class TestSmallJumpIntegral:
    def test_logarithmic_integrand(self):
        # rho = 0 mass integral: int_eps^1 dz/z has no small-jump
        # singularity, but int_(0,eps] z**0.2 / z dz = eps**0.2 / 0.2 does
        val = small_jump_integral(lambda z: z ** (-0.8), 0.3)
        assert val == pytest.approx(0.3**0.2 / 0.2, rel=1e-9)

    def test_divergent_integral_raises(self):
        with pytest.raises(QuadratureError):
            small_jump_integral(lambda z: 1.0 / z, 0.5)

    def test_eps_validation(self):
        with pytest.raises(ValueError):
            small_jump_integral(lambda z: z, 1.5)


class TestTransformedMeasure:
    def test_density_change_of_variables(self, sine_model):
        v = np.geomspace(1.0, 50.0, 7)
        direct = sine_model.nu.density(v)
        assert np.allclose(direct, v ** (0.5 - 1.0), rtol=1e-12)

    def test_mass_closed_form(self, sine_model):
        assert sine_model.nu.mass(2.0, 5.0) == pytest.approx(
            (5.0**0.5 - 2.0**0.5) / 0.5, rel=1e-12)

    def test_band_inverse_cdf_is_quantile(self, sine_model):
        u = np.linspace(0.0, 1.0, 33)
        v = sine_model.nu.band_inverse_cdf(3.0, 4.0, u)
        assert v[0] == pytest.approx(3.0)
        assert v[-1] == pytest.approx(4.0)
        assert np.all(np.diff(v) > 0)
        back = sine_model.nu.band_cdf(3.0, 4.0, v)
        assert np.allclose(back, u, atol=1e-12)

    def test_generic_density_falls_back_to_quadrature(self):
        mu = truncated_stable(0.5)
        untagged = LevyModel(
            mu=mu.__class__(density=mu.density, closed_form=None, rho=None),
            nu=None, coeff=make_sine_model(0.5).coeff, sector=SectorParams())
        untagged.nu = transform_measure(untagged.mu)
        tagged = make_sine_model(0.5)
        assert untagged.nu.mass(2.0, 5.0) == pytest.approx(
            tagged.nu.mass(2.0, 5.0), rel=1e-9)
        u = np.linspace(0.05, 0.95, 9)
        assert np.allclose(untagged.nu.band_inverse_cdf(2.0, 3.0, u),
                           tagged.nu.band_inverse_cdf(2.0, 3.0, u), rtol=1e-5)


class TestBandDecomposition:
    def test_unit_bands_cover_range(self, sine_model):
        bands = BandDecomposition.build(sine_model, 0.1)
        assert bands.M == pytest.approx(10.0)
        assert [b.index for b in bands] == list(range(1, 10))
        assert all(b.width == pytest.approx(1.0) for b in bands)
        assert bands.total_mass() == pytest.approx(sine_model.nu.mass(1.0, 10.0), rel=1e-12)

    def test_partial_cell_at_fractional_cut(self, sine_model):
        bands = BandDecomposition.build(sine_model, 1.0 / 3.5)
        last = bands.bands[-1]
        assert last.hi == pytest.approx(3.5)
        assert last.width == pytest.approx(0.5)
        # compressed cell may cap the splitting weight, never raise it
        assert last.eps_k <= float(sine_model.sector.eps_k(last.index)) + 1e-15

    def test_extension_decomposition_disjoint(self, sine_model):
        coarse = BandDecomposition.build(sine_model, 0.2)
        ext = BandDecomposition.build(sine_model, 0.05, lo=coarse.M)
        assert ext.lo == pytest.approx(coarse.M)
        assert ext.bands[0].lo == pytest.approx(coarse.M)
        assert ext.bands[-1].hi == pytest.approx(20.0)


class TestCoefficientLattice:
    def test_interpolation_matches_quadrature(self, sine_model):
        lat = CoefficientLattice(sine_model, 0.2, 1.0, (-2.0, 2.0), n_s=5, n_x=33)
        for s, x in ((0.0, -1.7), (0.5, 0.3), (1.0, 1.9)):
            assert lat.drift(s, x) == pytest.approx(b_eps(sine_model, s, x, 0.2), rel=1e-5)
            assert lat.variance(s, x) == pytest.approx(a_eps(sine_model, s, x, 0.2), rel=1e-5)

    def test_outside_box_falls_back_exactly(self, sine_model):
        lat = CoefficientLattice(sine_model, 0.2, 1.0, (-2.0, 2.0), n_s=5, n_x=33)
        assert lat.drift(0.5, 7.0) == b_eps(sine_model, 0.5, 7.0, 0.2)


class TestHypothesisChecks:
    def test_sine_model_passes(self, sine_model):
        report = check_hypotheses(sine_model)
        assert report.passed, report.summary()

    def test_constant_model_passes(self, unit_model):
        assert check_hypotheses(unit_model).passed

    def test_undersized_envelope_fails(self, sine_model):
        coeff = sine_model.coeff

        def tiny_bar(v):
            return 0.1 * coeff.envelope_bar(v)

        broken = LevyModel(
            mu=sine_model.mu, nu=sine_model.nu,
            coeff=JumpCoefficient(
                c=coeff.c, partials=coeff.partials, envelope_bar=tiny_bar,
                envelope_under=coeff.envelope_under, separable=coeff.separable),
            sector=sine_model.sector)
        report = check_hypotheses(broken)
        assert not report.passed
        failed = {r.condition for r in report if not r.passed}
        assert "envelope dominates derivatives" in failed

    def test_report_rows_are_serialisable(self, sine_model):
        rows = check_hypotheses(sine_model, grid=CheckGrid(
            x_points=np.linspace(-2, 2, 9), v_points=np.geomspace(1, 50, 40))).rows()
        assert all(set(r) == {"condition", "worst_margin", "pass", "detail"} for r in rows)


class TestSectorParams:
    def test_weak_weights_and_threshold(self):
        s = SectorParams(variant="weak", eps_star=0.5, alpha=0.85)
        assert float(s.eps_k(3)) == pytest.approx(0.125)
        assert s.weak_time_threshold(2.0) == pytest.approx(4.0 * 2.0 * 0.85 / 0.5)

    def test_strong_weights(self):
        s = SectorParams()
        assert float(s.eps_k(0)) == pytest.approx(0.5)
        k = np.arange(1, 5)
        assert np.all(np.diff(s.eps_k(k)) < 0)

    def test_invalid_exponent_ordering_rejected(self):
        with pytest.raises(ValueError):
            SectorParams(variant="strong", alpha=0.6, alpha1=0.9, alpha2=0.95)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            SectorParams(variant="medium")
