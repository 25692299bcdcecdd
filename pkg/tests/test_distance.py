"""Distance estimators: certified family, generator gap, KDE TV, rate fits."""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from smalljumps.distance import (
    RateFit,
    TestFunction,
    TestFunctionFamily,
    distance_curve,
    generator_gap,
    rate_fit,
    smooth_distance,
    tv_kde,
)
from smalljumps.measure import eta_p
from smalljumps.models import make_constant_model
from smalljumps.simulate import PathConfig

# keep pytest from collecting the imported library classes
TestFunction.__test__ = False
TestFunctionFamily.__test__ = False


class TestFamilyCertification:
    def test_default_family_verifies(self):
        family = TestFunctionFamily.default()
        worst = family.verify()
        assert len(worst) == len(family) == 38
        assert len({f.name for f in family}) == len(family)
        # the window contains every member's critical points, so the dense
        # sup should nearly attain each stored bound
        assert min(worst.values()) > 0.95
        assert all(f.norm3 <= 1.0 for f in family)

    def test_understated_bound_is_caught(self):
        good = TestFunctionFamily.default().members[0]
        b = good.bounds
        lying = TestFunction(name="bad", phi=good.phi, dphi=good.dphi,
                             d2=good.d2, d3=good.d3,
                             bounds=(b[0] * 0.5, b[1], b[2], b[3]))
        with pytest.raises(ValueError, match="exceeds the stored bound"):
            TestFunctionFamily(members=(lying,)).verify()


class TestGeneratorGap:
    def test_single_point_against_adaptive_quadrature(self):
        # independent evaluation of the same remainder integral with
        # scipy's adaptive rule on the raw integrand
        model = make_constant_model(rho=0.5, scale=1.2)
        f = next(m for m in TestFunctionFamily.default() if m.name == "sin_b1")
        x, eps = 0.7, 0.3

        def integrand(z):
            c = 1.2 * z
            return float(f.phi(x + c) - f.phi(x) - c * f.dphi(x)
                         - 0.5 * c * c * f.d2(x)) * z ** -1.5

        expected, err = quad(integrand, 0.0, eps, epsabs=1e-14, epsrel=1e-12)
        assert err < 1e-12
        gap, _ = generator_gap(model, f, eps, np.array([x]))
        assert gap == pytest.approx(abs(expected), rel=1e-8)

    def test_gap_below_remainder_bound(self, sine_model):
        xg = np.linspace(-3.0, 5.0, 41)
        family = TestFunctionFamily.default()
        for f in (family.members[0], family.members[17], family.members[-1]):
            for eps in (0.4, 0.1, 0.01):
                gap, bound = generator_gap(sine_model, f, eps, xg)
                assert gap <= bound
                assert bound == pytest.approx(
                    f.norm3 * eta_p(sine_model, 3.0, eps) / 6.0, rel=1e-12)

    def test_halving_eps_scales_at_third_order(self):
        model = make_constant_model(rho=0.5, scale=1.0)
        f = next(m for m in TestFunctionFamily.default() if m.name == "cos_b1")
        xg = np.linspace(-2.0, 2.0, 21)
        g1, _ = generator_gap(model, f, 0.1, xg)
        g2, _ = generator_gap(model, f, 0.05, xg)
        assert g2 / g1 == pytest.approx(2.0 ** -2.5, rel=0.15)

    def test_validation(self, sine_model):
        f = TestFunctionFamily.default().members[0]
        with pytest.raises(ValueError, match="eps out of"):
            generator_gap(sine_model, f, 1.5, np.array([0.0]))
        with pytest.raises(ValueError, match="nonempty"):
            generator_gap(sine_model, f, 0.1, np.array([]))


class TestSmoothDistance:
    def test_equal_levels_give_exact_zero(self, sine_model):
        cfg = PathConfig(x0=1.0, eps=0.2, n_steps=16, seed=3)
        res = smooth_distance(sine_model, None, (cfg, cfg),
                              TestFunctionFamily.default(), 64, n_replicas=2)
        assert res.proxy == 0.0
        assert all(e.estimate == 0.0 for e in res.estimates)

    def test_detects_a_real_gap(self, sine_model):
        cfg_a = PathConfig(x0=1.0, eps=0.4, n_steps=64, seed=0)
        cfg_b = replace(cfg_a, eps=0.05)
        res = smooth_distance(sine_model, None, (cfg_a, cfg_b),
                              TestFunctionFamily.default(), 3000, n_replicas=2)
        assert res.proxy > 4.0 * res.proxy_stderr > 0.0

    def test_pair_validation(self, sine_model):
        fam = TestFunctionFamily.default()
        cfg = PathConfig(eps=0.2, n_steps=16, seed=1)
        with pytest.raises(ValueError, match="at least as fine"):
            smooth_distance(sine_model, None, (cfg, replace(cfg, eps=0.4)), fam, 16)
        with pytest.raises(ValueError, match="disagrees on x0"):
            smooth_distance(sine_model, None,
                            (cfg, replace(cfg, eps=0.1, x0=2.0)), fam, 16)
        with pytest.raises(ValueError, match="at least two paths"):
            smooth_distance(sine_model, None, (cfg, replace(cfg, eps=0.1)), fam, 1)


class TestTVKde:
    def test_gaussian_shift_calibration(self):
        gen = np.random.default_rng(42)
        a = gen.normal(0.0, 1.0, 100_000)
        b = gen.normal(0.5, 1.0, 100_000)
        truth = math.erf(0.25 / math.sqrt(2.0))
        assert truth == pytest.approx(0.19741, abs=1e-5)
        est = tv_kde(a, b)
        assert est.value == pytest.approx(truth, abs=0.02)
        assert 0.0 <= est.stderr < est.value

    def test_identical_samples_give_zero(self):
        x = np.random.default_rng(1).normal(size=2000)
        assert tv_kde(x, x).value == 0.0

    def test_symmetry(self):
        gen = np.random.default_rng(5)
        a, b = gen.normal(size=3000), gen.normal(1.0, 2.0, 3000)
        assert tv_kde(a, b).value == tv_kde(b, a).value

    def test_independent_null_is_small(self):
        gen = np.random.default_rng(9)
        est = tv_kde(gen.normal(size=20_000), gen.normal(size=20_000))
        assert est.value < 0.03

    def test_validation(self):
        gen = np.random.default_rng(0)
        x = gen.normal(size=100)
        with pytest.raises(ValueError, match="at least 16"):
            tv_kde(x[:5], x)
        with pytest.raises(ValueError, match="non-finite"):
            tv_kde(np.r_[x, np.nan], x)
        with pytest.raises(ValueError, match="grid_points"):
            tv_kde(x, x, grid_points=32)
        with pytest.raises(ValueError, match="zero dispersion"):
            tv_kde(np.ones(100), x)


class TestRateFit:
    def test_exact_power_law(self):
        pts = [(e, 3.0 * e ** 2.5, 1e-9) for e in (0.4, 0.2, 0.1, 0.05)]
        fit = rate_fit(pts)
        assert fit.ok
        assert fit.slope == pytest.approx(2.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
        assert fit.n_used == 4 and fit.excluded == ()

    def test_noisy_point_excluded(self):
        pts = [(0.4, 1.0, 0.01), (0.2, 0.5, 0.01), (0.1, 0.25, 0.01),
               (0.05, 0.001, 0.9)]
        fit = rate_fit(pts)
        assert fit.ok and fit.n_used == 3
        assert fit.excluded == (0.05,)
        assert fit.slope == pytest.approx(1.0, abs=1e-9)

    def test_nonpositive_dropped(self):
        pts = [(0.4, 1.0, 0.01), (0.2, 0.5, 0.01), (0.1, 0.25, 0.01),
               (0.05, -0.002, 0.01)]
        fit = rate_fit(pts)
        assert fit.n_used == 3 and fit.excluded == (0.05,)

    def test_too_few_points_refused(self):
        fit = rate_fit([(0.4, 1.0, 0.01), (0.2, 0.5, 0.01)])
        assert not fit.ok
        assert fit.flag == "insufficient usable points"
        assert math.isnan(fit.slope)

    def test_strict_mode_refuses_noise(self):
        pts = [(0.4, 1.0, 0.01), (0.2, 0.5, 0.3), (0.1, 0.25, 0.01)]
        fit = rate_fit(pts, exclude_noisy=False)
        assert fit.flag == "noise-dominated estimates"


class TestDistanceCurve:
    def test_small_curve_structure(self, sine_model):
        cfg = PathConfig(x0=1.0, T=1.0, eps=0.4, n_steps=16, seed=0)
        rep = distance_curve(sine_model, cfg, [0.4, 0.2], N=400,
                             eps_ref=0.025, n_replicas=2)
        assert [r.eps for r in rep.rows] == [0.4, 0.2]
        for r in rep.rows:
            assert r.eta3 == pytest.approx(eta_p(sine_model, 3.0, r.eps), rel=1e-12)
            assert r.d3_stderr > 0.0 and r.tv >= 0.0
        assert set(rep.fits) == {"gaussian", "truncation", "tv"}
        assert rep.metadata["eps_ref"] == 0.025
        rows = rep.as_rows()
        assert len(rows) == 2 and rows[0]["eps"] == 0.4

    def test_grid_validation(self, sine_model):
        cfg = PathConfig(eps=0.4, n_steps=16, seed=0)
        with pytest.raises(ValueError, match="nonempty"):
            distance_curve(sine_model, cfg, [], N=100)
        with pytest.raises(ValueError, match="finer than every"):
            distance_curve(sine_model, cfg, [0.4, 0.2], N=100, eps_ref=0.3)
