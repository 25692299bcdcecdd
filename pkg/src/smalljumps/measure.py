"""Jump measures, their polar transform, and Gaussian-substitution coefficients.

The driving noise is a Poisson random measure on ``(0, 1]`` whose intensity
``mu`` integrates ``z**2`` but may have infinite mass at the origin (e.g. the
truncated stable family ``mu(dz) = dz / z**(1+rho)`` with ``rho in [0, 1)``).
The change of variable ``v = 1/z`` maps it to a measure ``nu`` on ``[1, oo)``
with a locally bounded density; jumps with ``v < 1/eps`` are "big" and get
simulated exactly, while the infinite-activity remainder ``v >= 1/eps`` is
replaced by its compensator drift plus a Brownian integral with matching
second moment.  This module provides:

* measure types and the transform between the two coordinates,
* the substitution coefficients ``b_eps`` (drift) and ``a_eps`` (squared
  diffusion) together with the moment scale ``eta_p``,
* the band decomposition of ``[1, 1/eps)`` used by the splitting sampler,
* numerical verification of the standing assumptions (envelope bounds,
  non-degeneracy from below, band minorisation, sector conditions).

All integrals against ``mu`` near the origin go through the substitution
``z = exp(-u)``, which turns the power singularity into an exponential tail
that adaptive quadrature handles at tight relative tolerance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import IntegrationWarning, quad

__all__ = [
    "QuadratureError",
    "LevyMeasure",
    "TransformedMeasure",
    "transform_measure",
    "truncated_stable",
    "JumpCoefficient",
    "SectorParams",
    "LevyModel",
    "Band",
    "BandDecomposition",
    "eta_p",
    "b_eps",
    "a_eps",
    "substitution_scalars",
    "frozen_variance_scalar",
    "CoefficientLattice",
    "CheckGrid",
    "HypothesisReport",
    "check_hypotheses",
]

#: Relative tolerance for all adaptive quadrature in this module.  The
#: closed-form cross-checks in the test suite require eight digits, so we
#: integrate two digits tighter.
QUAD_RTOL = 1e-10


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature fails to converge.

    Non-convergence of a small-jump integral is a modelling signal, not a
    numerical nuisance: it usually means the requested moment does not exist
    for the supplied measure, so callers should not silence this.
    """


def _quad(f: Callable[[float], float], a: float, b: float,
          rtol: float = QUAD_RTOL, points: Sequence[float] | None = None) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, _ = quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=300, points=points)
        except IntegrationWarning as exc:
            raise QuadratureError(f"integral over [{a}, {b}] did not converge: {exc}") from exc
    return val


def small_jump_integral(f: Callable[[float], float], eps: float, rtol: float = QUAD_RTOL) -> float:
    """Integrate ``f`` over ``(0, eps]`` by geometric panel summation.

    ``f`` must absorb the measure density.  Panels ``[eps 2^-(j+1), eps 2^-j]``
    are integrated adaptively and summed; once three consecutive panel
    ratios agree the remainder is summed in closed form from that ratio.
    Integrands behaving like a power law near zero (every measure moment in
    this package) hit the geometric regime after a handful of panels, far
    from the underflow region, and the extrapolated tail is then exact.
    Persistently growing panels mean the integral diverges and raise
    ``QuadratureError``.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    panel_rtol = max(rtol * 0.1, 1e-13)
    total = 0.0
    hi = eps
    prev = 0.0
    ratio_prev = None
    agree = 0
    for _ in range(500):
        lo = 0.5 * hi
        panel = _quad(f, lo, hi, rtol=panel_rtol)
        total += panel
        if panel == 0.0:
            return total
        if prev != 0.0:
            ratio = panel / prev
            if ratio_prev is not None and abs(ratio - ratio_prev) <= 5e-10 * abs(ratio):
                agree += 1
            else:
                agree = 0
            ratio_prev = ratio
            if 0.0 < abs(ratio) < 1.0:
                tail = panel * ratio / (1.0 - ratio)
                if agree >= 2 or abs(tail) <= 0.5 * rtol * abs(total):
                    return total + tail
        prev = panel
        hi = lo
    raise QuadratureError(f"panel sum over (0, {eps}] did not reach a geometric "
                          "tail; the integral likely diverges")


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class LevyMeasure:
    """Jump intensity on ``(0, 1]`` given by a density against Lebesgue.

    ``closed_form`` tags densities with known antiderivatives ("stable" for
    ``z**(-1-rho)``); the tag is used only by samplers that want an exact
    inverse CDF and by tests, never by the quadrature routines, so generic
    densities are first-class citizens.
    """

    density: Callable[[np.ndarray], np.ndarray]
    closed_form: str | None = None
    rho: float | None = None

    def integral(self, f: Callable[[float], float], eps: float = 1.0) -> float:
        """``int_(0, eps] f(z) mu(dz)`` by singular quadrature."""
        dens = self.density
        return small_jump_integral(lambda z: f(z) * float(dens(z)), eps)

    def mass(self, eps: float) -> float:
        """Total intensity of jumps larger than ``eps``: ``mu((eps, 1])``."""
        dens = self.density
        return _quad(lambda z: float(dens(z)), eps, 1.0)


def truncated_stable(rho: float) -> LevyMeasure:
    """The family ``mu(dz) = dz / z**(1+rho)`` on ``(0, 1]``, ``rho in [0, 1)``.

    ``rho = 0`` gives the logarithmic (Gamma-like) case; larger ``rho`` means
    heavier small-jump activity.  ``rho >= 1`` would break the drift
    integrability that the substitution scheme relies on.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")

    def density(z):
        return np.asarray(z, dtype=float) ** (-1.0 - rho)

    return LevyMeasure(density=density, closed_form="stable", rho=rho)


class TransformedMeasure:
    """Image of a small-jump measure under ``v = 1/z``; lives on ``[1, oo)``.

    The density follows from the change of variables:
    ``nu(v) = mu_density(1/v) / v**2``.  For the stable family this is
    ``v**(rho-1)``, which is bounded on every band ``[k, k+1)``.
    Interval masses and band-conditional inverse CDFs are exact for tagged
    densities and use cached grid inversion otherwise.
    """

    _GRID_N = 4097

    def __init__(self, origin: LevyMeasure):
        self.origin = origin
        self._cdf_cache: dict[tuple[float, float], tuple[np.ndarray, np.ndarray]] = {}

    @property
    def rho(self) -> float | None:
        return self.origin.rho

    def density(self, v):
        v = np.asarray(v, dtype=float)
        return self.origin.density(1.0 / v) / v**2

    def mass(self, lo: float, hi: float) -> float:
        """``nu([lo, hi))`` for ``1 <= lo < hi``."""
        if self.origin.closed_form == "stable":
            rho = self.origin.rho
            if rho == 0.0:
                return math.log(hi / lo)
            return (hi**rho - lo**rho) / rho
        return _quad(lambda v: float(self.density(v)), lo, hi)

    def tail_integral(self, g: Callable[[float], float], M: float) -> float:
        """``int_[M, oo) g(v) nu(dv)`` computed on the ``z = 1/v`` side.

        The image-measure identity needs no Jacobian: integrating ``g(1/z)``
        against ``mu`` over ``(0, 1/M]`` is the same integral.
        """
        dens = self.origin.density
        return small_jump_integral(lambda z: g(1.0 / z) * float(dens(z)), 1.0 / M)

    def interval_masses(self, edges: np.ndarray) -> np.ndarray:
        """Masses of consecutive intervals ``[edges[j], edges[j+1])``, vectorised."""
        edges = np.asarray(edges, dtype=float)
        if self.origin.closed_form == "stable":
            rho = self.origin.rho
            anti = np.log(edges) if rho == 0.0 else edges**rho / rho
            return np.diff(anti)
        # composite Simpson per interval is plenty below the quadrature
        # tolerance for the smooth densities handled here
        mid = 0.5 * (edges[:-1] + edges[1:])
        h = np.diff(edges)
        fa = self.density(edges[:-1])
        fm = self.density(mid)
        fb = self.density(edges[1:])
        return h / 6.0 * (fa + 4.0 * fm + fb)

    def band_inverse_cdf(self, lo: float, hi: float, u: np.ndarray) -> np.ndarray:
        """Quantile function of ``nu`` conditioned on ``[lo, hi)``."""
        u = np.asarray(u, dtype=float)
        if self.origin.closed_form == "stable":
            rho = self.origin.rho
            if rho == 0.0:
                return lo * (hi / lo) ** u
            plo, phi = lo**rho, hi**rho
            return (plo + u * (phi - plo)) ** (1.0 / rho)
        grid, cdf = self._grid_cdf(lo, hi)
        return np.interp(u, cdf, grid)

    def cells_inverse_cdf(self, lo: np.ndarray, hi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Elementwise quantiles: entry ``i`` is the ``u[i]``-quantile of
        ``nu`` conditioned on ``[lo[i], hi[i])``.

        Closed form for tagged densities; otherwise loops over the distinct
        cells present (the slow path for generic measures).
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.origin.closed_form == "stable":
            rho = self.origin.rho
            if rho == 0.0:
                return lo * (hi / lo) ** u
            plo, phi = lo**rho, hi**rho
            return (plo + u * (phi - plo)) ** (1.0 / rho)
        out = np.empty_like(u)
        cells = np.stack([lo, hi], axis=-1)
        uniq, inv = np.unique(cells, axis=0, return_inverse=True)
        for i, (a, b) in enumerate(uniq):
            sel = inv == i
            out[sel] = self.band_inverse_cdf(float(a), float(b), u[sel])
        return out

    def band_cdf(self, lo: float, hi: float, v: np.ndarray) -> np.ndarray:
        """CDF of ``nu`` conditioned on ``[lo, hi)`` (used by law tests)."""
        v = np.asarray(v, dtype=float)
        if self.origin.closed_form == "stable":
            rho = self.origin.rho
            if rho == 0.0:
                return np.log(v / lo) / math.log(hi / lo)
            plo, phi = lo**rho, hi**rho
            return (v**rho - plo) / (phi - plo)
        grid, cdf = self._grid_cdf(lo, hi)
        return np.interp(v, grid, cdf)

    def _grid_cdf(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        key = (round(lo, 12), round(hi, 12))
        hit = self._cdf_cache.get(key)
        if hit is not None:
            return hit
        grid = np.linspace(lo, hi, self._GRID_N)
        dens = self.density(grid)
        cdf = np.concatenate([[0.0], np.cumsum((dens[:-1] + dens[1:]) * 0.5 * np.diff(grid))])
        cdf /= cdf[-1]
        self._cdf_cache[key] = (grid, cdf)
        return grid, cdf


def transform_measure(mu: LevyMeasure) -> TransformedMeasure:
    """Push ``mu`` forward under ``v = 1/z``."""
    return TransformedMeasure(mu)


# ---------------------------------------------------------------------------
# coefficients and models


@dataclass
class JumpCoefficient:
    """Jump amplitude ``c(s, z, x)`` with derivatives and dominating envelopes.

    ``c`` acts on the original small-jump coordinate ``z in (0, 1]``; the
    transformed amplitude ``c~(s, v, x) = c(s, 1/v, x)`` is derived.  The
    ``partials`` table maps ``(order_x, order_z)`` to callables with the same
    signature as ``c``; order (0, 0) is implied.  Envelopes live on the
    transformed axis ``v >= 1``:

    ``envelope_bar``
        dominates ``|c~|`` and every supplied partial of it, decreasing in
        ``v``, with all moments against ``nu`` finite;
    ``envelope_under``
        lower-bounds both ``|dv c~|**2`` and ``|c~|**2`` (non-degeneracy);
    ``envelope_breve``
        dominates ``|dx c~ / (1 + dx c~)|``; defaults to ``envelope_bar``.

    ``separable = (sigma, sigma', sigma'', sigma''')`` marks the product form
    ``c(s, z, x) = sigma(x) * z``, which unlocks closed scalar caches in the
    simulator; leave ``None`` for general coefficients.
    """

    c: Callable[[float, np.ndarray, float], np.ndarray]
    partials: dict[tuple[int, int], Callable] = field(default_factory=dict)
    envelope_bar: Callable[[np.ndarray], np.ndarray] | None = None
    envelope_under: Callable[[np.ndarray], np.ndarray] | None = None
    envelope_breve: Callable[[np.ndarray], np.ndarray] | None = None
    q_star: int = 3
    separable: tuple[Callable, ...] | None = None

    def breve(self, v):
        fn = self.envelope_breve if self.envelope_breve is not None else self.envelope_bar
        return fn(v)

    # -- transformed-coordinate accessors ----------------------------------

    def tilde_c(self, s, v, x):
        v = np.asarray(v, dtype=float)
        return self.c(s, 1.0 / v, x)

    def dx_tilde_c(self, s, v, x):
        v = np.asarray(v, dtype=float)
        return self.partials[(1, 0)](s, 1.0 / v, x)

    def dv_tilde_c(self, s, v, x):
        """d/dv of ``c(s, 1/v, x)`` by the chain rule."""
        v = np.asarray(v, dtype=float)
        return -self.partials[(0, 1)](s, 1.0 / v, x) / v**2

    def tilde_partial(self, order_x: int, order_v: int):
        """Mixed partial of the transformed amplitude, or ``None`` if the
        required ``z``-derivatives were not supplied.

        ``v``-orders up to 2 are assembled from the chain rule; the separable
        form supplies all orders in closed form (``c~ = sigma(x) / v``).
        """
        if self.separable is not None:
            if order_x >= len(self.separable):
                return None
            sig = self.separable[order_x]
            sign = (-1.0) ** order_v
            fac = math.factorial(order_v)

            def sep(s, v, x, sig=sig, sign=sign, fac=fac, q=order_v):
                v = np.asarray(v, dtype=float)
                return sign * fac * sig(x) / v ** (1 + q)

            return sep
        if order_v == 0:
            fn = self.c if order_x == 0 else self.partials.get((order_x, 0))
            if fn is None:
                return None
            return lambda s, v, x, fn=fn: fn(s, 1.0 / np.asarray(v, dtype=float), x)
        if order_v == 1:
            fn = self.partials.get((order_x, 1))
            if fn is None:
                return None
            return lambda s, v, x, fn=fn: -fn(s, 1.0 / np.asarray(v, dtype=float), x) / np.asarray(v, dtype=float) ** 2
        if order_v == 2:
            f1 = self.partials.get((order_x, 1))
            f2 = self.partials.get((order_x, 2))
            if f1 is None or f2 is None:
                return None

            def second(s, v, x, f1=f1, f2=f2):
                v = np.asarray(v, dtype=float)
                z = 1.0 / v
                return 2.0 * f1(s, z, x) / v**3 + f2(s, z, x) / v**4

            return second
        return None


@dataclass(frozen=True)
class SectorParams:
    """Parameters of the band-splitting sector conditions.

    ``variant`` selects which family of splitting weights the decomposition
    uses and which growth regime the non-degeneracy analysis assumes:

    * ``"strong"``: weights ``eps_k = eps_star / (k+1)**(1-alpha)`` with
      ``0 < alpha <= alpha1``; the lower envelope must eventually dominate
      ``exp(-v**alpha2)`` with ``alpha1 >= alpha0 > alpha2 > 0``.  Inverse
      moments of the jump covariance then hold for every order.
    * ``"weak"``: weights ``eps_k = eps_star / (k+1)``; the lower envelope
      must dominate ``v**(-alpha)``.  Inverse moments of order ``p`` are
      only guaranteed for ``t > 4 * p * alpha / eps_star``.

    ``alpha0`` is the moment-weight exponent used in the strong-variant
    integrability check; by default it equals ``alpha``.
    """

    variant: str = "strong"
    eps_star: float = 0.5
    alpha: float = 0.85
    alpha1: float = 0.85
    alpha2: float = 0.7
    alpha0: float | None = None

    def __post_init__(self):
        if self.variant not in ("strong", "weak"):
            raise ValueError(f"unknown sector variant {self.variant!r}")
        if self.variant == "strong":
            if not 0.0 < self.alpha <= self.alpha1:
                raise ValueError("strong variant needs 0 < alpha <= alpha1")
            a0 = self.alpha if self.alpha0 is None else self.alpha0
            if not self.alpha1 >= a0 > self.alpha2 > 0.0:
                raise ValueError("strong variant needs alpha1 >= alpha0 > alpha2 > 0")

    @property
    def moment_exponent(self) -> float:
        return self.alpha if self.alpha0 is None else self.alpha0

    def eps_k(self, k):
        """Splitting weight of band ``[k, k+1)``; vectorised in ``k``."""
        k = np.asarray(k, dtype=float)
        if self.variant == "strong":
            return self.eps_star / (k + 1.0) ** (1.0 - self.alpha)
        return self.eps_star / (k + 1.0)

    def weak_time_threshold(self, p: float) -> float:
        """Horizon below which weak-variant inverse moments of order ``p``
        are not guaranteed."""
        return 4.0 * p * self.alpha / self.eps_star


@dataclass
class LevyModel:
    """A driving measure, its transform, the jump amplitude, and sector data.

    ``params`` is a plain round-trippable dict (the YAML form) kept so that
    worker processes and run manifests can rebuild the model from data.
    """

    mu: LevyMeasure
    nu: TransformedMeasure
    coeff: JumpCoefficient
    sector: SectorParams
    name: str = "model"
    params: dict | None = None

    def __post_init__(self):
        self._scalar_cache: dict = {}

    @property
    def rho(self) -> float | None:
        return self.mu.rho


# ---------------------------------------------------------------------------
# substitution coefficients


def eta_p(model: LevyModel, p: float, eps: float) -> float:
    """Moment scale of the removed small jumps: ``int_(0,eps] bar_c(1/z)**p mu(dz)``.

    This is the quantity that calibrates every convergence estimate: the
    generator distance is controlled by ``eta_3`` and the substitution drift
    and variance are ``eta_1``-like and ``eta_2``-like integrals of the
    amplitude itself.
    """
    if p < 1:
        raise ValueError(f"moment order must be >= 1, got {p}")
    bar = model.coeff.envelope_bar
    if bar is None:
        raise ValueError("model has no dominating envelope")
    dens = model.mu.density
    return small_jump_integral(lambda z: abs(float(bar(1.0 / z))) ** p * float(dens(z)), eps)


def b_eps(model: LevyModel, s: float, x: float, eps: float) -> float:
    """Compensator drift of the removed small jumps: ``int_(0,eps] c(s,z,x) mu(dz)``."""
    c = model.coeff.c
    dens = model.mu.density
    return small_jump_integral(lambda z: float(c(s, z, x)) * float(dens(z)), eps)


def a_eps(model: LevyModel, s: float, x: float, eps: float) -> float:
    """Squared diffusion of the substituted small jumps:
    ``int_(0,eps] c(s,z,x)**2 mu(dz)``."""
    c = model.coeff.c
    dens = model.mu.density
    return small_jump_integral(lambda z: float(c(s, z, x)) ** 2 * float(dens(z)), eps)


def substitution_scalars(model: LevyModel, eps: float) -> tuple[float, float]:
    """Scalar drift/variance factors ``(B, A)`` for separable amplitudes.

    For ``c = sigma(x) * z`` the substitution coefficients factor as
    ``b_eps = sigma(x) * B(eps)`` and ``a_eps = sigma(x)**2 * A(eps)`` with
    ``B = int z mu(dz)`` and ``A = int z**2 mu(dz)`` over ``(0, eps]``.
    Cached per model so the per-step simulator cost is two multiplies.
    """
    if model.coeff.separable is None:
        raise ValueError("substitution scalars need a separable amplitude")
    key = ("BA", eps)
    hit = model._scalar_cache.get(key)
    if hit is None:
        dens = model.mu.density
        B = small_jump_integral(lambda z: z * float(dens(z)), eps)
        A = small_jump_integral(lambda z: z * z * float(dens(z)), eps)
        hit = (B, A)
        model._scalar_cache[key] = hit
    return hit


def frozen_variance_scalar(model: LevyModel, M: float, h: float) -> float:
    """Variance factor of the frozen-coefficient scheme, separable form.

    The time-frozen scheme also freezes the jump coordinate on the lattice
    ``v_j = M + j*h``: its Gaussian variance uses ``sum_j v_j**-2 *
    nu([v_j, v_j+1))`` instead of ``int v**-2 nu(dv)``.  The frozen sum
    differs from the exact tail only through within-cell variation, which
    decays like ``h**2 * v**(rho-4)``, so the sum is evaluated on a finite
    window and closed with the exact tail integral beyond it.
    """
    if model.coeff.separable is None:
        raise ValueError("frozen variance scalar needs a separable amplitude")
    key = ("frozen", M, h)
    hit = model._scalar_cache.get(key)
    if hit is None:
        v_end = max(4.0 * M, 300.0)
        n_cells = int(math.ceil((v_end - M) / h))
        edges = M + h * np.arange(n_cells + 1)
        masses = model.nu.interval_masses(edges)
        head = float(np.sum(edges[:-1] ** -2.0 * masses))
        tail = model.nu.tail_integral(lambda v: v**-2.0, float(edges[-1]))
        hit = head + tail
        model._scalar_cache[key] = hit
    return hit


class CoefficientLattice:
    """Spline cache of ``(b_eps, a_eps)`` over ``[0, T] x [x_lo, x_hi]``.

    General amplitudes price every substitution coefficient as a singular
    quadrature; at simulation step counts that dominates the run time, so
    non-separable models evaluate the pair on a modest lattice once and
    interpolate with a bicubic spline.  Queries outside the box fall back to
    direct quadrature (correct, just slow), so the cache never changes
    results beyond spline tolerance.
    """

    def __init__(self, model: LevyModel, eps: float, T: float,
                 x_range: tuple[float, float], n_s: int = 64, n_x: int = 256):
        from scipy.interpolate import RectBivariateSpline

        self.model = model
        self.eps = eps
        self.T = T
        self.x_lo, self.x_hi = x_range
        s_grid = np.linspace(0.0, T, n_s)
        x_grid = np.linspace(self.x_lo, self.x_hi, n_x)
        bv = np.empty((n_s, n_x))
        av = np.empty((n_s, n_x))
        for i, s in enumerate(s_grid):
            for j, x in enumerate(x_grid):
                bv[i, j] = b_eps(model, s, x, eps)
                av[i, j] = a_eps(model, s, x, eps)
        self._b = RectBivariateSpline(s_grid, x_grid, bv, kx=3, ky=3)
        self._a = RectBivariateSpline(s_grid, x_grid, av, kx=3, ky=3)

    def drift(self, s: float, x: float) -> float:
        if 0.0 <= s <= self.T and self.x_lo <= x <= self.x_hi:
            return float(self._b(s, x)[0, 0])
        return b_eps(self.model, s, x, self.eps)

    def variance(self, s: float, x: float) -> float:
        if 0.0 <= s <= self.T and self.x_lo <= x <= self.x_hi:
            return max(float(self._a(s, x)[0, 0]), 0.0)
        return a_eps(self.model, s, x, self.eps)


# ---------------------------------------------------------------------------
# band decomposition


@dataclass(frozen=True)
class Band:
    """One splitting cell ``[lo, hi) subset [index, index+1)``.

    ``width`` is 1 for a full band; partial cells arise at a non-integer
    range cut and carry a bump compressed to their width.  ``eps_k`` is the
    splitting weight actually used on this cell: the sector formula, capped
    by the cell's own minorisation bound so the residual density can never
    go negative.
    """

    index: int
    lo: float
    hi: float
    mass: float
    eps_k: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


class BandDecomposition:
    """Partition of a mark range ``[lo, M)`` into unit bands plus partials.

    The decomposition fixes, once per (model, eps), everything the jump
    sampler needs: cell masses, splitting weights, and the deterministic
    ascending order in which cells consume randomness.
    """

    def __init__(self, model: LevyModel, bands: list[Band], M: float, lo: float = 1.0):
        self.model = model
        self.bands = bands
        self.M = M
        self.lo = lo

    @classmethod
    def build(cls, model: LevyModel, eps: float, lo: float = 1.0) -> "BandDecomposition":
        """Decompose marks of jumps in ``(eps, 1]``, i.e. ``v in [1, 1/eps)``.

        Passing ``lo > 1`` decomposes only ``[lo, 1/eps)``; the coupled pair
        runner uses this to extend a coarse decomposition downward in ``eps``
        without touching the shared cells.  Results are cached per model.
        """
        key = ("bands", eps, lo)
        hit = model._scalar_cache.get(key)
        if hit is not None:
            return hit
        M = 1.0 / eps
        if M <= lo:
            out = cls(model, [], M, lo)
            model._scalar_cache[key] = out
            return out
        bands: list[Band] = []
        start = lo
        while start < M - 1e-12:
            k = int(math.floor(start + 1e-9))
            hi = min(float(k + 1), M)
            bands.append(cls._make_band(model, k, start, hi))
            start = hi
        out = cls(model, bands, M, lo)
        model._scalar_cache[key] = out
        return out

    @staticmethod
    def _make_band(model: LevyModel, k: int, lo: float, hi: float) -> Band:
        mass = model.nu.mass(lo, hi)
        eps_formula = float(model.sector.eps_k(k))
        width = hi - lo
        if width < 1.0 - 1e-12:
            # compressed-bump minorisation: the bump peaks at one, so the
            # weight is capped by the smallest density-to-mass ratio on the
            # cell, keeping the residual density non-negative
            grid = np.linspace(lo, hi, 65)
            inf_dens = float(np.min(model.nu.density(grid)))
            eps_used = min(eps_formula, inf_dens / mass) if mass > 0 else 0.0
        else:
            eps_used = eps_formula
        return Band(index=k, lo=lo, hi=hi, mass=mass, eps_k=eps_used)

    def __len__(self) -> int:
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    def total_mass(self) -> float:
        return float(sum(b.mass for b in self.bands))

    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.bands])

    def arrays(self) -> dict[str, np.ndarray]:
        """Cell attributes as flat vectors, cached; the batch sampler works
        on these instead of looping over :class:`Band` objects."""
        cached = getattr(self, "_arrays", None)
        if cached is None:
            cached = {
                "index": np.array([b.index for b in self.bands], dtype=np.int64),
                "lo": np.array([b.lo for b in self.bands]),
                "hi": np.array([b.hi for b in self.bands]),
                "center": np.array([b.center for b in self.bands]),
                "width": np.array([b.width for b in self.bands]),
                "mass": np.array([b.mass for b in self.bands]),
                "eps_k": np.array([b.eps_k for b in self.bands]),
            }
            self._arrays = cached
        return cached


# ---------------------------------------------------------------------------
# hypothesis verification


@dataclass
class CheckGrid:
    """Finite sample lattices on which the standing assumptions are tested.

    The defaults cover the time interval ``[0, 1]``, a spatial box wide
    enough for the bounded-coefficient models shipped here, transformed
    marks out to ``v = 200`` (past the crossover where the strong-sector
    tail condition activates for the shipped defaults), and a small ladder
    of moment orders.
    """

    s_points: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 5))
    x_points: np.ndarray = field(default_factory=lambda: np.linspace(-8.0, 8.0, 81))
    v_points: np.ndarray = field(default_factory=lambda: np.geomspace(1.0, 200.0, 401))
    p_values: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    max_band: int = 64
    derivative_order: int = 2


@dataclass
class CheckResult:
    condition: str
    passed: bool
    worst_margin: float
    detail: str = ""


@dataclass
class HypothesisReport:
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __iter__(self):
        return iter(self.results)

    def rows(self) -> list[dict]:
        return [
            {"condition": r.condition, "worst_margin": f"{r.worst_margin:.6e}",
             "pass": str(r.passed).lower(), "detail": r.detail}
            for r in self.results
        ]

    def summary(self) -> str:
        lines = []
        for r in self.results:
            flag = "ok " if r.passed else "FAIL"
            lines.append(f"[{flag}] {r.condition:32s} worst margin {r.worst_margin:+.3e}  {r.detail}")
        return "\n".join(lines)


def _grid_max_abs(fn, s_points, v, x_points) -> np.ndarray:
    """max over (s, x) of |fn(s, v, x)| for each v, vectorised in v."""
    worst = np.zeros_like(v)
    for s in s_points:
        for x in x_points:
            worst = np.maximum(worst, np.abs(np.asarray(fn(float(s), v, float(x)), dtype=float)))
    return worst


def _grid_min(fn, s_points, v, x_points) -> np.ndarray:
    worst = np.full_like(v, np.inf)
    for s in s_points:
        for x in x_points:
            worst = np.minimum(worst, np.asarray(fn(float(s), v, float(x)), dtype=float))
    return worst


def check_hypotheses(model: LevyModel, bands: BandDecomposition | None = None,
                     grid: CheckGrid | None = None) -> HypothesisReport:
    """Verify the standing assumptions on finite lattices.

    Margins are signed so that positive means satisfied with room: for an
    upper envelope the margin is ``min(envelope - quantity)``, for a lower
    envelope ``min(quantity - envelope)``.  Moment conditions pass when the
    defining integral converges at quadrature tolerance; non-convergence is
    reported as a failure rather than raised, since a failed hypothesis is a
    legitimate outcome of a check.
    """
    grid = grid or CheckGrid()
    coeff = model.coeff
    sector = model.sector
    v = grid.v_points
    results: list[CheckResult] = []

    # ---- upper envelope dominates the amplitude and its partials
    bar = np.asarray(coeff.envelope_bar(v), dtype=float)
    worst = np.zeros_like(v)
    covered = []
    for bx in range(0, grid.derivative_order + 1):
        for bv in range(0, grid.derivative_order + 1):
            fn = coeff.tilde_partial(bx, bv)
            if fn is None:
                continue
            covered.append((bx, bv))
            worst = np.maximum(worst, _grid_max_abs(fn, grid.s_points, v, grid.x_points))
    margin = float(np.min(bar - worst))
    results.append(CheckResult(
        "envelope dominates derivatives", margin >= -1e-12, margin,
        f"orders {sorted(covered)}"))

    # ---- envelope is non-increasing
    dec = float(np.min(bar[:-1] - bar[1:]))
    results.append(CheckResult("envelope non-increasing", dec >= -1e-12, dec))

    # ---- envelope moments are finite
    worst_m = math.inf
    ok = True
    for p in grid.p_values:
        try:
            val = eta_p(model, p, 1.0)
            worst_m = min(worst_m, val if math.isfinite(val) else -math.inf)
            ok = ok and math.isfinite(val)
        except QuadratureError:
            ok = False
            worst_m = -math.inf
    results.append(CheckResult(
        "envelope moments finite", ok, worst_m if ok else -math.inf,
        f"p in {grid.p_values}"))

    # ---- tangent-ratio envelope
    dx_fn = coeff.tilde_partial(1, 0)
    if dx_fn is not None:
        breve = np.asarray(coeff.breve(v), dtype=float)
        worst = np.zeros_like(v)
        degenerate = False
        for s in grid.s_points:
            for x in grid.x_points:
                d = np.asarray(dx_fn(float(s), v, float(x)), dtype=float)
                denom = 1.0 + d
                if np.any(np.abs(denom) < 1e-10):
                    degenerate = True
                    continue
                worst = np.maximum(worst, np.abs(d / denom))
        margin = float(np.min(breve - worst))
        results.append(CheckResult(
            "tangent ratio dominated", margin >= -1e-12 and not degenerate, margin,
            "degenerate 1 + dx c~ on grid" if degenerate else ""))

    # ---- lower envelope under both the amplitude and its v-derivative
    under = np.asarray(coeff.envelope_under(v), dtype=float)
    c_fn = coeff.tilde_partial(0, 0)
    dv_fn = coeff.tilde_partial(0, 1)
    low_c = _grid_min(lambda s, vv, x: np.abs(c_fn(s, vv, x)) ** 2, grid.s_points, v, grid.x_points)
    margin_c = float(np.min(low_c - under))
    if dv_fn is not None:
        low_d = _grid_min(lambda s, vv, x: np.abs(dv_fn(s, vv, x)) ** 2, grid.s_points, v, grid.x_points)
        margin_d = float(np.min(low_d - under))
    else:
        margin_d = math.inf
    margin = min(margin_c, margin_d)
    results.append(CheckResult("lower envelope (non-degeneracy)", margin >= -1e-12, margin))

    # ---- band minorisation: nu / mass dominates eps_k * bump on each band
    from .splitting import BUMP  # deferred: splitting depends on this module

    if bands is None:
        bands = BandDecomposition.build(model, eps=1.0 / (grid.max_band + 1))
    worst_band = math.inf
    worst_plateau = math.inf
    worst_weight = math.inf
    for band in bands:
        cell = np.linspace(band.lo, band.hi, 129)
        dens = np.asarray(model.nu.density(cell), dtype=float)
        bump = BUMP.cell_profile(band, cell)
        worst_band = min(worst_band, float(np.min(dens / band.mass - band.eps_k * bump)))
        plateau = bump >= 1.0 - 1e-12
        if np.any(plateau):
            worst_plateau = min(worst_plateau, float(np.min(dens[plateau] / band.mass - band.eps_k)))
        worst_weight = min(worst_weight, 1.0 - band.eps_k * BUMP.mass * band.width)
    results.append(CheckResult(
        "band minorisation", worst_band >= -1e-12, worst_band,
        f"{len(bands)} bands up to v = {bands.M:g}"))
    results.append(CheckResult("plateau minorisation", worst_plateau >= -1e-12, worst_plateau))
    results.append(CheckResult("split probability below one", worst_weight > 0.0, worst_weight))

    # ---- sector conditions
    if sector.variant == "strong":
        a0 = sector.moment_exponent
        floor = np.exp(-(v ** sector.alpha2))
        margins = under - floor
        if margins[-1] >= 0:
            tail_idx = len(v) - 1
            while tail_idx > 0 and margins[tail_idx - 1] >= 0:
                tail_idx -= 1
            crossover = float(v[tail_idx])
            tail_ok = crossover < 0.5 * float(v[-1])
            margin = float(np.min(margins[tail_idx:]))
            detail = f"holds for v >= {crossover:.3g}"
        else:
            tail_ok = False
            margin = float(margins[-1])
            detail = "fails at the top of the v grid"
        results.append(CheckResult("sector lower bound (strong tail)", tail_ok, margin, detail))

        worst_m = math.inf
        ok = True
        bar_fn = coeff.envelope_bar
        for p in grid.p_values:
            try:
                val = model.nu.tail_integral(
                    lambda vv: abs(float(bar_fn(vv))) ** p * vv ** (a0 - 1.0), 1.0)
                ok = ok and math.isfinite(val)
                worst_m = min(worst_m, val)
            except QuadratureError:
                ok, worst_m = False, -math.inf
        results.append(CheckResult("sector moment weight (strong)", ok, worst_m if ok else -math.inf))

        # density minorisation with the sector growth weight, per band
        worst_g = math.inf
        for band in bands:
            cell = np.linspace(band.lo, band.hi, 65)
            dens = np.asarray(model.nu.density(cell), dtype=float)
            worst_g = min(worst_g, float(np.min(
                dens / band.mass - sector.eps_star * cell ** (sector.alpha1 - 1.0))))
        results.append(CheckResult(
            "sector density growth (strong)", worst_g >= -1e-12, worst_g,
            f"exponent alpha1 = {sector.alpha1:g}"))
    else:
        floor = v ** (-sector.alpha)
        margin = float(np.min(under - floor))
        results.append(CheckResult(
            "sector lower bound (weak)", margin >= -1e-12, margin,
            f"exponent alpha = {sector.alpha:g}"))

        worst_m = math.inf
        ok = True
        bar_fn = coeff.envelope_bar
        for p in grid.p_values:
            try:
                val = model.nu.tail_integral(lambda vv: abs(float(bar_fn(vv))) ** p / vv, 1.0)
                ok = ok and math.isfinite(val)
                worst_m = min(worst_m, val)
            except QuadratureError:
                ok, worst_m = False, -math.inf
        results.append(CheckResult("sector moment weight (weak)", ok, worst_m if ok else -math.inf))

        worst_g = math.inf
        for band in bands:
            cell = np.linspace(band.lo, band.hi, 65)
            dens = np.asarray(model.nu.density(cell), dtype=float)
            worst_g = min(worst_g, float(np.min(dens / band.mass - sector.eps_star / cell)))
        results.append(CheckResult("sector density growth (weak)", worst_g >= -1e-12, worst_g))

    return HypothesisReport(results)
