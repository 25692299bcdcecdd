"""Weak-distance estimators and the rate fits built on top of them.

Distances between the substitution scheme and a finer reference are measured
against a fixed family of smooth test functions whose C^3 norms are certified:
each member stores exact supremum bounds for its value and first three
derivatives, the amplitude is chosen so the bounds sum to at most one, and
``TestFunctionFamily.verify`` re-checks the stored constants against dense
evaluation.  Working with a certified family turns the family maximum into an
honest lower proxy for the order-three smooth distance.

``generator_gap`` integrates the third-order Taylor remainder of a test
function directly against the small-jump measure.  Evaluating the remainder
(rather than subtracting two nearly equal generator values) keeps the result
accurate at small ``eps`` where the gap itself decays like ``eps**(3-rho)``.

``smooth_distance`` runs the coupled coarse/fine batch and averages test
functions over antithetic copies and fine replicas.  The optional martingale
control variate is exactly mean zero by construction, so it can only reduce
variance, never shift the estimate; the fitted coefficient adds an O(1/N)
bias that is far below the reported standard errors at the sample sizes used
here.

``tv_kde`` estimates total variation from binned kernel densities with a
deliberately undersmoothed Silverman bandwidth, and ``rate_fit`` turns a
distance curve into a log-log slope while refusing to fit noise-dominated
points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import ndtr

from .measure import BandDecomposition, LevyModel, eta_p
from .simulate import PairBatch, PathConfig, run_coupled_batch

__all__ = [
    "TestFunction",
    "TestFunctionFamily",
    "generator_gap",
    "FunctionEstimate",
    "SmoothDistanceResult",
    "smooth_distance",
    "TVEstimate",
    "tv_kde",
    "RatePoint",
    "RateFit",
    "rate_fit",
    "DistanceRow",
    "DistanceReport",
    "distance_curve",
]

#: Shared amplitude headroom: bounds are normalized to sum to this value, so
#: the certified norm stays strictly below one even after float roundoff.
_NORM_BUDGET = 0.999

# Exact supremum constants for the Gaussian-shaped members, written as the
# critical-point values of g(u) = exp(-u**2 / 2) and its derivatives.
_BUMP_D1 = math.exp(-0.5)                      # sup |u g(u)|, at u = 1
_BUMP_D2 = 1.0                                 # sup |(u**2 - 1) g(u)|, at 0
_U_STAR = math.sqrt(3.0 - math.sqrt(6.0))      # root of u**4 - 6 u**2 + 3
_BUMP_D3 = _U_STAR * (3.0 - _U_STAR**2) * math.exp(-_U_STAR**2 / 2.0)

_PHI0 = 1.0 / math.sqrt(2.0 * math.pi)         # standard normal density at 0
_STEP_D1 = _PHI0
_STEP_D2 = _PHI0 * math.exp(-0.5)              # sup |u phi(u)|, at u = 1
_STEP_D3 = _PHI0                               # sup |(u**2 - 1) phi(u)|, at 0

_SINE_FREQS = (0.25, 0.5, 0.75, 1.0, 1.33, 1.66, 2.0)
_SINE_PHASES = (0.0, math.pi / 2.0)
_BUMP_WIDTHS = (1.0, 1.5, 2.0, 3.0)
_BUMP_CENTERS = (-2.0, 0.0, 2.0, 4.0)
_STEP_WIDTHS = (0.75, 1.0, 1.5, 2.0)
_STEP_CENTERS = (0.0, 2.0)


@dataclass(frozen=True)
class TestFunction:
    """One certified member: callables for phi through phi''' plus the
    stored supremum bound of each order.  ``norm3`` is the certified sum
    norm used in remainder bounds."""

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]
    bounds: tuple[float, float, float, float]

    @property
    def norm3(self) -> float:
        return float(sum(self.bounds))


def _sine_member(freq: float, phase: float) -> TestFunction:
    amp = _NORM_BUDGET / (1.0 + freq + freq**2 + freq**3)
    tag = "sin" if phase == 0.0 else "cos"

    def phi(x, a=amp, b=freq, c=phase):
        return a * np.sin(b * np.asarray(x, dtype=float) + c)

    def dphi(x, a=amp, b=freq, c=phase):
        return a * b * np.cos(b * np.asarray(x, dtype=float) + c)

    def d2(x, a=amp, b=freq, c=phase):
        return -a * b**2 * np.sin(b * np.asarray(x, dtype=float) + c)

    def d3(x, a=amp, b=freq, c=phase):
        return -a * b**3 * np.cos(b * np.asarray(x, dtype=float) + c)

    return TestFunction(
        name=f"{tag}_b{freq:g}",
        phi=phi, dphi=dphi, d2=d2, d3=d3,
        bounds=(amp, amp * freq, amp * freq**2, amp * freq**3),
    )


def _bump_member(center: float, width: float) -> TestFunction:
    amp = _NORM_BUDGET / (
        1.0 + _BUMP_D1 / width + _BUMP_D2 / width**2 + _BUMP_D3 / width**3
    )

    def phi(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return a * np.exp(-0.5 * u**2)

    def dphi(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return -(a / w) * u * np.exp(-0.5 * u**2)

    def d2(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return (a / w**2) * (u**2 - 1.0) * np.exp(-0.5 * u**2)

    def d3(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return (a / w**3) * u * (3.0 - u**2) * np.exp(-0.5 * u**2)

    return TestFunction(
        name=f"bump_m{center:g}_w{width:g}",
        phi=phi, dphi=dphi, d2=d2, d3=d3,
        bounds=(amp, amp * _BUMP_D1 / width, amp * _BUMP_D2 / width**2,
                amp * _BUMP_D3 / width**3),
    )


def _step_member(center: float, width: float) -> TestFunction:
    amp = _NORM_BUDGET / (
        1.0 + _STEP_D1 / width + _STEP_D2 / width**2 + _STEP_D3 / width**3
    )

    def phi(x, a=amp, m=center, w=width):
        return a * ndtr((np.asarray(x, dtype=float) - m) / w)

    def dphi(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return (a / w) * _PHI0 * np.exp(-0.5 * u**2)

    def d2(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return -(a / w**2) * _PHI0 * u * np.exp(-0.5 * u**2)

    def d3(x, a=amp, m=center, w=width):
        u = (np.asarray(x, dtype=float) - m) / w
        return (a / w**3) * _PHI0 * (u**2 - 1.0) * np.exp(-0.5 * u**2)

    return TestFunction(
        name=f"step_m{center:g}_w{width:g}",
        phi=phi, dphi=dphi, d2=d2, d3=d3,
        bounds=(amp, amp * _STEP_D1 / width, amp * _STEP_D2 / width**2,
                amp * _STEP_D3 / width**3),
    )


@dataclass(frozen=True)
class TestFunctionFamily:
    """A fixed collection of certified test functions.

    The default family mixes three shapes so no single symmetry can hide a
    discrepancy between two laws: sinusoids at several frequencies (both
    phases), Gaussian bumps at several centers and widths, and smoothed
    indicators whose distance response concentrates near their threshold.
    """

    members: tuple[TestFunction, ...]

    @classmethod
    def default(cls) -> "TestFunctionFamily":
        members = [_sine_member(b, c) for b in _SINE_FREQS for c in _SINE_PHASES]
        members += [_bump_member(m, w) for m in _BUMP_CENTERS for w in _BUMP_WIDTHS]
        members += [_step_member(m, w) for m in _STEP_CENTERS for w in _STEP_WIDTHS]
        return cls(members=tuple(members))

    def __iter__(self) -> Iterator[TestFunction]:
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def verify(self, lo: float = -8.0, hi: float = 10.0,
               n: int = 4001) -> dict[str, float]:
        """Check every stored bound against dense evaluation.

        Returns the worst observed ratio (grid supremum over stored bound)
        per member and raises if any bound is exceeded or any certified norm
        leaves the unit ball.  The window covers all critical points of the
        default family, so a miscomputed constant cannot hide between grid
        nodes by more than the O(step**2) interpolation defect.
        """
        x = np.linspace(lo, hi, n)
        worst: dict[str, float] = {}
        for f in self:
            ratios = []
            for fn, bound in zip((f.phi, f.dphi, f.d2, f.d3), f.bounds):
                observed = float(np.max(np.abs(fn(x))))
                if observed > bound * (1.0 + 1e-9):
                    raise ValueError(
                        f"{f.name}: observed sup {observed:.6g} exceeds the "
                        f"stored bound {bound:.6g}")
                ratios.append(observed / bound)
            if f.norm3 > 1.0:
                raise ValueError(f"{f.name}: certified norm {f.norm3} > 1")
            worst[f.name] = max(ratios)
        return worst


# -- generator gap ---------------------------------------------------------

#: Quadrature floor on the original jump coordinate.  Below this point the
#: dropped remainder mass is at most norm * bar(eps)**3 * z**(3-rho) / 6,
#: under 1e-10 for every model in the compiled families, which is well inside
#: the 1e-8 headroom the strict gap inequality is tested with.
_Z_FLOOR = 1e-6
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def generator_gap(model: LevyModel, phi: TestFunction, eps: float,
                  x_grid: np.ndarray) -> tuple[float, float]:
    """Supremum over ``x_grid`` of the generator substitution error, with its
    a-priori remainder bound.

    The substituted generator matches the jump integral up to the second
    Taylor term, so the difference at ``x`` is the integral over ``(0, eps]``
    of ``phi(x + c) - phi(x) - c phi'(x) - c**2 phi''(x) / 2``.  That
    remainder is integrated directly on geometric panels with Gauss-Legendre
    nodes: each panel spans one octave, so the integrand varies by a bounded
    factor inside it and the rule converges at machine precision long before
    the panel count matters.  Time-dependent amplitudes are evaluated at
    time zero.

    Returns ``(gap_sup, bound)`` with ``bound = norm3 * eta_3(eps) / 6``.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps out of (0, 1]: {eps}")
    x = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if x.size == 0:
        raise ValueError("x_grid must be nonempty")

    n_panels = max(12, int(math.ceil(math.log2(max(eps / _Z_FLOOR, 2.0)))))
    edges = eps * 2.0 ** -np.arange(n_panels + 1, dtype=float)
    half = 0.5 * (edges[:-1] - edges[1:])
    mid = 0.5 * (edges[:-1] + edges[1:])
    z = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel() * model.mu.density(z)

    if model.coeff.separable is not None:
        c = model.coeff.separable[0](x)[:, None] * z[None, :]
    else:
        c = np.asarray(model.coeff.c(0.0, z[None, :], x[:, None]), dtype=float)

    rem = (phi.phi(x[:, None] + c) - phi.phi(x)[:, None]
           - c * phi.dphi(x)[:, None] - 0.5 * c**2 * phi.d2(x)[:, None])
    gap_sup = float(np.max(np.abs(rem @ w)))
    bound = phi.norm3 * eta_p(model, 3.0, eps) / 6.0
    return gap_sup, bound


# -- coupled smooth-distance estimates -------------------------------------


@dataclass(frozen=True)
class FunctionEstimate:
    """Coupled-difference mean for one test function."""

    name: str
    estimate: float
    stderr: float
    beta: float


@dataclass
class SmoothDistanceResult:
    """Per-function estimates for one level pair plus the family maximum.

    ``proxy`` is the largest absolute estimate across the family; since each
    member's certified norm is at most one, it lower-bounds the order-three
    smooth distance up to Monte Carlo error.
    """

    eps: float
    eps_ref: float
    scheme: str
    n_paths: int
    estimates: list[FunctionEstimate]
    proxy: float
    proxy_stderr: float
    proxy_name: str


def _weight_table(model: LevyModel, cfg: PathConfig) -> tuple[np.ndarray, np.ndarray] | None:
    """Piecewise-linear weight rows for the martingale control variate.

    Every row is the jump amplitude times a smooth shape (constant, low
    polynomials, one trigonometric pair), so the least-squares fit can adapt
    to how the response to an extension jump varies with the state it lands
    on.  Each row's variate is exactly mean zero for any table, so the basis
    only affects how much variance is removed, never the estimate's centre.
    The window tracks the upward drift of the paths: jumps are positive, so
    mass moves toward larger ``x`` as the horizon grows.
    """
    if model.coeff.separable is None:
        return None
    lo = cfg.x0 - 8.0
    hi = cfg.x0 + 8.0 + 6.0 * cfg.T
    xg = np.linspace(lo, hi, int(round((hi - lo) / 0.05)) + 1)
    amp = model.coeff.separable[0](xg)
    u = (xg - cfg.x0 - 3.0 * cfg.T) / 4.0
    shapes = np.stack([np.ones_like(xg), u, u * u, np.sin(xg), np.cos(xg)])
    return xg, amp[None, :] * shapes


def _member_differences(batch: PairBatch, family: TestFunctionFamily,
                        scheme: str) -> tuple[np.ndarray, list[float]]:
    """Per-path coupled differences, one row per family member.

    For the substitution channel the martingale control variate is already
    subtracted, every weight row fitted jointly by least squares; the
    recorded coefficient is the one on the plain amplitude row."""
    n = batch.n_paths
    D = np.empty((len(family), n))
    betas = [0.0] * len(family)

    if scheme == "truncation_only":
        if batch.xa_trunc is None or batch.xb_trunc is None:
            raise ValueError("batch was run without truncation terminals")
        for i, f in enumerate(family):
            D[i] = f.phi(batch.xb_trunc) - f.phi(batch.xa_trunc)
        return D, betas

    xa_p, xa_m = batch.xa[0], batch.xa[1]
    for i, f in enumerate(family):
        fine = 0.5 * (f.phi(batch.xb[0]).mean(axis=0)
                      + f.phi(batch.xb[1]).mean(axis=0))
        coarse = 0.5 * (f.phi(xa_p) + f.phi(xa_m))
        d = fine - coarse
        if batch.cv is not None:
            slope = 0.5 * (f.dphi(xa_p) + f.dphi(xa_m))
            C = slope[None, :] * batch.cv
            if batch.cv_quad is not None:
                curh = 0.5 * (f.d2(xa_p) + f.d2(xa_m))
                C = np.vstack([C, curh[None, :] * batch.cv_quad])
            Cc = C - C.mean(axis=1, keepdims=True)
            coef = np.linalg.lstsq(Cc.T, d - d.mean(), rcond=None)[0]
            betas[i] = float(coef[0])
            d = d - coef @ C
        D[i] = d
    return D, betas


def _estimates_from(family: TestFunctionFamily, D: np.ndarray,
                    betas: list[float], n: int) -> list[FunctionEstimate]:
    root_n = math.sqrt(n)
    return [
        FunctionEstimate(f.name, float(d.mean()),
                         float(d.std(ddof=1) / root_n) if n > 1 else 0.0,
                         beta)
        for f, d, beta in zip(family, D, betas)
    ]


def _family_max(family: TestFunctionFamily,
                D: np.ndarray) -> tuple[float, float, str]:
    """Family maximum read off by sample splitting.

    Each half of the paths nominates the member with the largest absolute
    mean and fixes its sign; the other half prices that nomination.  With a
    clear signal both halves nominate the same member and the value equals
    the plain maximum; when every member is noise the held-out pricing is
    centred at zero instead of inheriting the winner's-curse inflation a
    direct maximum over many near-zero estimates suffers, so noise levels
    are cleanly caught by the stderr exclusion rule downstream (the value
    can even come out nonpositive, which the rate fit drops).
    """
    even, odd = D[:, 0::2], D[:, 1::2]
    m_e, m_o = even.mean(axis=1), odd.mean(axis=1)
    k_e = int(np.argmax(np.abs(m_e)))
    k_o = int(np.argmax(np.abs(m_o)))
    s_e = 1.0 if m_e[k_e] >= 0.0 else -1.0
    s_o = 1.0 if m_o[k_o] >= 0.0 else -1.0
    value = 0.5 * (s_e * m_o[k_e] + s_o * m_e[k_o])
    var_o = float(odd[k_e].var(ddof=1)) / odd.shape[1]
    var_e = float(even[k_o].var(ddof=1)) / even.shape[1]
    stderr = 0.5 * math.sqrt(var_o + var_e)
    names = [f.name for f in family]
    name = names[k_e] if k_e == k_o else f"{names[k_e]}|{names[k_o]}"
    return float(value), stderr, name


def smooth_distance(model: LevyModel, bands: BandDecomposition | None,
                    cfg_pair: tuple[PathConfig, PathConfig],
                    family: TestFunctionFamily, N: int,
                    n_replicas: int = 4, workers: int = 1,
                    control_variate: bool = True,
                    batch: PairBatch | None = None) -> SmoothDistanceResult:
    """Smooth distance between a substitution level and a finer reference.

    ``cfg_pair`` is (coarse, reference); the two configs must agree on
    everything except ``eps``.  Both paths of each pair share their big
    jumps and Brownian lattice, which is what makes the difference converge
    at the substitution order instead of the Monte Carlo floor.  With equal
    ``eps`` the two levels are bit-identical and every estimate is exactly
    zero.  ``bands``, when given, must describe the coarse level and is
    otherwise rebuilt from it.

    A precomputed ``batch`` for the same pair may be passed to share one
    simulation between scheme channels; it overrides the sampling options.
    """
    cfg_a, cfg_b = cfg_pair
    if cfg_b.eps > cfg_a.eps:
        raise ValueError("reference level must be at least as fine as the "
                         f"coarse level, got {cfg_b.eps} > {cfg_a.eps}")
    for name in ("x0", "T", "n_steps", "seed", "scheme"):
        if getattr(cfg_a, name) != getattr(cfg_b, name):
            raise ValueError(f"cfg_pair disagrees on {name}")
    if bands is not None and not math.isclose(bands.M, 1.0 / cfg_a.eps):
        raise ValueError("bands decomposition does not match the coarse eps")
    if N < 2:
        raise ValueError("need at least two paths for a standard error")

    scheme = cfg_a.scheme
    if batch is None:
        table = None
        if scheme == "gaussian_substitution" and control_variate \
                and cfg_b.eps < cfg_a.eps:
            table = _weight_table(model, cfg_a)
        batch = run_coupled_batch(
            model, replace(cfg_a, scheme="gaussian_substitution"),
            cfg_a.eps, cfg_b.eps, N, n_replicas=n_replicas,
            include_truncation=(scheme == "truncation_only"),
            cv_table=table, workers=workers)

    D, betas = _member_differences(batch, family, scheme)
    proxy, proxy_se, proxy_name = _family_max(family, D)
    return SmoothDistanceResult(
        eps=cfg_a.eps, eps_ref=cfg_b.eps, scheme=scheme,
        n_paths=batch.n_paths,
        estimates=_estimates_from(family, D, betas, batch.n_paths),
        proxy=proxy, proxy_stderr=proxy_se, proxy_name=proxy_name)


# -- total variation from binned kernel densities --------------------------


@dataclass(frozen=True)
class TVEstimate:
    """Total variation estimate with a split-half error gauge.

    ``stderr`` is half the gap between the estimates from even-indexed and
    odd-indexed subsamples; the merged ``value`` itself does not depend on
    sample order."""

    value: float
    stderr: float
    bandwidth_a: float
    bandwidth_b: float


def _silverman(x: np.ndarray, scale: float) -> float:
    sd = float(x.std(ddof=1))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0.0 else sd
    if not spread > 0.0:
        raise ValueError("degenerate sample: zero dispersion is unsupported "
                         "by the kernel total-variation estimate")
    return 0.9 * spread * x.size ** -0.2 * scale


def _tv_once(a: np.ndarray, b: np.ndarray, scale: float,
             grid_points: int, shared: bool) -> tuple[float, float, float]:
    if shared:
        h_a = h_b = _silverman(np.concatenate([a, b]), scale)
    else:
        h_a = _silverman(a, scale)
        h_b = _silverman(b, scale)
    h = max(h_a, h_b)
    lo = min(a.min(), b.min()) - 3.0 * h
    hi = max(a.max(), b.max()) + 3.0 * h
    step = (hi - lo) / (grid_points - 1)

    edges_lo = lo - 0.5 * step
    counts_a, _ = np.histogram(a, bins=grid_points,
                               range=(edges_lo, edges_lo + grid_points * step))
    counts_b, _ = np.histogram(b, bins=grid_points,
                               range=(edges_lo, edges_lo + grid_points * step))

    def smooth(counts: np.ndarray, hh: float, m: int) -> np.ndarray:
        halfw = int(math.ceil(5.0 * hh / step))
        offs = np.arange(-halfw, halfw + 1) * step
        kern = np.exp(-0.5 * (offs / hh) ** 2)
        kern /= kern.sum()
        return np.convolve(counts / (m * step), kern, mode="same")

    dens_a = smooth(counts_a, h_a, a.size)
    dens_b = smooth(counts_b, h_b, b.size)
    tv = 0.5 * step * float(np.abs(dens_a - dens_b).sum())
    return min(max(tv, 0.0), 1.0), h_a, h_b


def tv_kde(samples_a: np.ndarray, samples_b: np.ndarray,
           bandwidth_scale: float = 0.8, grid_points: int = 4096,
           shared_bandwidth: bool = False) -> TVEstimate:
    """Total variation between two sample laws via binned kernel densities.

    Each set gets its own Silverman bandwidth shrunk by ``bandwidth_scale``;
    plain Silverman oversmooths distinct unimodal laws and biases the
    distance down, while the 0.8 factor keeps the estimate inside two
    percent of truth for the Gaussian calibration pair at ``1e5`` draws.
    Both densities are binned and smoothed on one shared grid covering the
    pooled range plus three bandwidths, the distance is half the absolute
    density difference summed over the grid, and the result is clipped to
    ``[0, 1]``.  Estimates stabilize around ``1e4`` draws per side; the hard
    floor below only rejects sets too small to bandwidth at all.

    ``shared_bandwidth`` derives one bandwidth from the pooled samples and
    applies it to both sets.  For coupled pairs, where the i-th draws of the
    two sets share their randomness, this lets the kernel sums cancel path
    by path and pushes the noise floor far below what two independently
    bandwidthed densities reach; for independent samples it makes little
    difference.

    The estimate is symmetric in its arguments and invariant to ordering
    within each set.  Samples with zero dispersion have no meaningful
    kernel density and are rejected.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    for name, arr in (("samples_a", a), ("samples_b", b)):
        if arr.size < 16:
            raise ValueError(f"{name} has {arr.size} draws; need at least 16")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")
    if grid_points < 64:
        raise ValueError("grid_points must be at least 64")

    value, h_a, h_b = _tv_once(a, b, bandwidth_scale, grid_points,
                               shared_bandwidth)
    tv_even, _, _ = _tv_once(a[0::2], b[0::2], bandwidth_scale, grid_points,
                             shared_bandwidth)
    tv_odd, _, _ = _tv_once(a[1::2], b[1::2], bandwidth_scale, grid_points,
                            shared_bandwidth)
    return TVEstimate(value=value, stderr=0.5 * abs(tv_even - tv_odd),
                      bandwidth_a=h_a, bandwidth_b=h_b)


# -- rate fitting ----------------------------------------------------------


@dataclass(frozen=True)
class RatePoint:
    eps: float
    estimate: float
    stderr: float


@dataclass(frozen=True)
class RateFit:
    """Log-log slope of a distance curve, or the reason none was fitted.

    ``flag`` is ``None`` for a clean fit; otherwise it names the refusal
    and the slope fields are NaN.  ``excluded`` lists the ``eps`` of points
    dropped before fitting."""

    slope: float
    intercept: float
    r_squared: float
    n_used: int
    flag: str | None
    excluded: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return self.flag is None


def _refused(flag: str, n_used: int, excluded: tuple[float, ...]) -> RateFit:
    return RateFit(math.nan, math.nan, math.nan, n_used, flag, excluded)


def rate_fit(report_rows: Sequence, exclude_noisy: bool = True) -> RateFit:
    """Ordinary least squares of ``log(estimate)`` on ``log(eps)``.

    Rows are ``RatePoint`` or ``(eps, estimate, stderr)``.  Nonpositive
    estimates have no logarithm and are always dropped.  With
    ``exclude_noisy`` (the pipeline default) points whose standard error
    exceeds half the estimate are dropped as well, since their log
    transform is dominated by noise; without it the presence of any such
    point refuses the fit outright, because silently fitting through it
    would report a slope the data cannot support.  Fewer than three usable
    points also refuses.
    """
    pts = [p if isinstance(p, RatePoint) else RatePoint(*p) for p in report_rows]
    kept: list[RatePoint] = []
    excluded: list[float] = []
    for p in pts:
        usable = p.estimate > 0.0
        if usable and exclude_noisy and p.stderr > 0.5 * p.estimate:
            usable = False
        (kept if usable else excluded).append(p if usable else p.eps)
    if not exclude_noisy:
        if any(p.estimate <= 2.0 * p.stderr for p in kept) or excluded:
            return _refused("noise-dominated estimates", 0, tuple(excluded))
    if len(kept) < 3:
        return _refused("insufficient usable points", len(kept), tuple(excluded))

    lx = np.log([p.eps for p in kept])
    ly = np.log([p.estimate for p in kept])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return RateFit(float(slope), float(intercept), r2, len(kept), None,
                   tuple(excluded))


# -- full distance curve ---------------------------------------------------


@dataclass(frozen=True)
class DistanceRow:
    """One substitution level of a distance curve."""

    eps: float
    d3: float
    d3_stderr: float
    d3_function: str
    trunc: float
    trunc_stderr: float
    trunc_function: str
    tv: float
    tv_stderr: float
    eta3: float
    eta1: float


@dataclass
class DistanceReport:
    """Distance curve over an ``eps`` grid with its three rate fits.

    ``fits`` holds the log-log slopes for the substitution distance
    (``"gaussian"``), the truncation-only distance (``"truncation"``) and
    the kernel total variation (``"tv"``).  All three channels of a row
    come from the same coupled batch, so their comparison is not confounded
    by sampling noise differences.
    """

    rows: list[DistanceRow]
    fits: dict[str, RateFit]
    metadata: dict

    def as_rows(self) -> list[dict]:
        return [
            {"eps": r.eps, "d3": r.d3, "d3_stderr": r.d3_stderr,
             "d3_function": r.d3_function, "trunc": r.trunc,
             "trunc_stderr": r.trunc_stderr, "trunc_function": r.trunc_function,
             "tv": r.tv, "tv_stderr": r.tv_stderr,
             "eta3": r.eta3, "eta1": r.eta1}
            for r in self.rows
        ]


def distance_curve(model: LevyModel, cfg: PathConfig, eps_grid: Sequence[float],
                   N: int, family: TestFunctionFamily | None = None,
                   eps_ref: float | None = None, n_replicas: int = 4,
                   workers: int = 1,
                   bandwidth_scale: float = 0.8) -> DistanceReport:
    """Distance curve against one shared reference level.

    Every grid level is coupled to the same reference resolution
    ``eps_ref`` (an eighth of the finest grid level by default, keeping the
    reference bias an order below the finest measured distance).  Per level
    one batch feeds all three channels: the control-variated substitution
    estimates, the truncation-only estimates from the same draws, and the
    terminal-law total variation.  Halving ``eps_ref`` under the same seed
    is the standard stability check: fitted slopes should move well under
    the fit tolerance.
    """
    if family is None:
        family = TestFunctionFamily.default()
    eps_list = [float(e) for e in eps_grid]
    if len(eps_list) == 0:
        raise ValueError("eps_grid must be nonempty")
    if eps_ref is None:
        eps_ref = min(eps_list) / 8.0
    if eps_ref >= min(eps_list):
        raise ValueError("eps_ref must be finer than every grid level")

    rows: list[DistanceRow] = []
    bandwidths: dict[float, tuple[float, float]] = {}
    for eps in eps_list:
        cfg_eps = replace(cfg, eps=eps, scheme="gaussian_substitution")
        batch = run_coupled_batch(
            model, cfg_eps, eps, eps_ref, N, n_replicas=n_replicas,
            include_truncation=True,
            cv_table=_weight_table(model, cfg_eps), workers=workers)
        D_g, _ = _member_differences(batch, family, "gaussian_substitution")
        D_t, _ = _member_differences(batch, family, "truncation_only")
        g_val, g_se, g_name = _family_max(family, D_g)
        t_val, t_se, t_name = _family_max(family, D_t)
        tv = tv_kde(batch.xa[0], batch.xb[0, 0], bandwidth_scale,
                    shared_bandwidth=True)
        bandwidths[eps] = (tv.bandwidth_a, tv.bandwidth_b)
        rows.append(DistanceRow(
            eps=eps, d3=g_val, d3_stderr=g_se, d3_function=g_name,
            trunc=t_val, trunc_stderr=t_se, trunc_function=t_name,
            tv=tv.value, tv_stderr=tv.stderr,
            eta3=eta_p(model, 3.0, eps), eta1=eta_p(model, 1.0, eps)))

    fits = {
        "gaussian": rate_fit([(r.eps, r.d3, r.d3_stderr) for r in rows]),
        "truncation": rate_fit([(r.eps, r.trunc, r.trunc_stderr) for r in rows]),
        "tv": rate_fit([(r.eps, r.tv, r.tv_stderr) for r in rows]),
    }
    metadata = {
        "n_paths": N, "seed": cfg.seed, "x0": cfg.x0, "T": cfg.T,
        "n_steps": cfg.n_steps, "n_replicas": n_replicas,
        "eps_ref": eps_ref, "bandwidth_scale": bandwidth_scale,
        "family_size": len(family), "bandwidths": bandwidths,
    }
    return DistanceReport(rows=rows, fits=fits, metadata=metadata)
