"""Bump-function splitting of the band-conditional jump law.

On each band ``I_k = [k, k+1)`` of the transformed mark axis, the normalised
jump density splits into a fixed smooth bump carrying probability
``eps_k * m(psi)`` and a residual part:

    Z = xi * V + (1 - xi) * U,

where ``xi`` is Bernoulli, ``V`` has density ``psi_k / m(psi)`` and ``U`` the
residual density.  The identity holds in law exactly whenever the band
minorisation ``nu_density / m_k >= eps_k * psi_k`` does, and it is the split
indicator ``xi`` that makes jump noise act like an elliptic direction in the
covariance analysis: conditionally on everything else, a split jump has a
smooth, compactly supported, fully known density.

The module owns the fixed analytic bump, its tabulated quantile function,
and the per-band sampler.  Partial cells (width below one, at a non-integer
range cut) use the same bump compressed to the cell width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import quad

if TYPE_CHECKING:
    from .measure import Band, LevyModel

__all__ = [
    "BumpFunction",
    "BUMP",
    "MinorizationError",
    "SplitSampler",
    "psi_eval",
    "m_psi",
    "split_probability",
    "sample_split",
    "residual_density",
    "draw_band_jumps",
    "BandCheck",
    "splitting_report",
]

#: Cap on vectorised rejection rounds when drawing the residual part.  Mean
#: acceptance is at least ``1 - eps_k * m(psi)``, comfortably above one half
#: for every admissible weight, so hitting the cap means the minorisation is
#: broken, not that we were unlucky.
REJECTION_CAP = 10_000


class MinorizationError(RuntimeError):
    """A band's residual density went negative or rejection never accepted."""


class BumpFunction:
    """The fixed cutoff ``psi``: one on ``[-1/4, 1/4]``, zero off ``(-1/2, 1/2)``.

    On the transition ``1/4 < |y| < 1/2`` it equals ``exp(a(|y|))`` with
    ``a(y) = 1 - 1/(1 - (4y - 1)**2)``, which glues both ends smoothly: all
    derivatives vanish at ``|y| = 1/2`` and match the plateau at ``|y| = 1/4``.
    Band copies are translates, ``psi_k(y) = psi(y - (k + 1/2))``.
    """

    PLATEAU = 0.25
    SUPPORT = 0.5
    TABLE_SIZE = 4096

    def __init__(self):
        self._mass: float | None = None
        self._table: tuple[np.ndarray, np.ndarray] | None = None

    def a(self, y):
        """Transition exponent on ``[1/4, 1/2)``; ``-inf`` at the support edge."""
        y = np.asarray(y, dtype=float)
        t = 4.0 * y - 1.0
        with np.errstate(divide="ignore"):
            return 1.0 - 1.0 / (1.0 - t * t)

    def __call__(self, y):
        y = np.abs(np.asarray(y, dtype=float))
        out = np.zeros_like(y)
        out[y <= self.PLATEAU] = 1.0
        trans = (y > self.PLATEAU) & (y < self.SUPPORT)
        if np.any(trans):
            out[trans] = np.exp(self.a(y[trans]))
        return out

    def psi(self, y):
        return self(y)

    def psi_k(self, k: int, y):
        return self(np.asarray(y, dtype=float) - (k + 0.5))

    def theta_k(self, k: int, y):
        """Log-derivative ``d/dy ln psi_k``; zero on the plateau and, by
        convention, outside the support (diagnostic use only)."""
        y = np.asarray(y, dtype=float)
        w = y - (k + 0.5)
        s = np.sign(w)
        w = np.abs(w)
        out = np.zeros_like(w)
        trans = (w > self.PLATEAU) & (w < self.SUPPORT)
        if np.any(trans):
            t = 4.0 * w[trans] - 1.0
            out[trans] = s[trans] * (-8.0 * t / (1.0 - t * t) ** 2)
        return out

    @property
    def mass(self) -> float:
        """``m(psi) = int psi``; strictly between 1/2 (plateau) and 1."""
        if self._mass is None:
            val, _ = quad(lambda y: float(self(y)), -self.SUPPORT, self.SUPPORT,
                          epsabs=0.0, epsrel=1e-12, points=[-self.PLATEAU, self.PLATEAU])
            self._mass = val
        return self._mass

    def cell_profile(self, band: "Band", v):
        """Bump compressed onto one decomposition cell, peak value one."""
        v = np.asarray(v, dtype=float)
        return self((v - band.center) / band.width)

    def inverse_cdf(self, u):
        """Quantile function of the normalised density ``psi / m(psi)`` on
        ``[-1/2, 1/2]``, by interpolation on a fixed fine table."""
        if self._table is None:
            grid = np.linspace(-self.SUPPORT, self.SUPPORT, self.TABLE_SIZE + 1)
            dens = self(grid)
            cdf = np.concatenate([[0.0], np.cumsum((dens[:-1] + dens[1:]) * 0.5 * np.diff(grid))])
            cdf /= cdf[-1]
            self._table = (grid, cdf)
        grid, cdf = self._table
        return np.interp(np.asarray(u, dtype=float), cdf, grid)


#: Module-wide bump instance; the function is fixed, so its quadrature mass
#: and quantile table are shared by every sampler and every worker.
BUMP = BumpFunction()


def psi_eval(y: float) -> float:
    """Pointwise bump evaluation (scalar convenience)."""
    return float(BUMP(y))


def m_psi() -> float:
    """The bump mass ``m(psi)``, cached after the first quadrature."""
    return BUMP.mass


def split_probability(band: "Band") -> float:
    """``P(xi = 1)`` on the cell: ``eps_k`` times the compressed bump mass."""
    return band.eps_k * band.width * BUMP.mass


def _draw_v(gen: np.random.Generator, band: "Band", n: int) -> np.ndarray:
    off = BUMP.inverse_cdf(gen.random(n))
    return band.center + band.width * off


def _draw_u(gen: np.random.Generator, model: "LevyModel", band: "Band", n: int) -> np.ndarray:
    """Residual draws by rejection from the cell-conditional jump law.

    Acceptance is ``1 - eps_k * psi_cell(v) * mass / nu_density(v)``, which
    is exactly the residual-to-proposal ratio times its normalising
    constant, so accepted points carry the residual law with no weighting.
    """
    nu = model.nu
    out = np.empty(n)
    pending = np.arange(n)
    rounds = 0
    while pending.size:
        if rounds >= REJECTION_CAP:
            raise MinorizationError(
                f"residual rejection on band [{band.lo}, {band.hi}) exceeded "
                f"{REJECTION_CAP} rounds; the band minorisation is violated")
        m = pending.size
        prop = nu.band_inverse_cdf(band.lo, band.hi, gen.random(m))
        dens = np.asarray(nu.density(prop), dtype=float)
        accept_p = 1.0 - band.eps_k * BUMP.cell_profile(band, prop) * band.mass / dens
        keep = gen.random(m) < accept_p
        out[pending[keep]] = prop[keep]
        pending = pending[~keep]
        rounds += 1
    return out


def draw_band_jumps(model: "LevyModel", band: "Band", n: int,
                    gen_splits: np.random.Generator,
                    gen_marks: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``n`` split jumps ``(xi, v, u, z)`` on one cell.

    All three components are drawn for every jump, whether or not the split
    selects them.  That costs a few spare uniforms but fixes the stream
    consumption pattern, which is what lets a finer-range run reproduce the
    jumps of a coarser one bit for bit on shared cells.
    """
    xi = (gen_splits.random(n) < split_probability(band)).astype(np.int8)
    if n == 0:
        e = np.empty(0)
        return xi, e, e.copy(), e.copy()
    v = _draw_v(gen_marks, band, n)
    u = _draw_u(gen_marks, model, band, n)
    z = np.where(xi == 1, v, u)
    return xi, v, u, z


@dataclass
class SplitSampler:
    """Sampler state for one decomposition cell.

    Holds its own generator pair (split indicators and mark randomness), so
    instances are never shared across workers; build one per (seed, band,
    path index) key and it is fully deterministic.
    """

    model: "LevyModel"
    band: "Band"
    gen_splits: np.random.Generator
    gen_marks: np.random.Generator

    @classmethod
    def from_key(cls, model: "LevyModel", band: "Band", seed: int, path_index: int = 0) -> "SplitSampler":
        from . import rng

        return cls(model=model, band=band,
                   gen_splits=rng.stream(seed, path_index, rng.STREAM_SPLITS),
                   gen_marks=rng.stream(seed, path_index, rng.STREAM_MARKS))

    def __post_init__(self):
        if not 0.0 < self.split_probability < 1.0:
            raise MinorizationError(
                f"split probability {self.split_probability} outside (0, 1) "
                f"on band [{self.band.lo}, {self.band.hi})")

    @property
    def split_probability(self) -> float:
        return split_probability(self.band)

    def draw(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return draw_band_jumps(self.model, self.band, n, self.gen_splits, self.gen_marks)

    def residual_density(self, u) -> np.ndarray:
        """Density of the residual part ``U`` at the points ``u``.

        Raises when the value dips materially below zero, since that means
        the configured weight ``eps_k`` breaks the minorisation at ``u``;
        roundoff-level negatives are clamped.
        """
        u = np.asarray(u, dtype=float)
        band = self.band
        cond = np.asarray(self.model.nu.density(u), dtype=float) / band.mass
        val = (cond - band.eps_k * BUMP.cell_profile(band, u)) / (1.0 - self.split_probability)
        bad = val < -1e-12 * np.maximum(cond, 1.0)
        if np.any(bad):
            pt = float(np.atleast_1d(u)[np.argmax(bad)])
            raise MinorizationError(f"residual density negative at u = {pt}")
        return np.clip(val, 0.0, None)


def sample_split(sampler: SplitSampler) -> tuple[int, float, float, float]:
    """One split draw ``(xi, v, u, z)`` with ``z = xi*v + (1-xi)*u``."""
    xi, v, u, z = sampler.draw(1)
    return int(xi[0]), float(v[0]), float(u[0]), float(z[0])


def residual_density(sampler: SplitSampler, u) -> float | np.ndarray:
    """Residual density of ``U`` at ``u`` (module-level convenience)."""
    out = sampler.residual_density(u)
    if np.ndim(u) == 0:
        return float(out[()] if out.ndim == 0 else out[0])
    return out


@dataclass(frozen=True)
class BandCheck:
    """Split-law identity diagnostics for one band.

    ``ks_stat`` compares reassembled draws ``Z = xi V + (1 - xi) U`` against
    direct inverse-CDF draws from the band-conditional law; ``p_split`` is
    the empirical split frequency against its closed form.
    """

    index: int
    n: int
    ks_stat: float
    p_split: float
    p_split_expected: float
    binomial_se: float
    ks_tol: float
    se_mult: float

    @property
    def ok(self) -> bool:
        return (self.ks_stat < self.ks_tol
                and abs(self.p_split - self.p_split_expected)
                <= self.se_mult * self.binomial_se)


def splitting_report(model: "LevyModel", band_indices, n: int, seed: int = 0,
                     ks_tol: float = 0.01, se_mult: float = 3.0) -> list[BandCheck]:
    """Two-sample check that splitting reassembles the conditional law.

    For each requested unit band the reassembled sample and an independent
    direct sample of the same size are compared by the two-sample
    Kolmogorov-Smirnov statistic, and the split frequency is compared with
    ``eps_k * width * m(psi)`` on the binomial scale.  Streams are keyed by
    the band index, so adding bands never perturbs existing ones.
    """
    from scipy.stats import ks_2samp

    from . import rng
    from .measure import BandDecomposition

    indices = sorted(set(int(k) for k in band_indices))
    if not indices or indices[0] < 1:
        raise ValueError("band indices must be integers >= 1")
    if n < 100:
        raise ValueError("need at least 100 draws per side")
    bands = BandDecomposition.build(model, 1.0 / (max(indices) + 1))
    by_index = {b.index: b for b in bands}

    out: list[BandCheck] = []
    for k in indices:
        band = by_index[k]
        gen_splits = rng.stream(seed, 0, rng.STREAM_SPLITS, (k,))
        gen_marks = rng.stream(seed, 0, rng.STREAM_MARKS, (k,))
        xi, _, _, z = draw_band_jumps(model, band, n, gen_splits, gen_marks)
        gen_direct = rng.stream(seed, 0, rng.STREAM_MARKS, (k, rng.INDEPENDENT_PAIR))
        direct = model.nu.band_inverse_cdf(band.lo, band.hi, gen_direct.random(n))
        p_exp = split_probability(band)
        out.append(BandCheck(
            index=k, n=n,
            ks_stat=float(ks_2samp(z, direct).statistic),
            p_split=float(np.mean(xi == 1)),
            p_split_expected=p_exp,
            binomial_se=math.sqrt(p_exp * (1.0 - p_exp) / n),
            ks_tol=ks_tol, se_mult=se_mult))
    return out
