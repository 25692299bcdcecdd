"""Tangent flow, Malliavin covariance, and non-degeneracy diagnostics.

The tangent flow ``Y`` is the pathwise derivative of a simulated trajectory
with respect to its starting point.  It multiplies one factor per diffusion
segment and one per big jump, reusing exactly the Gaussian draws and jump
marks that drove the path.  The reciprocal ``Ybar`` runs as its own
recursion (second order in the segment shift, exact at jumps), so the
product ``Y * Ybar`` acts as a built-in accuracy sensor: its deviation from
one measures discretisation error and shrinks like ``1/n_steps``.

``malliavin_covariance`` assembles the squared derivative of the terminal
value with respect to the noise.  Split-accepted jumps contribute through
the mark derivative of the amplitude; the substituted Gaussian noise
contributes through the same frozen per-segment variances that were applied
to the path, so the assembly matches the scheme at its own resolution.
The diagnostics estimate inverse moments of the covariance across
truncation levels, verify a pathwise lower bound driven by the model's
lower envelope, and compare the empirical Laplace transform of that bound's
jump content against a closed-form ceiling built from the plateau part of
the splitting weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from . import rng
from ._parallel import map_blocks
from .measure import BandDecomposition, LevyModel, substitution_scalars
from .simulate import (PathConfig, Trajectory, _model_lattice, sample_big_jumps,
                       simulate_path)


class DegeneracyError(RuntimeError):
    """A jump would multiply the tangent flow by (almost) zero."""


#: Jump factors with ``|1 + dx_c|`` below this threshold abort the flow.
DEGENERACY_TOL = 1e-12


# ---------------------------------------------------------------------------
# tangent flow


@dataclass
class TangentFlowState:
    """Tangent flow terminal values plus the per-node record behind them.

    ``history`` lists ``(time, Y, Ybar)`` at each jump time and at the
    horizon.  ``node_Y`` and ``node_Ybar`` hold the flow at every grid node
    (after the jump where there is one); ``jump_pre_Y`` and
    ``jump_pre_Ybar`` hold the values just before each jump, aligned with
    the trajectory's ``jump_node_idx``.  The covariance assembly and the
    pathwise lower bound read these directly.

    ``product_gap`` is ``max |Y * Ybar - 1|`` over every recorded value.
    Because the reciprocal is advanced by its own recursion rather than by
    dividing, the gap is a genuine error signal: jump factors keep the
    product exact, diffusion factors leave a residue that shrinks linearly
    in the step count.
    """

    Y: float
    Ybar: float
    history: list[tuple[float, float, float]]
    node_Y: np.ndarray
    node_Ybar: np.ndarray
    jump_pre_Y: np.ndarray
    jump_pre_Ybar: np.ndarray
    product_gap: float


def _segment_shifts(model: LevyModel, traj: Trajectory) -> np.ndarray:
    """Derivative increment ``u_i`` of each diffusion segment.

    The segment map is ``x -> x + b dt + sqrt(a dt) n`` with coefficients
    frozen at the left state, so its derivative factor is ``1 + u`` with
    ``u = b' dt + (sqrt(a))' sqrt(dt) n``.  Separable amplitudes have the
    closed form ``u = sigma'(x) (B dt + sqrt(A dt) n)``; other models fall
    back to centred differences on the same coefficient lattice the path
    evolution interpolated.
    """
    cfg = traj.config
    if cfg.scheme == "truncation_only":
        return np.zeros(traj.grid.size - 1)
    dt = np.diff(traj.grid)
    draws = traj.gaussian_increments.draws
    x_left = traj.states[:-1]
    sep = model.coeff.separable
    if sep is not None:
        B, A = substitution_scalars(model, traj.eps_effective)
        dsig = np.asarray(sep[1](x_left), dtype=float)
        return dsig * (B * dt + np.sqrt(A * dt) * draws)
    lattice = _model_lattice(model, cfg, traj.eps_effective)
    u = np.empty(dt.size)
    for i in range(dt.size):
        t0 = traj.grid[i]
        x = float(x_left[i])
        h = 1e-5 * (1.0 + abs(x))
        db = (lattice.drift(t0, x + h) - lattice.drift(t0, x - h)) / (2.0 * h)
        a0 = lattice.variance(t0, x)
        da = (lattice.variance(t0, x + h) - lattice.variance(t0, x - h)) / (2.0 * h)
        ds = da / (2.0 * math.sqrt(a0)) if a0 > 0.0 else 0.0
        u[i] = db * dt[i] + ds * math.sqrt(dt[i]) * draws[i]
    return u


def _jump_gains(model: LevyModel, traj: Trajectory):
    """Per logged jump: the gain ``dx_c``, the mark derivative ``dv_c``,
    the split outcome, and the mark, all at the pre-jump state."""
    jn = traj.jump_node_idx
    if jn.size == 0:
        e = np.empty(0)
        return e, e.copy(), np.empty(0, dtype=np.int8), e.copy()
    marks = np.array([ev.mark for ev in traj.events])
    xi = np.array([ev.xi for ev in traj.events], dtype=np.int8)
    x_pre = traj.states_pre[jn]
    sep = model.coeff.separable
    if sep is not None:
        gain = np.asarray(sep[1](x_pre), dtype=float) / marks
        dv = -np.asarray(sep[0](x_pre), dtype=float) / marks**2
        return np.broadcast_to(gain, marks.shape).astype(float), dv, xi, marks
    coeff = model.coeff
    if coeff.partials.get((1, 0)) is None or coeff.partials.get((0, 1)) is None:
        raise ValueError("tangent flow needs the (1, 0) and (0, 1) partials "
                         "of the jump amplitude")
    times = traj.grid[jn]
    gain = np.array([float(coeff.dx_tilde_c(t, m, x))
                     for t, m, x in zip(times, marks, x_pre)])
    dv = np.array([float(coeff.dv_tilde_c(t, m, x))
                   for t, m, x in zip(times, marks, x_pre)])
    return gain, dv, xi, marks


def simulate_tangent_flow(model: LevyModel, trajectory: Trajectory) -> TangentFlowState:
    """Evolve the tangent flow and its reciprocal along a trajectory.

    Nothing is resampled: the flow consumes the trajectory's recorded
    normal draws and jump marks.  Per diffusion segment ``Y`` multiplies
    ``1 + u`` and ``Ybar`` multiplies the cubic truncation of
    ``1/(1 + u)``, whose quadratic term carries the drift correction of the
    inverse process.  At a jump both sides use the exact factor
    ``1 + dx_c`` and its reciprocal, evaluated at the pre-jump state.

    Raises :class:`DegeneracyError` when ``|1 + dx_c|`` falls below
    ``DEGENERACY_TOL`` at any jump, since the flow is then not invertible.
    """
    u = _segment_shifts(model, trajectory)
    gain, _, _, _ = _jump_gains(model, trajectory)
    fac = 1.0 + gain
    if fac.size and np.min(np.abs(fac)) < DEGENERACY_TOL:
        j = int(np.argmin(np.abs(fac)))
        when = float(trajectory.grid[trajectory.jump_node_idx[j]])
        raise DegeneracyError(
            f"jump factor 1 + dx_c = {fac[j]:.3e} at t = {when:.6f}")

    jn = trajectory.jump_node_idx
    n_seg = u.size
    n_jump = jn.size
    # riffle segment and jump factors into evolution order: the factor of
    # segment i lands at position i plus the number of jumps at nodes <= i,
    # the factor of the j-th jump (node k) right after its segment, at k + j
    before = np.searchsorted(jn, np.arange(n_seg), side="right")
    seg_pos = np.arange(n_seg) + before
    factors = np.ones(n_seg + n_jump)
    recips = np.ones(n_seg + n_jump)
    factors[seg_pos] = 1.0 + u
    recips[seg_pos] = 1.0 - u * (1.0 - u * (1.0 - u))
    if n_jump:
        jump_pos = jn + np.arange(n_jump)
        factors[jump_pos] = fac
        recips[jump_pos] = 1.0 / fac
    cum_y = np.cumprod(factors)
    cum_r = np.cumprod(recips)

    n_nodes = trajectory.grid.size
    node_y = np.empty(n_nodes)
    node_r = np.empty(n_nodes)
    node_y[0] = node_r[0] = 1.0
    after = np.searchsorted(jn, np.arange(1, n_nodes), side="right")
    idx = np.arange(n_nodes - 1) + after
    node_y[1:] = cum_y[idx]
    node_r[1:] = cum_r[idx]
    if n_jump:
        pre_y = cum_y[jn + np.arange(n_jump) - 1]
        pre_r = cum_r[jn + np.arange(n_jump) - 1]
    else:
        pre_y = np.empty(0)
        pre_r = np.empty(0)

    gap = float(np.max(np.abs(node_y * node_r - 1.0)))
    if n_jump:
        gap = max(gap, float(np.max(np.abs(pre_y * pre_r - 1.0))))
    history = [(float(trajectory.grid[k]), float(node_y[k]), float(node_r[k]))
               for k in jn]
    history.append((float(trajectory.grid[-1]), float(node_y[-1]), float(node_r[-1])))
    return TangentFlowState(Y=float(node_y[-1]), Ybar=float(node_r[-1]),
                            history=history, node_Y=node_y, node_Ybar=node_r,
                            jump_pre_Y=pre_y, jump_pre_Ybar=pre_r, product_gap=gap)


# ---------------------------------------------------------------------------
# covariance assembly


@dataclass
class MalliavinRecord:
    """Covariance of the terminal value's noise derivative, by source.

    ``sigma == jump_part + gaussian_part`` holds bit for bit because the
    total is formed as that sum.  ``contributions`` has one entry per
    logged jump, in time order, and is exactly zero wherever the split
    variable came out 0.
    """

    sigma: float
    jump_part: float
    gaussian_part: float
    contributions: np.ndarray


def malliavin_covariance(model: LevyModel, trajectory: Trajectory,
                         flow: TangentFlowState) -> MalliavinRecord:
    """Assemble the covariance from the flow and the trajectory's noise.

    Each split-accepted jump contributes ``|Y_t Ybar_pre dv_c|**2`` with
    the mark derivative taken at the pre-jump state.  The Gaussian channel
    contributes ``Y_t**2`` times the ``Ybar**2``-weighted sum of the frozen
    per-segment variances recorded on the trajectory, which is the
    left-endpoint quadrature of the substituted noise intensity.
    """
    _, dv, xi, _ = _jump_gains(model, trajectory)
    y_t = flow.Y
    if xi.size:
        amp = y_t * flow.jump_pre_Ybar * dv
        contributions = np.where(xi == 1, amp * amp, 0.0)
    else:
        contributions = np.empty(0)
    jump_part = float(contributions.sum())
    variances = trajectory.gaussian_increments.variances
    gaussian_part = float(y_t * y_t * np.sum(flow.node_Ybar[:-1] ** 2 * variances))
    return MalliavinRecord(sigma=jump_part + gaussian_part, jump_part=jump_part,
                           gaussian_part=gaussian_part, contributions=contributions)


@dataclass
class CovarianceBound:
    """Pathwise floor ``(rho + t * alpha) / q_sup**2`` of the covariance.

    ``rho`` sums the lower envelope at split-accepted marks, ``alpha`` is
    the envelope's integral beyond the truncation level, and ``q_sup`` is
    ``sup_s |Y_s| * |Ybar_t|`` over the recorded flow values.
    """

    bound: float
    rho: float
    alpha: float
    q_sup: float


def _alpha_tail(model: LevyModel, eps_eff: float) -> float:
    """Integral of the lower envelope over marks beyond ``1/eps``, cached."""
    key = ("alpha_under", eps_eff)
    val = model._scalar_cache.get(key)
    if val is None:
        under = model.coeff.envelope_under
        val = float(model.nu.tail_integral(lambda v: float(under(v)), 1.0 / eps_eff))
        model._scalar_cache[key] = val
    return val


def covariance_lower_bound(model: LevyModel, trajectory: Trajectory,
                           flow: TangentFlowState) -> CovarianceBound:
    """Evaluate the floor that split successes and the Gaussian tail imply.

    The envelope's tail integral only enters when the trajectory carries
    substituted Gaussian noise; a truncation-only path keeps ``alpha = 0``
    because its covariance has no Gaussian channel to bound.
    """
    under = model.coeff.envelope_under
    if under is None:
        raise ValueError("model has no lower envelope")
    _, _, xi, marks = _jump_gains(model, trajectory)
    if xi.size:
        rho = float(np.sum(np.where(xi == 1, np.asarray(under(marks), dtype=float), 0.0)))
    else:
        rho = 0.0
    if trajectory.config.scheme == "truncation_only":
        alpha = 0.0
    else:
        alpha = _alpha_tail(model, trajectory.eps_effective)
    t = float(trajectory.grid[-1])
    sup_y = max(1.0, float(np.max(np.abs(flow.node_Y))))
    if flow.jump_pre_Y.size:
        sup_y = max(sup_y, float(np.max(np.abs(flow.jump_pre_Y))))
    q_sup = abs(flow.Ybar) * sup_y
    return CovarianceBound(bound=(rho + t * alpha) / (q_sup * q_sup),
                           rho=rho, alpha=alpha, q_sup=q_sup)


# ---------------------------------------------------------------------------
# inverse-moment diagnostics


@dataclass
class MomentRow:
    """One inverse-moment estimate at a truncation level."""

    M: float
    p: float
    inv_moment: float
    ci_lo: float
    ci_hi: float
    degeneracy_count: int
    heavy_tail: bool


@dataclass
class NondegeneracyReport:
    """Inverse moments of the covariance across truncation levels.

    ``growth_flags`` maps each moment order to True when the estimates
    increase strictly with ``M`` and at least one consecutive pair of
    bootstrap intervals fails to overlap, i.e. growth beyond noise.
    ``warnings`` collects weak-sector horizon and heavy-tail messages.
    """

    rows: list[MomentRow]
    warnings: list[str]
    growth_flags: dict[float, bool]


def _sigma_block(block, spec):
    lo, hi = block
    model = spec["model"]
    bands = spec["bands"]
    cfg0 = spec["cfg"]
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        cfg = replace(cfg0, path_index=i)
        traj = simulate_path(model, bands, cfg)
        flow = simulate_tangent_flow(model, traj)
        out[i - lo] = malliavin_covariance(model, traj, flow).sigma
    return out


def batch_covariances(model: LevyModel, bands: BandDecomposition, t: float,
                      n_paths: int, seed: int = 0, n_steps: int = 256,
                      workers: int = 1) -> np.ndarray:
    """Covariance of ``n_paths`` substituted-scheme paths at one level."""
    eps = 1.0 / bands.M
    cfg = PathConfig(T=t, eps=eps, n_steps=n_steps,
                     scheme="gaussian_substitution", seed=seed)
    substitution_scalars(model, eps)
    spec = {"model": model, "bands": bands, "cfg": cfg}
    parts = map_blocks(n_paths, _sigma_block, spec, workers=workers, block_size=512)
    if not parts:
        return np.empty(0)
    return np.concatenate([r for _, r in parts])


def _bootstrap_ci(values: np.ndarray, gen: np.random.Generator,
                  n_boot: int) -> tuple[float, float]:
    n = values.size
    means = np.empty(n_boot)
    chunk = max(1, int(2_000_000 // max(n, 1)))
    done = 0
    while done < n_boot:
        b = min(chunk, n_boot - done)
        idx = gen.integers(0, n, size=(b, n))
        means[done:done + b] = values[idx].mean(axis=1)
        done += b
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


def nondegeneracy_diagnostics(model: LevyModel, bands, t: float, p_list, N: int,
                              seed: int = 0, n_steps: int = 256, workers: int = 1,
                              n_boot: int = 1000) -> NondegeneracyReport:
    """Estimate ``E[sigma**-p]`` over a grid of truncation levels.

    ``bands`` is an iterable whose entries are either ready decompositions
    or plain numbers interpreted as levels ``M`` (so truncation ``1/M``).
    Paths with ``sigma == 0`` are counted as degenerate and excluded from
    the moments rather than crashing the estimate.  Each estimate carries a
    percentile bootstrap interval; a heavy-tail warning fires when the top
    percent of ``sigma**-p`` carries more than half the sum, and for the
    weak sector variant a horizon warning fires when ``t`` is at or below
    the guaranteed-moment threshold.
    """
    decomps = [b if isinstance(b, BandDecomposition)
               else BandDecomposition.build(model, 1.0 / float(b)) for b in bands]
    warnings: list[str] = []
    if model.sector.variant == "weak":
        for p in p_list:
            thr = model.sector.weak_time_threshold(float(p))
            if t <= thr:
                warnings.append(
                    f"weak sector: t = {t:g} is not above the order-{p:g} moment "
                    f"horizon {thr:g}; inverse moments may be unstable")
    rows: list[MomentRow] = []
    per_p: dict[float, list[MomentRow]] = {float(p): [] for p in p_list}
    for mi, dec in enumerate(decomps):
        sig = batch_covariances(model, dec, t, N, seed=seed, n_steps=n_steps,
                                workers=workers)
        degen = int(np.count_nonzero(sig == 0.0))
        vals = sig[sig > 0.0]
        gen = rng.stream(seed, 0, rng.STREAM_BOOTSTRAP, extra=(mi,))
        for p in p_list:
            p = float(p)
            if vals.size == 0:
                row = MomentRow(M=dec.M, p=p, inv_moment=math.nan, ci_lo=math.nan,
                                ci_hi=math.nan, degeneracy_count=degen,
                                heavy_tail=False)
            else:
                inv = vals ** (-p)
                lo, hi = _bootstrap_ci(inv, gen, n_boot)
                srt = np.sort(inv)
                top = max(1, int(0.01 * inv.size))
                heavy = bool(srt[-top:].sum() > 0.5 * srt.sum())
                if heavy:
                    warnings.append(
                        f"M = {dec.M:g}, p = {p:g}: top 1% of sigma**-p carries "
                        "over half the sum; the estimate is tail-dominated")
                row = MomentRow(M=dec.M, p=p, inv_moment=float(inv.mean()),
                                ci_lo=lo, ci_hi=hi, degeneracy_count=degen,
                                heavy_tail=heavy)
            rows.append(row)
            per_p[p].append(row)
    growth_flags: dict[float, bool] = {}
    for p, rs in per_p.items():
        rs = sorted(rs, key=lambda r: r.M)
        ests = [r.inv_moment for r in rs]
        increasing = len(ests) > 1 and all(b > a for a, b in zip(ests, ests[1:]))
        disjoint = any(rs[i + 1].ci_lo > rs[i].ci_hi for i in range(len(rs) - 1))
        growth_flags[p] = bool(increasing and disjoint)
    return NondegeneracyReport(rows=rows, warnings=warnings, growth_flags=growth_flags)


# ---------------------------------------------------------------------------
# Laplace bound on the covariance floor


@dataclass
class LaplaceRow:
    """Empirical transform vs analytic ceiling at one decay rate ``s``."""

    s: float
    empirical: float
    stderr: float
    bound: float
    ok: bool


@dataclass
class SectorGrowthRow:
    """Plateau measure of ``{envelope >= 1/u}`` and its ratio to ``ln u``.

    ``estimate`` carries the strong-sector closed-form growth value and is
    None for the weak variant, whose ratio tends to a constant instead.
    """

    u: float
    m_value: float
    ratio: float
    estimate: float | None


@dataclass
class LaplaceReport:
    """Laplace-transform ceiling check plus sector growth diagnostics.

    ``rows[k].ok`` records ``empirical <= bound + 3 stderr`` at each decay
    rate.  ``growing`` is True when the measured ratios increase strictly
    along the ``u`` grid, the signature of a sector whose inverse moments
    hold at every order.
    """

    rows: list[LaplaceRow]
    growth: list[SectorGrowthRow]
    growing: bool
    alpha_tail: float


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def laplace_bound(model: LevyModel, bands: BandDecomposition, t: float,
                  s_grid: np.ndarray) -> np.ndarray:
    """Analytic ceiling for ``E[exp(-s (rho + t alpha))]``.

    The split writes each band-conditional mark law as a bump component of
    weight ``eps_k`` plus a residual.  Multiplying by the band intensity,
    the bump dominates the measure ``eps_k * mass_k dv`` on the plateau
    (the central half of the cell, where the bump equals one).  The
    compound-count exponential formula then gives the ceiling
    ``exp(-t * sum_k eps_k mass_k int_plateau (1 - exp(-s c(v))) dv)`` with
    ``c`` the lower envelope; dropping the bump's shoulders and the
    ``t alpha`` shift only loosens it upward.
    """
    under = model.coeff.envelope_under
    if under is None:
        raise ValueError("model has no lower envelope")
    cells = bands.bands
    if not cells:
        return np.ones(np.asarray(s_grid, dtype=float).size)
    lo = np.array([b.center - 0.25 * b.width for b in cells])
    hi = np.array([b.center + 0.25 * b.width for b in cells])
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (hi + lo)[:, None] + half[:, None] * _GL_X[None, :]
    weights = half[:, None] * _GL_W[None, :]
    cvals = np.asarray(under(nodes), dtype=float)
    scale = np.array([b.eps_k * b.mass for b in cells])
    out = np.empty(np.asarray(s_grid, dtype=float).size)
    for j, s in enumerate(np.asarray(s_grid, dtype=float)):
        integrals = np.sum(weights * (-np.expm1(-s * cvals)), axis=1)
        out[j] = math.exp(-t * float(np.dot(scale, integrals)))
    return out


def _laplace_block(block, spec):
    lo, hi = block
    model = spec["model"]
    bands = spec["bands"]
    cfg0 = spec["cfg"]
    s = spec["s"]
    shift = spec["shift"]
    under = spec["under"]
    sums = np.zeros(s.size)
    sq = np.zeros(s.size)
    for i in range(lo, hi):
        cfg = replace(cfg0, path_index=i)
        stream = sample_big_jumps(model, bands, cfg)
        _, marks, _, xi, _, _ = stream.merged()
        if marks.size:
            rho = float(np.sum(np.where(xi == 1,
                                        np.asarray(under(marks), dtype=float), 0.0)))
        else:
            rho = 0.0
        vals = np.exp(-s * (rho + shift))
        sums += vals
        sq += vals * vals
    return sums, sq


def laplace_bound_check(model: LevyModel, bands, t: float, s_grid, N: int,
                        seed: int = 0, workers: int = 1,
                        u_grid=(1e2, 1e4, 1e8)) -> LaplaceReport:
    """Check the Laplace ceiling by simulation and report sector growth.

    Only the jump skeleton is sampled (counts, splits, marks); no path
    evolution is needed because the floor's jump content depends on the
    marks alone.  ``bands`` may be a decomposition or a plain level ``M``.
    Rates must be nonnegative; at ``s = 0`` both sides are exactly one.
    """
    if not isinstance(bands, BandDecomposition):
        bands = BandDecomposition.build(model, 1.0 / float(bands))
    s = np.asarray(s_grid, dtype=float)
    if s.size == 0 or np.any(s < 0.0):
        raise ValueError("s grid must be nonempty and nonnegative")
    under = model.coeff.envelope_under
    if under is None:
        raise ValueError("model has no lower envelope")
    eps = 1.0 / bands.M
    alpha = _alpha_tail(model, eps)
    cfg = PathConfig(T=t, eps=eps, seed=seed)
    spec = {"model": model, "bands": bands, "cfg": cfg, "s": s,
            "shift": t * alpha, "under": under}
    parts = map_blocks(N, _laplace_block, spec, workers=workers, block_size=2048)
    sums = np.zeros(s.size)
    sq = np.zeros(s.size)
    for _, (bs, bq) in parts:
        sums += bs
        sq += bq
    emp = sums / N
    var = np.maximum(sq - sums * sums / N, 0.0) / max(N - 1, 1)
    stderr = np.sqrt(var / N)
    ceiling = laplace_bound(model, bands, t, s)
    rows = [LaplaceRow(s=float(a), empirical=float(b), stderr=float(c),
                       bound=float(d), ok=bool(b <= d + 3.0 * c))
            for a, b, c, d in zip(s, emp, stderr, ceiling)]
    growth = sector_growth_rows(model, u_grid)
    growing = len(growth) > 1 and all(b.ratio > a.ratio
                                      for a, b in zip(growth, growth[1:]))
    return LaplaceReport(rows=rows, growth=growth, growing=growing, alpha_tail=alpha)


# ---------------------------------------------------------------------------
# sector growth criterion


def sector_measure_below(model: LevyModel, v_hi: float) -> float:
    """Plateau-weight measure of ``[1, v_hi]``.

    Sums ``eps_k`` times the overlap of each unit band's plateau
    ``(k + 1/4, k + 3/4)`` with the interval, over all bands regardless of
    any truncation level; this is the measure whose growth decides which
    inverse moments the sector weights can support.
    """
    if v_hi <= 1.25:
        return 0.0
    kmax = int(math.floor(v_hi))
    k = np.arange(1, kmax + 1, dtype=float)
    overlap = np.clip(np.minimum(k + 0.75, v_hi) - (k + 0.25), 0.0, None)
    return float(np.sum(np.asarray(model.sector.eps_k(k), dtype=float) * overlap))


def _envelope_level(under, level: float) -> float:
    """Largest ``v`` with ``under(v) >= level`` for a decreasing envelope."""
    if float(under(1.0)) < level:
        return 1.0
    hi = 2.0
    for _ in range(200):
        if float(under(hi)) < level:
            break
        hi *= 2.0
    else:
        raise ValueError("lower envelope does not decay below the requested level")
    return float(brentq(lambda v: float(under(v)) - level, 1.0, hi,
                        xtol=1e-10, rtol=1e-14))


def sector_growth_rows(model: LevyModel, u_grid) -> list[SectorGrowthRow]:
    """Measure ``m({envelope >= 1/u})`` against ``ln u`` on a grid.

    A ratio that keeps growing along the grid indicates the strong sector
    regime (all inverse moments finite); a ratio that levels off is the
    weak-sector signature.  For the strong variant the closed-form growth
    value ``eps_star / (2 alpha) * ((ln u)**(alpha/alpha2) - 2**alpha)`` is
    reported alongside for comparison.
    """
    under = model.coeff.envelope_under
    if under is None:
        raise ValueError("model has no lower envelope")
    sector = model.sector
    rows: list[SectorGrowthRow] = []
    for u in u_grid:
        u = float(u)
        if u <= 1.0:
            raise ValueError("u grid entries must exceed 1")
        v_hi = _envelope_level(under, 1.0 / u)
        m_val = sector_measure_below(model, v_hi)
        est = None
        if sector.variant == "strong":
            est = (sector.eps_star / (2.0 * sector.alpha)) * (
                math.log(u) ** (sector.alpha / sector.alpha2) - 2.0 ** sector.alpha)
        rows.append(SectorGrowthRow(u=u, m_value=m_val,
                                    ratio=m_val / math.log(u), estimate=est))
    return rows
