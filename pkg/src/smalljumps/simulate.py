"""Path generation for the jump SDE and its small-jump substitution schemes.

A path combines two noise sources.  Jumps with transformed marks in
``[1, M)``, ``M = 1/eps``, form a finite-activity compound Poisson stream,
sampled band by band through the splitting construction.  The remaining
infinite-activity tail is either replaced by its compensator drift plus a
variance-matched Gaussian term (``gaussian_substitution``), dropped outright
(``truncation_only``), or pushed to a much finer level and treated as the
reference law (``reference``).

Evolution is Euler on the uniform time grid merged with the exact jump
times; jumps are never snapped to grid points, so the jump increment
``c(t, z, X(t-))`` is applied at the exact event time.  Between nodes the
state advances by ``b_eps * dt`` plus a normal with variance ``a_eps * dt``.
All randomness is keyed by ``(seed, path_index, stream)``; see ``rng``.

``run_coupled_batch`` at the bottom produces the coarse/fine terminal
samples that the distance estimators consume.  It couples the two levels
much harder than ``coupled_pair``: both sides read the same Brownian path
off a shared noise lattice, the fine side is replicated over independent
extension-jump streams, antithetic copies flip every Gaussian draw, and an
exactly mean-zero jump martingale is accumulated per test function as a
control variate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from ._backend import kernels
from ._parallel import map_blocks
from .measure import (
    Band,
    BandDecomposition,
    CoefficientLattice,
    LevyModel,
    substitution_scalars,
    frozen_variance_scalar,
)
from .splitting import BUMP, REJECTION_CAP, MinorizationError

__all__ = [
    "SCHEMES",
    "NOISE_REFINE",
    "PathConfig",
    "JumpEvent",
    "GaussianIncrements",
    "Trajectory",
    "BandJumps",
    "BigJumpStream",
    "sample_big_jumps",
    "simulate_path",
    "euler_transformed",
    "coupled_pair",
    "PairBatch",
    "run_coupled_batch",
    "run_terminals",
]

SCHEMES = ("gaussian_substitution", "truncation_only", "reference")

#: Time-resolution multiplier of a reference path relative to the level it
#: serves as reference for.
NOISE_REFINE = 4


@dataclass(frozen=True)
class PathConfig:
    """Everything that determines one path except the model itself.

    ``eps_ref`` is only consulted by the ``reference`` scheme; left ``None``
    it defaults to ``eps / 8``, the validated rule keeping the reference
    bias higher order than the effects being measured.  ``couple_big_jumps``
    controls whether the second member of a pair shares the big-jump
    randomness or draws an independent stream.
    """

    x0: float = 0.0
    T: float = 1.0
    eps: float = 0.1
    n_steps: int = 512
    scheme: str = "gaussian_substitution"
    eps_ref: float | None = None
    couple_big_jumps: bool = True
    seed: int = 0
    path_index: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if self.T <= 0.0:
            raise ValueError("T must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.eps_ref is not None and not 0.0 < self.eps_ref < self.eps:
            raise ValueError("need 0 < eps_ref < eps")

    @property
    def reference_eps(self) -> float:
        return self.eps_ref if self.eps_ref is not None else self.eps / 8.0

    def effective(self) -> tuple[float, int]:
        """(truncation level, uniform step count) after scheme resolution."""
        if self.scheme == "reference":
            return self.reference_eps, self.n_steps * NOISE_REFINE
        return self.eps, self.n_steps


@dataclass(frozen=True)
class JumpEvent:
    """One big jump: transformed mark ``mark`` on band ``band`` at ``time``,
    with its split record (``mark == v`` when ``xi``, else ``mark == u``)."""

    time: float
    band: int
    mark: float
    xi: int
    v: float
    u: float


@dataclass
class GaussianIncrements:
    """Per-segment standard normal draws and the variances applied to them."""

    draws: np.ndarray
    variances: np.ndarray


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    states_pre: np.ndarray
    events: list[JumpEvent]
    gaussian_increments: GaussianIncrements
    config: PathConfig
    eps_effective: float
    jump_node_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def terminal(self) -> float:
        return float(self.states[-1])


@dataclass
class BandJumps:
    band: Band
    times: np.ndarray
    xi: np.ndarray
    v: np.ndarray
    u: np.ndarray
    z: np.ndarray


@dataclass
class BigJumpStream:
    """Big-jump events grouped per band, plus a time-merged flat view."""

    per_band: list[BandJumps]

    def counts(self) -> np.ndarray:
        return np.array([bj.times.size for bj in self.per_band], dtype=np.int64)

    def merged(self):
        """Time-sorted flat arrays ``(times, mark, band, xi, v, u)``."""
        per = self.per_band
        if not per:
            return _empty_jump_data()
        times = np.concatenate([bj.times for bj in per])
        z = np.concatenate([bj.z for bj in per])
        band = np.concatenate([np.full(bj.times.size, bj.band.index, dtype=np.int64)
                               for bj in per])
        xi = np.concatenate([bj.xi for bj in per])
        v = np.concatenate([bj.v for bj in per])
        u = np.concatenate([bj.u for bj in per])
        order = np.argsort(times, kind="stable")
        return times[order], z[order], band[order], xi[order], v[order], u[order]


def _empty_jump_data():
    e = np.empty(0)
    return (e, e.copy(), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8),
            e.copy(), e.copy())


# ---------------------------------------------------------------------------
# jump sampling


def _draw_marks_flat(model: LevyModel, arrays: dict, counts: np.ndarray,
                     gen_splits: np.random.Generator, gen_marks: np.random.Generator,
                     gen_reject: np.random.Generator):
    """Vectorised split draws for every jump of every band at once.

    Per-band parameters are expanded with ``repeat`` and the residual
    rejection runs jointly over all pending jumps, so the number of
    generator calls per path does not grow with the band count.  Each jump
    always consumes one split uniform and one bump quantile whether or not
    the corresponding value ends up used; fixed consumption keeps coupled
    runs aligned draw for draw.
    """
    total = int(counts.sum())
    p_split = arrays["eps_k"] * arrays["width"] * BUMP.mass
    xi = (gen_splits.random(total) < np.repeat(p_split, counts)).astype(np.int8)
    if total == 0:
        e = np.empty(0)
        return xi, e, e.copy(), e.copy()
    center = np.repeat(arrays["center"], counts)
    width = np.repeat(arrays["width"], counts)
    lo = np.repeat(arrays["lo"], counts)
    hi = np.repeat(arrays["hi"], counts)
    mass = np.repeat(arrays["mass"], counts)
    eps_k = np.repeat(arrays["eps_k"], counts)

    v = center + width * BUMP.inverse_cdf(gen_marks.random(total))

    u = np.empty(total)
    pending = np.arange(total)
    rounds = 0
    while pending.size:
        if rounds >= REJECTION_CAP:
            raise MinorizationError("residual rejection exceeded its round cap; "
                                    "a band minorisation is violated")
        m = pending.size
        prop = model.nu.cells_inverse_cdf(lo[pending], hi[pending], gen_reject.random(m))
        dens = np.asarray(model.nu.density(prop), dtype=float)
        profile = BUMP((prop - center[pending]) / width[pending])
        accept_p = 1.0 - eps_k[pending] * profile * mass[pending] / dens
        keep = gen_reject.random(m) < accept_p
        u[pending[keep]] = prop[keep]
        pending = pending[~keep]
        rounds += 1
    z = np.where(xi == 1, v, u)
    return xi, v, u, z


def _sample_stream_arrays(model: LevyModel, bands: BandDecomposition, cfg: PathConfig,
                          extra: tuple[int, ...] = ()):
    """Flat band-major jump arrays ``(counts, times, xi, v, u, z)``.

    Jumps are laid out band by band in ascending band order with times
    sorted within each band, so slicing by ``counts`` recovers the per-band
    order statistics.  Every stream performs one vectorised call in
    band-major order; decompositions sharing a leading run of cells
    therefore agree draw for draw on the shared range (see ``rng``), which
    is what keeps reruns at nearby reference levels strongly correlated.
    """
    if not len(bands):
        empty = _empty_jump_data()
        return (np.empty(0, dtype=np.int64), empty[0], empty[3], empty[4],
                empty[5], empty[1])
    arrays = bands.arrays()
    gen_jumps = rng.stream(cfg.seed, cfg.path_index, rng.STREAM_JUMPS, extra)
    gen_times = rng.stream(cfg.seed, cfg.path_index, rng.STREAM_TIMES, extra)
    gen_marks = rng.stream(cfg.seed, cfg.path_index, rng.STREAM_MARKS, extra)
    gen_splits = rng.stream(cfg.seed, cfg.path_index, rng.STREAM_SPLITS, extra)
    gen_reject = rng.stream(cfg.seed, cfg.path_index, rng.STREAM_REJECT, extra)
    counts = gen_jumps.poisson(cfg.T * arrays["mass"])
    total = int(counts.sum())
    raw_times = gen_times.random(total) * cfg.T
    band_of = np.repeat(np.arange(counts.size), counts)
    times = raw_times[np.lexsort((raw_times, band_of))]
    xi, v, u, z = _draw_marks_flat(model, arrays, counts, gen_splits, gen_marks,
                                   gen_reject)
    return counts, times, xi, v, u, z


def _time_ordered(bands: BandDecomposition, sampled):
    """Band-major sample arrays -> (time-sorted jump data, sort permutation).

    The permutation lets callers re-sort any band-major per-jump side data
    (bridge refinements in particular) consistently with the jump arrays.
    """
    counts, times, xi, v, u, z = sampled
    if times.size == 0:
        return _empty_jump_data(), np.empty(0, dtype=np.int64)
    band_idx = np.repeat(bands.arrays()["index"], counts)
    order = np.argsort(times, kind="stable")
    return (times[order], z[order], band_idx[order], xi[order], v[order],
            u[order]), order


def _ordered_jumps(model: LevyModel, bands: BandDecomposition, cfg: PathConfig,
                   extra: tuple[int, ...] = ()):
    jump_data, _ = _time_ordered(bands, _sample_stream_arrays(model, bands, cfg, extra))
    return jump_data


def sample_big_jumps(model: LevyModel, bands: BandDecomposition, cfg: PathConfig) -> BigJumpStream:
    """Draw the big-jump stream for one path.

    Per band: a Poisson(T * m_k) count, uniform order-statistic times, and
    marks through the splitting draw.  Fully determined by
    ``(cfg.seed, cfg.path_index)``.
    """
    counts, times, xi, v, u, z = _sample_stream_arrays(model, bands, cfg)
    per_band: list[BandJumps] = []
    stop = np.cumsum(counts) if counts.size else np.empty(0, dtype=np.int64)
    for i, band in enumerate(bands):
        sl = slice(int(stop[i] - counts[i]), int(stop[i]))
        per_band.append(BandJumps(band=band, times=times[sl], xi=xi[sl],
                                  v=v[sl], u=u[sl], z=z[sl]))
    return BigJumpStream(per_band=per_band)


# ---------------------------------------------------------------------------
# grids and evolution


def _separate_collisions(jt: np.ndarray, uniform: np.ndarray, T: float) -> np.ndarray:
    """Nudge sorted jump times off uniform nodes and off each other.

    Exact float collisions have probability zero but would create
    zero-length segments; one-ulp nudges keep the merge well defined
    without reordering events.
    """
    for _ in range(4):
        bad = np.isin(jt, uniform)
        bad[1:] |= np.diff(jt) == 0.0
        if not bad.any():
            return jt
        jt = jt.copy()
        jt[bad] = np.nextafter(jt[bad], T + 1.0)
        jt.sort()
    return np.minimum(jt, np.nextafter(T, 0.0))


def _merge_grid(T: float, n_steps: int, jump_times: np.ndarray):
    """Uniform nodes merged with exact (sorted) jump times.

    Returns ``(nodes, seg_dt, has_jump, jump_slot, is_grid_end, kind)``:
    ``jump_slot[i]`` maps segment ``i`` to the index of the jump ending it
    (-1 for none); ``kind[m]`` tags node ``m`` as uniform (-1) or as jump
    ``j``, preserving the order in which uniform nodes appear.
    """
    uniform = np.linspace(0.0, T, n_steps + 1)
    jt = np.asarray(jump_times, dtype=float)
    if jt.size:
        jt = _separate_collisions(jt, uniform, T)
        pos = np.searchsorted(uniform, jt, side="left")
        nodes = np.insert(uniform, pos, jt)
        kind = np.insert(np.full(uniform.size, -1, dtype=np.int64), pos,
                         np.arange(jt.size, dtype=np.int64))
    else:
        nodes = uniform
        kind = np.full(uniform.size, -1, dtype=np.int64)
    seg_dt = np.diff(nodes)
    jump_slot = kind[1:]
    has_jump = (jump_slot >= 0).astype(np.uint8)
    is_grid_end = (jump_slot < 0).astype(np.uint8)
    return nodes, seg_dt, has_jump, jump_slot, is_grid_end, kind


def _family_kind(model: LevyModel) -> tuple[int, float, float] | None:
    """Kernel dispatch data for the shipped separable families."""
    p = model.params or {}
    if p.get("family") == "sine":
        return kernels.KIND_SINE, float(p["base"]), float(p["amplitude"])
    if p.get("family") == "constant":
        return kernels.KIND_CONSTANT, float(p["scale"]), 0.0
    return None


def _marks_per_segment(seg_count: int, jump_slot: np.ndarray, marks: np.ndarray) -> np.ndarray:
    out = np.zeros(seg_count)
    sel = jump_slot >= 0
    if marks.size:
        out[sel] = marks[jump_slot[sel]]
    return out


def _evolve_compiled(kind_data, x0, seg_dt, normals, marks_per_seg, has_jump,
                     is_grid_end, drift_scale, var_scale, frozen=False):
    kind, p0, p1 = kind_data
    n = seg_dt.size
    pre = np.empty(n)
    post = np.empty(n)
    kernels.evolve_path(kind, p0, p1, float(x0),
                        np.ascontiguousarray(seg_dt), np.ascontiguousarray(normals),
                        np.ascontiguousarray(marks_per_seg),
                        np.ascontiguousarray(has_jump), np.ascontiguousarray(is_grid_end),
                        float(drift_scale), float(var_scale), bool(frozen), pre, post)
    return pre, post


def _model_lattice(model, cfg, eps_eff):
    """Cached drift/variance lattice for models outside the closed families."""
    key = ("lattice", eps_eff, cfg.T)
    lattice = model._scalar_cache.get(key)
    if lattice is None:
        span = 10.0 + abs(cfg.x0)
        lattice = CoefficientLattice(model, eps_eff, cfg.T,
                                     (cfg.x0 - span, cfg.x0 + span))
        model._scalar_cache[key] = lattice
    return lattice


def _evolve_generic(model, cfg, eps_eff, nodes, seg_dt, normals, jump_slot, jump_z,
                    use_noise: bool):
    """Python evolution for models outside the compiled families.

    Separable amplitudes use their sigma closure with the scalar
    coefficient factors; everything else prices drift and variance per
    step through the cached coefficient lattice.  Returns
    ``(pre, post, variances)`` with the actually applied per-segment
    Gaussian variances.
    """
    coeff = model.coeff
    n = seg_dt.size
    pre = np.empty(n)
    post = np.empty(n)
    variances = np.zeros(n)
    x = float(cfg.x0)
    sep = coeff.separable
    if sep is not None:
        sigma = sep[0]
        B, A = substitution_scalars(model, eps_eff) if use_noise else (0.0, 0.0)
        for i in range(n):
            dt = seg_dt[i]
            s = float(sigma(x))
            variances[i] = s * s * A * dt
            x += s * B * dt + s * math.sqrt(A * dt) * normals[i]
            pre[i] = x
            j = jump_slot[i]
            if j >= 0:
                x += float(sigma(x)) / jump_z[j]
            post[i] = x
        return pre, post, variances
    lattice = _model_lattice(model, cfg, eps_eff) if use_noise else None
    for i in range(n):
        t = nodes[i]
        dt = seg_dt[i]
        if use_noise:
            av = lattice.variance(t, x)
            variances[i] = av * dt
            x += lattice.drift(t, x) * dt + math.sqrt(av * dt) * normals[i]
        pre[i] = x
        j = jump_slot[i]
        if j >= 0:
            x += float(coeff.tilde_c(nodes[i + 1], jump_z[j], x))
        post[i] = x
    return pre, post, variances


def _assemble_trajectory(model, cfg, eps_eff, nodes, seg_dt, normals, pre, post,
                         jump_slot, jump_data, var_scale, variances=None) -> Trajectory:
    times, z, band_idx, xi, v, u = jump_data
    states = np.empty(nodes.size)
    states_pre = np.empty(nodes.size)
    states[0] = states_pre[0] = cfg.x0
    states[1:] = post
    states_pre[1:] = pre
    events: list[JumpEvent] = []
    jump_nodes = np.flatnonzero(jump_slot >= 0) + 1
    for node in jump_nodes:
        j = int(jump_slot[node - 1])
        events.append(JumpEvent(time=float(nodes[node]), band=int(band_idx[j]),
                                mark=float(z[j]), xi=int(xi[j]), v=float(v[j]),
                                u=float(u[j])))
    if variances is None:
        sep = model.coeff.separable
        if var_scale > 0.0 and sep is not None:
            sig_left = np.asarray(sep[0](states[:-1]), dtype=float)
            variances = var_scale * sig_left**2 * seg_dt
        else:
            variances = np.zeros_like(seg_dt)
    return Trajectory(grid=nodes, states=states, states_pre=states_pre, events=events,
                      gaussian_increments=GaussianIncrements(draws=normals,
                                                             variances=variances),
                      config=cfg, eps_effective=eps_eff,
                      jump_node_idx=np.asarray(jump_nodes, dtype=np.int64))


def _evolve_from_jumps(model, cfg, eps_eff, n_steps, jump_data, normals_for,
                       use_noise) -> Trajectory:
    """Shared core: merge the grid, draw normals, evolve, assemble.

    ``normals_for(n_segments)`` supplies the standard draws so callers keep
    control of stream identity (standalone, pair member, batch lattice).
    """
    nodes, seg_dt, has_jump, jump_slot, is_grid_end, _ = _merge_grid(
        cfg.T, n_steps, jump_data[0])
    normals = normals_for(seg_dt.size)
    kind_data = _family_kind(model)
    if kind_data is not None:
        B, A = substitution_scalars(model, eps_eff) if use_noise else (0.0, 0.0)
        marks = _marks_per_segment(seg_dt.size, jump_slot, jump_data[1])
        pre, post = _evolve_compiled(kind_data, cfg.x0, seg_dt, normals, marks,
                                     has_jump, is_grid_end, B, A)
        return _assemble_trajectory(model, cfg, eps_eff, nodes, seg_dt, normals,
                                    pre, post, jump_slot, jump_data, A)
    pre, post, variances = _evolve_generic(model, cfg, eps_eff, nodes, seg_dt,
                                           normals, jump_slot, jump_data[1], use_noise)
    return _assemble_trajectory(model, cfg, eps_eff, nodes, seg_dt, normals,
                                pre, post, jump_slot, jump_data, 0.0, variances)


def simulate_path(model: LevyModel, bands: BandDecomposition | None,
                  cfg: PathConfig) -> Trajectory:
    """Generate one trajectory under ``cfg.scheme``.

    ``bands`` may be ``None`` (rebuilt from the effective truncation level)
    and is replaced on mismatch, which is what the ``reference`` scheme
    needs when it swaps ``eps`` for ``eps_ref`` internally.
    """
    eps_eff, n_eff = cfg.effective()
    if (bands is None or bands.lo != 1.0
            or abs(bands.M - 1.0 / eps_eff) > 1e-9 * bands.M):
        bands = BandDecomposition.build(model, eps_eff)
    jump_data = _ordered_jumps(model, bands, cfg)
    normals_for = lambda n: rng.stream(cfg.seed, cfg.path_index,
                                       rng.STREAM_NORMALS).standard_normal(n)
    use_noise = cfg.scheme != "truncation_only"
    return _evolve_from_jumps(model, cfg, eps_eff, n_eff, jump_data, normals_for,
                              use_noise)


def euler_transformed(model: LevyModel, cfg: PathConfig, n: int,
                      space_grid: int) -> Trajectory:
    """Time- and space-frozen Euler variant of the substitution scheme.

    Coefficients are evaluated at the state held at the most recent uniform
    node (time freezing) and the Gaussian tail variance replaces the exact
    integral above ``M`` by its sum over a mark lattice of step
    ``1/space_grid`` (space freezing).  As ``n`` and ``space_grid`` grow
    this converges to the ``simulate_path`` law; it exists to make that
    bias measurable.
    """
    if model.coeff.separable is None:
        raise NotImplementedError("the frozen Euler variant needs a separable amplitude")
    kind_data = _family_kind(model)
    eps_eff = cfg.eps
    bands = BandDecomposition.build(model, eps_eff)
    jump_data = _ordered_jumps(model, bands, cfg)
    nodes, seg_dt, has_jump, jump_slot, is_grid_end, _ = _merge_grid(
        cfg.T, n, jump_data[0])
    normals = rng.stream(cfg.seed, cfg.path_index,
                         rng.STREAM_NORMALS).standard_normal(seg_dt.size)
    B, _ = substitution_scalars(model, eps_eff)
    S = frozen_variance_scalar(model, M=1.0 / eps_eff, h=1.0 / space_grid)
    marks = _marks_per_segment(seg_dt.size, jump_slot, jump_data[1])
    if kind_data is not None:
        pre, post = _evolve_compiled(kind_data, cfg.x0, seg_dt, normals, marks,
                                     has_jump, is_grid_end, B, S, frozen=True)
    else:
        sigma = model.coeff.separable[0]
        pre = np.empty(seg_dt.size)
        post = np.empty(seg_dt.size)
        x = float(cfg.x0)
        xf = x
        for i in range(seg_dt.size):
            s = float(sigma(xf))
            x += s * B * seg_dt[i] + s * math.sqrt(S * seg_dt[i]) * normals[i]
            pre[i] = x
            if has_jump[i]:
                x += float(sigma(xf)) / marks[i]
            post[i] = x
            if is_grid_end[i]:
                xf = x
    # variance bookkeeping: recover the state each segment froze on (the
    # running value at the most recent uniform node)
    ends = np.flatnonzero(is_grid_end)
    n_before = np.searchsorted(ends, np.arange(seg_dt.size), side="left")
    sigma_fn = model.coeff.separable[0]
    frozen_states = np.concatenate(([cfg.x0], post[ends]))[n_before]
    sig = np.asarray(sigma_fn(frozen_states), dtype=float)
    variances = S * sig**2 * seg_dt
    return _assemble_trajectory(model, cfg, eps_eff, nodes, seg_dt, normals, pre,
                                post, jump_slot, jump_data, S, variances)


def _merge_jump_sources(jd_a, jd_b):
    """Union of two time-sorted jump streams, re-sorted by time.

    Returns the merged tuple and the order applied to the concatenated
    arrays, so per-jump side data can be carried along.
    """
    times = np.concatenate([jd_a[0], jd_b[0]])
    order = np.argsort(times, kind="stable")
    merged = tuple(np.concatenate([a, b])[order] for a, b in zip(jd_a, jd_b))
    return merged, order


def coupled_pair(model: LevyModel, bands: BandDecomposition | None, cfg: PathConfig,
                 eps_a: float, eps_b: float) -> tuple[Trajectory, Trajectory]:
    """A coarse/fine trajectory pair sharing all randomness above ``eps_a``.

    The fine member reuses the coarse jump and normal streams and adds
    jumps for ``(eps_b, eps_a]`` from dedicated extension streams, so
    ``eps_a == eps_b`` reproduces the same trajectory bit for bit.  With
    ``cfg.couple_big_jumps`` off the second member draws everything from an
    independent key instead (for variance comparisons).
    """
    if eps_b > eps_a:
        raise ValueError("need eps_b <= eps_a")
    if cfg.scheme == "reference":
        raise ValueError("coupled_pair builds its own fine member; pick "
                         "gaussian_substitution or truncation_only")
    use_noise = cfg.scheme != "truncation_only"
    cfg_a = replace(cfg, eps=eps_a, eps_ref=None)
    traj_a = simulate_path(model, bands, cfg_a)
    cfg_b = replace(cfg, eps=eps_b, eps_ref=None)
    if not cfg.couple_big_jumps:
        extra = (rng.INDEPENDENT_PAIR,)
        bands_b = BandDecomposition.build(model, eps_b)
        jd = _ordered_jumps(model, bands_b, cfg_b, extra)
        normals_for = lambda n: rng.stream(cfg.seed, cfg.path_index,
                                           rng.STREAM_NORMALS, extra).standard_normal(n)
        traj_b = _evolve_from_jumps(model, cfg_b, eps_b, cfg.n_steps, jd,
                                    normals_for, use_noise)
        return traj_a, traj_b
    bands_a = BandDecomposition.build(model, eps_a)
    jd_a = _ordered_jumps(model, bands_a, cfg_b)
    ext = BandDecomposition.build(model, eps_b, lo=bands_a.M)
    jd_e = _ordered_jumps(model, ext, cfg_b, extra=(rng.EXTENSION, 0)) \
        if len(ext) else _empty_jump_data()
    jd_union, _ = _merge_jump_sources(jd_a, jd_e)
    normals_for = lambda n: rng.stream(cfg.seed, cfg.path_index,
                                       rng.STREAM_NORMALS).standard_normal(n)
    traj_b = _evolve_from_jumps(model, cfg_b, eps_b, cfg.n_steps, jd_union,
                                normals_for, use_noise)
    return traj_a, traj_b


# ---------------------------------------------------------------------------
# noise lattice (coupled batch)


def _pin_brownian(W_nodes, dt_cell, n_cells, times, zetas, pinned):
    """Brownian values at ``times`` by bridge refinement of lattice cells.

    ``pinned`` maps a cell index to its time-sorted ``(t, W(t))`` pairs
    already fixed; each new point conditions on the current pins of its
    enclosing sub-interval.  Replaying the same ``(times, zetas)`` prefix
    against the same lattice therefore reproduces identical values, which
    is how coarse and fine paths agree on the Brownian motion at shared
    jump times.
    """
    out = np.empty(times.size)
    for j in range(times.size):
        t = float(times[j])
        k = min(int(t / dt_cell), n_cells - 1)
        pins = pinned.setdefault(k, [])
        lo_t = k * dt_cell
        lo_w = float(W_nodes[k])
        hi_t = (k + 1) * dt_cell
        hi_w = float(W_nodes[k + 1])
        insert_at = len(pins)
        for idx, (pt, pw) in enumerate(pins):
            if pt <= t:
                lo_t, lo_w = pt, pw
            else:
                hi_t, hi_w = pt, pw
                insert_at = idx
                break
        length = hi_t - lo_t
        delta = t - lo_t
        if length <= 0.0 or delta <= 0.0:
            w = lo_w
        elif delta >= length:
            w = hi_w
        else:
            w = (lo_w + (delta / length) * (hi_w - lo_w)
                 + float(zetas[j]) * math.sqrt(delta * (length - delta) / length))
        pins.insert(insert_at, (t, w))
        out[j] = w
    return out


def _node_brownian(kind, W_nodes, stride, pin_w):
    """Brownian value at every merged-grid node.

    Uniform nodes read the lattice directly (node ``m`` of the path grid is
    lattice node ``m * stride``); jump nodes take their pinned value.
    """
    is_u = kind < 0
    u_idx = np.cumsum(is_u) - 1
    w = np.empty(kind.size)
    w[is_u] = W_nodes[u_idx[is_u] * stride]
    if pin_w.size:
        w[~is_u] = pin_w[kind[~is_u]]
    return w


def _bin_linear(row, grid_lo, grid_step, n_grid, xs, wts):
    """Scatter time weights onto the state grid with linear interpolation.

    The same hat weights are used when evaluating functions of the state at
    jump times, so grid sums and event sums approximate the identical
    piecewise-linear functional; that shared operator is what keeps the
    control variate exactly mean-zero at any grid resolution.
    """
    pos = np.clip((xs - grid_lo) / grid_step, 0.0, n_grid - 1.0)
    j = np.minimum(pos.astype(np.int64), n_grid - 2)
    fr = pos - j
    np.add.at(row, j, wts * (1.0 - fr))
    np.add.at(row, j + 1, wts * fr)


@dataclass
class PairBatch:
    """Terminal samples of a coupled coarse/fine batch.

    ``xa``/``xb`` hold antithetic rows (plus, minus); ``xb`` has one column
    block per fine replica.  ``cv`` is the per-test-function replica-mean
    martingale control variate (exactly mean zero), aligned with the rows
    of the weight table the batch was given.  ``cv_quad`` holds three
    squared-increment martingales built on the shared Brownian path: the
    coarse ``(int sig dW)**2 - int sig**2 dt``, its replica-mean fine
    counterpart, and the aligned cross product minus the joint bracket.
    All three are mean zero by the isometry and soak up the even-order
    Gaussian mismatch that antithetic averaging folds into the square of
    the level difference.  Truncation terminals share the same jump draws
    with the substitution paths.
    """

    eps_a: float
    eps_b: float
    n_paths: int
    n_replicas: int
    seed: int
    xa: np.ndarray
    xb: np.ndarray
    xa_trunc: np.ndarray | None
    xb_trunc: np.ndarray | None
    cv: np.ndarray | None
    cv_quad: np.ndarray | None
    lambda1: float


def _pair_block(block, spec):
    lo_idx, hi_idx = block
    model: LevyModel = spec["model"]
    cfg: PathConfig = spec["cfg"]
    eps_a, eps_b = spec["eps_a"], spec["eps_b"]
    K = spec["n_replicas"]
    anti = spec["antithetic"]
    with_trunc = spec["include_truncation"]
    refine = spec["refine"]
    cv_table = spec["cv_table"]
    lam1 = spec["lambda1"]

    T = cfg.T
    n = cfg.n_steps
    n_fine = n * refine
    dt_c = T / n_fine
    sqrt_dt_c = math.sqrt(dt_c)
    bands_a = BandDecomposition.build(model, eps_a)
    ext = BandDecomposition.build(model, eps_b, lo=bands_a.M) if eps_b < eps_a \
        else None
    B_a, A_a = substitution_scalars(model, eps_a)
    B_b, A_b = substitution_scalars(model, eps_b)
    kind_data = _family_kind(model)
    if kind_data is None:
        raise NotImplementedError("the coupled batch runner supports the "
                                  "compiled amplitude families")

    L = hi_idx - lo_idx
    xa = np.empty((2, L))
    xb = np.empty((2, K, L))
    xa_t = np.empty(L) if with_trunc else None
    xb_t = np.empty(L) if with_trunc else None
    cv = None
    if cv_table is not None:
        xg, wmat = cv_table
        n_grid = xg.size
        grid_lo = float(xg[0])
        grid_step = float(xg[1] - xg[0])
        cv = np.zeros((wmat.shape[0], L))
        occ = np.zeros((L, n_grid))
        ev_x: list[np.ndarray] = []
        ev_w: list[np.ndarray] = []
        ev_path: list[np.ndarray] = []
        cvq = np.zeros((3, L))
        amp = model.coeff.separable[0]

    for i in range(lo_idx, hi_idx):
        li = i - lo_idx
        cfg_i = replace(cfg, path_index=i)
        jd_a, perm_a = _time_ordered(bands_a,
                                     _sample_stream_arrays(model, bands_a, cfg_i))
        ja_times = jd_a[0]

        g = rng.stream(cfg.seed, i, rng.STREAM_NORMALS).standard_normal(n_fine)
        W = np.empty(n_fine + 1)
        W[0] = 0.0
        np.cumsum(g, out=W[1:])
        W[1:] *= sqrt_dt_c

        zeta_a = rng.stream(cfg.seed, i,
                            rng.STREAM_BRIDGE).standard_normal(ja_times.size)[perm_a]
        pins_a: dict[int, list] = {}
        wj_a = _pin_brownian(W, dt_c, n_fine, ja_times, zeta_a, pins_a)

        nodes_a, seg_a, hasj_a, slot_a, end_a, kind_a = _merge_grid(T, n, ja_times)
        nrm_a = np.diff(_node_brownian(kind_a, W, refine, wj_a)) / np.sqrt(seg_a)
        marks_a = _marks_per_segment(seg_a.size, slot_a, jd_a[1])

        pre_a, post_a = _evolve_compiled(kind_data, cfg.x0, seg_a, nrm_a, marks_a,
                                         hasj_a, end_a, B_a, A_a)
        xa[0, li] = post_a[-1]
        if cv is not None:
            root_seg_a = np.sqrt(seg_a)
            sig_ap = amp(pre_a)
            s_ap = float((sig_ap * nrm_a) @ root_seg_a)
            v_ap = s_ap * s_ap - float(sig_ap**2 @ seg_a)
        if anti:
            pre_am, post_am = _evolve_compiled(kind_data, cfg.x0, seg_a, -nrm_a,
                                               marks_a, hasj_a, end_a, B_a, A_a)
            xa[1, li] = post_am[-1]
            if cv is not None:
                sig_am = amp(pre_am)
                s_am = -float((sig_am * nrm_a) @ root_seg_a)
                v_am = s_am * s_am - float(sig_am**2 @ seg_a)
        else:
            xa[1, li] = post_a[-1]
            if cv is not None:
                sig_am, s_am, v_am = sig_ap, s_ap, v_ap
        if cv is not None:
            cvq[0, li] = 0.5 * (v_ap + v_am)
            states_am = np.concatenate(([cfg.x0], post_am)) if anti else None
        if with_trunc:
            _, post_at = _evolve_compiled(kind_data, cfg.x0, seg_a, nrm_a, marks_a,
                                          hasj_a, end_a, 0.0, 0.0)
            xa_t[li] = post_at[-1]

        states_a = np.concatenate(([cfg.x0], post_a))
        if cv is not None:
            _bin_linear(occ[li], grid_lo, grid_step, n_grid, states_a[:-1], seg_a)

        for r in range(K):
            if ext is not None and len(ext):
                jd_e, perm_e = _time_ordered(
                    ext, _sample_stream_arrays(model, ext, cfg_i,
                                               extra=(rng.EXTENSION, r)))
            else:
                jd_e, perm_e = _empty_jump_data(), np.empty(0, dtype=np.int64)
            zeta_e = rng.stream(cfg.seed, i, rng.STREAM_BRIDGE,
                                (rng.EXTENSION, r)).standard_normal(jd_e[0].size)[perm_e]
            pins_r = {cell: list(p) for cell, p in pins_a.items()}
            wj_e = _pin_brownian(W, dt_c, n_fine, jd_e[0], zeta_e, pins_r)

            jd_u, order = _merge_jump_sources(jd_a, jd_e)
            pin_u = np.concatenate([wj_a, wj_e])[order]
            nodes_b, seg_b, hasj_b, slot_b, end_b, kind_b = _merge_grid(
                T, n_fine, jd_u[0])
            nrm_b = np.diff(_node_brownian(kind_b, W, 1, pin_u)) / np.sqrt(seg_b)
            marks_b = _marks_per_segment(seg_b.size, slot_b, jd_u[1])

            pre_b, post_b = _evolve_compiled(kind_data, cfg.x0, seg_b, nrm_b, marks_b,
                                             hasj_b, end_b, B_b, A_b)
            xb[0, r, li] = post_b[-1]
            if cv is not None:
                root_seg_b = np.sqrt(seg_b)
                sig_bp = amp(pre_b)
                s_bp = float((sig_bp * nrm_b) @ root_seg_b)
                v_bp = s_bp * s_bp - float(sig_bp**2 @ seg_b)
                cell = np.searchsorted(nodes_a, nodes_b[:-1], side="right") - 1
                x_bp = s_ap * s_bp - float((sig_ap[cell] * sig_bp) @ seg_b)
            if anti:
                pre_bm, post_bm = _evolve_compiled(kind_data, cfg.x0, seg_b, -nrm_b,
                                                   marks_b, hasj_b, end_b, B_b, A_b)
                xb[1, r, li] = post_bm[-1]
                if cv is not None:
                    sig_bm = amp(pre_bm)
                    s_bm = -float((sig_bm * nrm_b) @ root_seg_b)
                    v_bp = 0.5 * (v_bp + s_bm * s_bm - float(sig_bm**2 @ seg_b))
                    x_bp = 0.5 * (x_bp + s_am * s_bm
                                  - float((sig_am[cell] * sig_bm) @ seg_b))
            else:
                xb[1, r, li] = post_b[-1]
            if cv is not None:
                cvq[1, li] += v_bp / K
                cvq[2, li] += x_bp / K
            if with_trunc and r == 0:
                _, post_bt = _evolve_compiled(kind_data, cfg.x0, seg_b, nrm_b,
                                              marks_b, hasj_b, end_b, 0.0, 0.0)
                xb_t[li] = post_bt[-1]

            if cv is not None and jd_e[0].size:
                seg_of = np.searchsorted(nodes_a, jd_e[0], side="right") - 1
                ev_x.append(states_a[seg_of])
                ev_w.append(1.0 / (jd_e[1] * K))
                ev_path.append(np.full(jd_e[0].size, li, dtype=np.int64))

    out = {"xa": xa, "xb": xb}
    if with_trunc:
        out["xa_trunc"] = xa_t
        out["xb_trunc"] = xb_t
    if cv is not None:
        cv -= lam1 * (occ @ wmat.T).T
        if ev_x:
            ex = np.concatenate(ev_x)
            ew = np.concatenate(ev_w)
            ep = np.concatenate(ev_path)
            for f in range(wmat.shape[0]):
                np.add.at(cv[f], ep, np.interp(ex, xg, wmat[f]) * ew)
        out["cv"] = cv
        out["cv_quad"] = cvq
    return out


def run_coupled_batch(model: LevyModel, cfg: PathConfig, eps_a: float, eps_b: float,
                      n_paths: int, n_replicas: int = 4, antithetic: bool = True,
                      include_truncation: bool = True, cv_table=None,
                      workers: int = 1, block_size: int = 256) -> PairBatch:
    """Coupled coarse/fine terminal samples for distance estimation.

    Per path index the runner draws one coarse jump stream, one Brownian
    lattice at the fine resolution, and ``n_replicas`` independent
    extension-jump streams for ``(eps_b, eps_a]``.  Both levels integrate
    against the same Brownian path (bridge-pinned at jump times), antithetic
    copies negate every Gaussian draw, and truncation variants reuse the
    jump draws with drift and variance forced to zero, so the coarse/fine
    difference isolates the substitution effect at level ``eps_a``.

    ``cv_table = (x_grid, weights)`` activates the martingale control
    variates.  For each weight row ``w`` (the jump amplitude times a smooth
    shape; the test function's derivative is applied by the caller) the
    statistic sums ``w(X_a(t-)) / v`` over extension jumps minus its exact
    compensator along the coarse path.  Both terms evaluate ``w`` through
    the identical piecewise-linear operator, which makes the variate mean
    zero by construction rather than up to quadrature error.  The table
    also switches on the squared-increment variates ``cv_quad`` described
    on the batch dataclass, again mean zero exactly.

    Results depend only on the model, config, level pair and sampling
    options; worker count and block size never change them.
    """
    if eps_b > eps_a:
        raise ValueError("need eps_b <= eps_a")
    if cfg.scheme != "gaussian_substitution":
        raise ValueError("the batch runner derives truncation variants itself; "
                         "configure scheme='gaussian_substitution'")
    if n_replicas < 1:
        raise ValueError("need at least one fine replica")
    if _family_kind(model) is None:
        raise NotImplementedError("the coupled batch runner supports the "
                                  "compiled amplitude families")
    refine = NOISE_REFINE if eps_b < eps_a else 1
    # warm every per-model cache before forking so children inherit them
    bands_a = BandDecomposition.build(model, eps_a)
    if eps_b < eps_a:
        BandDecomposition.build(model, eps_b, lo=bands_a.M)
    B_a, _ = substitution_scalars(model, eps_a)
    B_b, _ = substitution_scalars(model, eps_b)
    # intensity of 1/v against the extension bands: the drift scalars are
    # exactly the small-jump first moments, so their difference is the
    # compensator rate of the control-variate martingale
    lam1 = B_a - B_b if eps_b < eps_a else 0.0
    spec = {
        "model": model, "cfg": cfg, "eps_a": eps_a, "eps_b": eps_b,
        "n_replicas": n_replicas, "antithetic": antithetic,
        "include_truncation": include_truncation, "refine": refine,
        "cv_table": cv_table, "lambda1": lam1,
    }
    xa = np.empty((2, n_paths))
    xb = np.empty((2, n_replicas, n_paths))
    xa_t = np.empty(n_paths) if include_truncation else None
    xb_t = np.empty(n_paths) if include_truncation else None
    cv = np.empty((cv_table[1].shape[0], n_paths)) if cv_table is not None else None
    cvq = np.empty((3, n_paths)) if cv_table is not None else None
    for (lo, hi), res in map_blocks(n_paths, _pair_block, spec, workers=workers,
                                    block_size=block_size):
        xa[:, lo:hi] = res["xa"]
        xb[:, :, lo:hi] = res["xb"]
        if include_truncation:
            xa_t[lo:hi] = res["xa_trunc"]
            xb_t[lo:hi] = res["xb_trunc"]
        if cv is not None:
            cv[:, lo:hi] = res["cv"]
            cvq[:, lo:hi] = res["cv_quad"]
    return PairBatch(eps_a=eps_a, eps_b=eps_b, n_paths=n_paths,
                     n_replicas=n_replicas, seed=cfg.seed, xa=xa, xb=xb,
                     xa_trunc=xa_t, xb_trunc=xb_t, cv=cv, cv_quad=cvq,
                     lambda1=lam1)


def _terminal_block(block, spec):
    lo, hi = block
    model: LevyModel = spec["model"]
    cfg: PathConfig = spec["cfg"]
    bands = spec["bands"]
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        out[i - lo] = simulate_path(model, bands, replace(cfg, path_index=i)).terminal
    return out


def run_terminals(model: LevyModel, cfg: PathConfig, n_paths: int,
                  workers: int = 1, block_size: int = 2048) -> np.ndarray:
    """Terminal states of ``n_paths`` standalone paths, merged by index."""
    eps_eff, _ = cfg.effective()
    bands = BandDecomposition.build(model, eps_eff)
    if model.coeff.separable is not None:
        substitution_scalars(model, eps_eff)
    spec = {"model": model, "cfg": cfg, "bands": bands}
    out = np.empty(n_paths)
    for (lo, hi), res in map_blocks(n_paths, _terminal_block, spec,
                                    workers=workers, block_size=block_size):
        out[lo:hi] = res
    return out
