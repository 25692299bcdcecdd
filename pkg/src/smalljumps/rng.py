"""Deterministic per-path random streams.

Every path owns four independent generator streams, derived from
``(seed, path_index, stream_tag)`` through :class:`numpy.random.SeedSequence`
with a counter-based bit generator (Philox).  Construction is pure: the same
key always yields the same stream, regardless of worker layout or call order,
which is what makes batch results independent of the worker count and lets a
coarse/fine path pair share draws by construction.

Stream tags
-----------
``STREAM_JUMPS``
    Per-band Poisson counts, consumed in ascending band order.
``STREAM_MARKS``
    The bump quantile (V draw), one uniform per jump in (band, jump) order.
``STREAM_SPLITS``
    The Bernoulli split indicators, one uniform per jump, same order.
``STREAM_NORMALS``
    Standard normal increments for the Gaussian part, one per time segment.

Each stream serves exactly one purpose and is consumed in band-major jump
order, with one vectorised call per purpose wherever possible.  Runs whose
band decompositions share a leading run of cells then agree draw for draw
on that shared range: the counts vectors, times, quantiles and split flags
all live in the prefix of their respective calls.  That alignment is what
makes reruns at a finer reference level reuse most of the coarser run's
randomness instead of resampling it.

The fixed consumption order matters: a run truncated at a smaller jump range
consumes a prefix of the draws of a larger run, so shared bands produce
bit-identical jumps.  Vectorised numpy draws fill their output sequentially
from the bit stream, which preserves this prefix property (covered by a
regression test, since it is a behavioural detail of numpy).
"""

from __future__ import annotations

import numpy as np

STREAM_JUMPS = 0
STREAM_MARKS = 1
STREAM_SPLITS = 2
STREAM_NORMALS = 3
#: Brownian-bridge refinements used when a noise lattice is conditioned at
#: exact jump times (coupled batch runs); one draw per jump, in band-major
#: jump order.
STREAM_BRIDGE = 4
#: Jump times, one uniform per jump in band-major order.
STREAM_TIMES = 5
#: Residual rejection randomness: each round consumes one proposal quantile
#: and one acceptance uniform per still-pending jump.
STREAM_REJECT = 6
#: Bootstrap resampling inside diagnostics reports; not per-path, so it is
#: keyed with path index 0 and the report grid position as the extra key.
STREAM_BOOTSTRAP = 7

#: Extra key word used for the second member of an uncoupled pair, so that
#: deliberately independent runs never collide with the base streams.
INDEPENDENT_PAIR = 1

#: Extra key word for the extension jump range of a coupled pair: the finer
#: path's additional cells draw from ``(tag, EXTENSION, replica)`` streams,
#: leaving the base streams untouched so the shared range stays bit-equal.
EXTENSION = 2


def stream(seed: int, path_index: int, tag: int, extra: tuple[int, ...] = ()) -> np.random.Generator:
    """Return the generator for one (path, stream) pair.

    Parameters
    ----------
    seed : int
        Experiment-level seed (64-bit).
    path_index : int
        Global index of the path; the parallel runner assigns disjoint index
        ranges to workers, so this is the only coordinate workers differ in.
    tag : int
        One of the ``STREAM_*`` constants.
    extra : tuple of int, optional
        Additional key words (e.g. ``(INDEPENDENT_PAIR,)``).
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path_index), int(tag)) + tuple(int(e) for e in extra))
    return np.random.Generator(np.random.Philox(ss))
