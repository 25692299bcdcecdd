"""Deterministic block-parallel map over path indices.

Work is cut into fixed-size contiguous index blocks that never depend on
the worker count, each worker computes whole blocks, and results come back
tagged by block in block order.  Because every path is keyed by its
absolute index and blocks are merged positionally, estimators built on the
merged arrays are bit-identical for any worker count.

The pool uses the fork start method and passes the shared payload through
a module global, so children inherit it by copy-on-write instead of
pickling it per task.  Platforms without fork fall back to inline
execution rather than risking re-import side effects under spawn.
"""

from __future__ import annotations

import multiprocessing
from typing import Any, Callable

_WORK: tuple[Callable, Any] | None = None

Block = tuple[int, int]


def _run_block(block: Block):
    fn, payload = _WORK
    return block, fn(block, payload)


def blocks_for(n_items: int, block_size: int) -> list[Block]:
    if n_items < 0 or block_size < 1:
        raise ValueError("need n_items >= 0 and block_size >= 1")
    return [(lo, min(lo + block_size, n_items))
            for lo in range(0, n_items, block_size)]


def map_blocks(n_items: int, fn: Callable[[Block, Any], Any], payload: Any,
               workers: int = 1, block_size: int = 256) -> list[tuple[Block, Any]]:
    """Apply ``fn((lo, hi), payload)`` per block, in block order."""
    global _WORK
    blocks = blocks_for(n_items, block_size)
    inline = workers is None or workers <= 1 or len(blocks) <= 1
    if not inline:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            inline = True
    if inline:
        return [(b, fn(b, payload)) for b in blocks]
    _WORK = (fn, payload)
    try:
        with ctx.Pool(processes=min(workers, len(blocks))) as pool:
            results = pool.map(_run_block, blocks)
    finally:
        _WORK = None
    results.sort(key=lambda item: item[0][0])
    return results
