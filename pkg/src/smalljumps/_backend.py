"""Kernel backend selection.

The hot per-segment evolution loop exists twice: a Cython extension built at
install time and a pure-Python module with identical semantics.  Import the
compiled one when present, fall back silently otherwise; ``COMPILED`` tells
callers (and the benchmark script) which one is live.
"""

try:
    from . import _kernels as kernels

    COMPILED = True
except ImportError:  # pragma: no cover - exercised only on fallback installs
    from . import _kernels_py as kernels

    COMPILED = False

__all__ = ["kernels", "COMPILED"]
