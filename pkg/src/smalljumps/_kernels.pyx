# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled path-evolution kernel.

Mirror of ``_kernels_py.py``; see that module for the full contract.  The
two implementations must stay semantically identical: the parity test runs
both on the same inputs and compares bitwise.
"""

from libc.math cimport sin, sqrt

KIND_CONSTANT = 0
KIND_SINE = 1


cdef inline double _sigma(int kind, double p0, double p1, double x) nogil:
    if kind == 1:
        return p0 + p1 * sin(x)
    return p0


def evolve_path(int kind, double p0, double p1, double x0,
                double[::1] seg_dt, double[::1] normals, double[::1] jump_mark,
                unsigned char[::1] has_jump, unsigned char[::1] is_grid_end,
                double drift_scale, double var_scale, bint frozen,
                double[::1] pre, double[::1] post):
    """Advance one path; fills ``pre``/``post``, returns the terminal state."""
    cdef double x = x0
    cdef double xf = x0
    cdef double s, dt, base
    cdef Py_ssize_t i, n = seg_dt.shape[0]
    with nogil:
        for i in range(n):
            base = xf if frozen else x
            s = _sigma(kind, p0, p1, base)
            dt = seg_dt[i]
            x = x + s * drift_scale * dt + s * sqrt(var_scale * dt) * normals[i]
            pre[i] = x
            if has_jump[i]:
                base = xf if frozen else x
                x = x + _sigma(kind, p0, p1, base) / jump_mark[i]
            post[i] = x
            if frozen and is_grid_end[i]:
                xf = x
    return x
