"""Pure-Python path-evolution kernel, the fallback for the compiled core.

Semantics must match ``_kernels.pyx`` exactly: the test suite runs both on
identical inputs and requires bit-identical output, and the benchmark script
reports their speed ratio.  Keep the two in lockstep when editing.

The kernel advances one path through its merged event grid.  Segment ``i``
covers ``seg_dt[i]`` of time, ends with an optional jump of transformed mark
``jump_mark[i]``, and consumes one standard normal.  Amplitudes are the two
shipped separable families, selected by ``kind``; general coefficients take
the slow path in the simulator instead of going through a kernel.

With ``frozen`` set, drift, noise, and jump amplitudes are evaluated at the
state recorded at the most recent uniform grid node rather than the running
state; ``is_grid_end[i]`` marks segments whose right endpoint is a uniform
node.  This is the time-frozen Euler variant used for bias studies.
"""

import math

KIND_CONSTANT = 0
KIND_SINE = 1


def _sigma(kind, p0, p1, x):
    if kind == KIND_SINE:
        return p0 + p1 * math.sin(x)
    return p0


def evolve_path(kind, p0, p1, x0, seg_dt, normals, jump_mark, has_jump,
                is_grid_end, drift_scale, var_scale, frozen, pre, post):
    """Advance one path; fills ``pre``/``post`` with node left limits and
    post-jump values, returns the terminal state.

    ``drift_scale`` and ``var_scale`` are the scalar small-jump factors: the
    drift increment is ``sigma(x) * drift_scale * dt`` and the Gaussian
    standard deviation ``sigma(x) * sqrt(var_scale * dt)``.  A truncation
    run passes zeros and still consumes its normals, so schemes sharing a
    seed stay coupled draw for draw.
    """
    x = float(x0)
    xf = x
    n = seg_dt.shape[0]
    for i in range(n):
        base = xf if frozen else x
        s = _sigma(kind, p0, p1, base)
        dt = seg_dt[i]
        x = x + s * drift_scale * dt + s * math.sqrt(var_scale * dt) * normals[i]
        pre[i] = x
        if has_jump[i]:
            base = xf if frozen else x
            x = x + _sigma(kind, p0, p1, base) / jump_mark[i]
        post[i] = x
        if frozen and is_grid_end[i]:
            xf = x
    return x
