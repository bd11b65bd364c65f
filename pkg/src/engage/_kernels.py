"""Compiled loops for the fused batch-norm/ReLU/pool stage.

Each kernel walks the full-resolution tensor once; the numpy equivalents
need a separate strided pass per pooling offset and per operation.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def pool_select(x, scale, ph, pw):
    """Per window, the row-major-first element maximizing ``scale[c] * x``.

    Returns ``(value, index)`` with index in ``0 .. ph*pw-1``.  A zero scale
    makes every element tie, so index 0 is chosen.
    """
    N, C, H, W = x.shape
    Ho, Wo = H // ph, W // pw
    best = np.empty((N, C, Ho, Wo), dtype=x.dtype)
    arg = np.zeros((N, C, Ho, Wo), dtype=np.uint8)
    for n in range(N):
        for c in range(C):
            s = scale[c]
            for io in range(Ho):
                for jo in range(Wo):
                    v0 = x[n, c, io * ph, jo * pw]
                    bv, bk = v0, 0
                    if s != 0:
                        k = 0
                        for i in range(ph):
                            for j in range(pw):
                                v = x[n, c, io * ph + i, jo * pw + j]
                                if (s > 0 and v > bv) or (s < 0 and v < bv):
                                    bv, bk = v, k
                                k += 1
                    best[n, c, io, jo] = bv
                    arg[n, c, io, jo] = bk
    return best, arg


@numba.njit(cache=True)
def affine_scatter(x, a, b, g, arg, ph, pw):
    """``dx = a[c] * x + b[c]``, plus ``g`` added at each window's selected element."""
    N, C, H, W = x.shape
    Ho, Wo = g.shape[2], g.shape[3]
    dx = np.empty_like(x)
    for n in range(N):
        for c in range(C):
            ac, bc = a[c], b[c]
            for i in range(H):
                for j in range(W):
                    dx[n, c, i, j] = ac * x[n, c, i, j] + bc
            for io in range(Ho):
                for jo in range(Wo):
                    k = arg[n, c, io, jo]
                    dx[n, c, io * ph + k // pw, jo * pw + k % pw] += g[n, c, io, jo]
    return dx


@numba.njit(cache=True)
def im2col(xp, kh, kw, cols):
    """``cols[c, i, j, h, w] = xp[c, h + i, w + j]`` for a padded ``(C, H+kh-1, W+kw-1)`` sample."""
    C, _, _, H, W = cols.shape
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                for h in range(H):
                    for w in range(W):
                        cols[c, i, j, h, w] = xp[c, h + i, w + j]


@numba.njit(cache=True)
def col2im(dc, dxp):
    """Adjoint of :func:`im2col`: scatter-add column gradients into the padded sample."""
    C, kh, kw, H, W = dc.shape
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                for h in range(H):
                    for w in range(W):
                        dxp[c, h + i, w + j] += dc[c, i, j, h, w]
