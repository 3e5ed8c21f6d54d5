"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Accumulation orders are kept identical on purpose so the two backends agree
bit for bit.
"""
import numpy as np

BACKEND = "numpy"


def _span(start, stride, count):
    return slice(start, start + stride * (count - 1) + 1, stride)


def im2col(xp, k, stride, dilation, ho, wo):
    """Unfold a padded (N, C, Hp, Wp) batch into a (C*k*k, N*ho*wo) matrix."""
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    for i in range(k):
        rows = _span(i * dilation, stride, ho)
        for j in range(k):
            win = xp[:, :, rows, _span(j * dilation, stride, wo)]
            cols[:, i, j] = win.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(cols, n, c, hp, wp, k, stride, dilation, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add columns back into a padded batch."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    blocks = cols.reshape(c, k, k, n, ho, wo)
    for i in range(k):
        rows = _span(i * dilation, stride, ho)
        for j in range(k):
            out[:, :, rows, _span(j * dilation, stride, wo)] += blocks[:, i, j].transpose(1, 0, 2, 3)
    return out


def box_mean(padded, window):
    """Valid-mode boxcar mean of a 2-D float64 array."""
    h = padded.shape[0] - window + 1
    w = padded.shape[1] - window + 1
    acc = np.zeros((h, w), dtype=np.float64)
    for i in range(window):
        for j in range(window):
            acc += padded[i:i + h, j:j + w]
    return acc / (window * window)


def fill_evenodd(edges, out, r0, r1, c0, c1):
    """OR the even-odd interior of one polygon into ``out`` (uint8, in place).

    ``edges`` is (E, 4) float64 of (x0, y0, x1, y1) in pixel units, where pixel
    (r, c) has its center at (c + 0.5, r + 0.5). Only rows [r0, r1) and
    columns [c0, c1) are visited.
    """
    x0, y0, x1, y1 = edges[:, 0], edges[:, 1], edges[:, 2], edges[:, 3]
    px = np.arange(c0, c1, dtype=np.float64) + 0.5
    for r in range(r0, r1):
        py = r + 0.5
        hit = (y0 > py) != (y1 > py)
        if not hit.any():
            continue
        ex0, ey0, ex1, ey1 = x0[hit], y0[hit], x1[hit], y1[hit]
        xint = (ex1 - ex0) * (py - ey0) / (ey1 - ey0) + ex0
        count = (px[:, None] < xint[None, :]).sum(axis=1)
        out[r, c0:c1] |= (count & 1).astype(np.uint8)
