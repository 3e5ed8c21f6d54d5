# Compiled twins of the kernels in _pykernels.py. Loop orders mirror the numpy
# versions so both backends produce identical bits.
import numpy as np

ctypedef fused real:
    float
    double

BACKEND = "cython"


def im2col(real[:, :, :, ::1] xp, int k, int stride, int dilation, int ho, int wo):
    cdef Py_ssize_t n_img = xp.shape[0]
    cdef Py_ssize_t c = xp.shape[1]
    if real is float:
        out = np.empty((c * k * k, n_img * ho * wo), dtype=np.float32)
    else:
        out = np.empty((c * k * k, n_img * ho * wo), dtype=np.float64)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t ci, i, j, n, oh, ow, row, base, hi, wi0
    with nogil:
        for ci in range(c):
            for i in range(k):
                for j in range(k):
                    row = (ci * k + i) * k + j
                    wi0 = j * dilation
                    for n in range(n_img):
                        for oh in range(ho):
                            hi = oh * stride + i * dilation
                            base = (n * ho + oh) * wo
                            for ow in range(wo):
                                cols[row, base + ow] = xp[n, ci, hi, wi0 + ow * stride]
    return out


def col2im(real[:, ::1] cols, int n_img, int c, int hp, int wp, int k,
           int stride, int dilation, int ho, int wo):
    if real is float:
        out = np.zeros((n_img, c, hp, wp), dtype=np.float32)
    else:
        out = np.zeros((n_img, c, hp, wp), dtype=np.float64)
    cdef real[:, :, :, ::1] dst = out
    cdef Py_ssize_t ci, i, j, n, oh, ow, row, base, hi, wi0
    with nogil:
        for i in range(k):
            for j in range(k):
                wi0 = j * dilation
                for ci in range(c):
                    row = (ci * k + i) * k + j
                    for n in range(n_img):
                        for oh in range(ho):
                            hi = oh * stride + i * dilation
                            base = (n * ho + oh) * wo
                            for ow in range(wo):
                                dst[n, ci, hi, wi0 + ow * stride] += cols[row, base + ow]
    return out


def box_mean(double[:, ::1] padded, int window):
    cdef Py_ssize_t h = padded.shape[0] - window + 1
    cdef Py_ssize_t w = padded.shape[1] - window + 1
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] res = out
    cdef double acc
    cdef double area = window * window
    cdef Py_ssize_t r, c, i, j
    with nogil:
        for r in range(h):
            for c in range(w):
                acc = 0.0
                for i in range(window):
                    for j in range(window):
                        acc = acc + padded[r + i, c + j]
                res[r, c] = acc / area
    return out


def fill_evenodd(double[:, ::1] edges, unsigned char[:, ::1] out,
                 int r0, int r1, int c0, int c1):
    cdef Py_ssize_t n_edges = edges.shape[0]
    xbuf = np.empty(max(n_edges, 1), dtype=np.float64)
    cdef double[::1] xint = xbuf
    cdef Py_ssize_t r, c, e, m, cnt
    cdef double py, px, ex0, ey0, ex1, ey1
    with nogil:
        for r in range(r0, r1):
            py = r + 0.5
            m = 0
            for e in range(n_edges):
                ex0 = edges[e, 0]
                ey0 = edges[e, 1]
                ex1 = edges[e, 2]
                ey1 = edges[e, 3]
                if (ey0 > py) != (ey1 > py):
                    xint[m] = (ex1 - ex0) * (py - ey0) / (ey1 - ey0) + ex0
                    m += 1
            if m == 0:
                continue
            for c in range(c0, c1):
                px = c + 0.5
                cnt = 0
                for e in range(m):
                    if px < xint[e]:
                        cnt += 1
                if cnt & 1:
                    out[r, c] = 1
