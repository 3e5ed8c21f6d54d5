"""Differentiable layer operations on :class:`~floodfuse.tensor.Tensor`.

All image tensors use NCHW layout.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import kernels
from .tensor import Tensor, accumulate, make_result


def conv_output_size(size, k, stride, dilation, padding):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, dilation=1, padding=0):
    """Cross-correlation with optional stride, dilation and zero padding."""
    n, c, h, w = x.shape
    co, ci, k, k2 = weight.shape
    if ci != c:
        raise ValueError(
            f"conv2d channel mismatch: input {tuple(x.shape)} has {c} channels, "
            f"kernel {tuple(weight.shape)} expects {ci}"
        )
    if k != k2:
        raise ValueError(f"conv2d needs a square kernel, got {tuple(weight.shape)}")
    ho = conv_output_size(h, k, stride, dilation, padding)
    wo = conv_output_size(w, k, stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {tuple(x.shape)}")
    xd = x.data
    if k == 1 and stride == 1 and padding == 0:
        pointwise = True
        cols = xd.transpose(1, 0, 2, 3).reshape(c, n * h * w)
        hp, wp = h, w
    else:
        pointwise = False
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
        xp = np.ascontiguousarray(xp)
        hp, wp = xp.shape[2:]
        cols = kernels.im2col(xp, k, stride, dilation, ho, wo)
    w2 = weight.data.reshape(co, -1)
    out = (w2 @ cols).reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(co, -1)
        if weight.requires_grad:
            accumulate(weight, (g2 @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g2.sum(axis=1))
        if x.requires_grad:
            dcols = w2.T @ g2
            if pointwise:
                dx = dcols.reshape(c, n, h, w).transpose(1, 0, 2, 3)
            else:
                dxp = kernels.col2im(np.ascontiguousarray(dcols), n, c, hp, wp, k, stride, dilation, ho, wo)
                dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
            accumulate(x, np.ascontiguousarray(dx))

    return make_result(out, parents, backward)


def prelu(x, slope):
    """Parametric ReLU with one learned slope per channel (axis 1)."""
    shape = [1] * x.ndim
    shape[1] = -1
    a = slope.data.reshape(shape)
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        if x.requires_grad:
            accumulate(x, np.where(pos, g, a * g))
        if slope.requires_grad:
            axes = tuple(i for i in range(x.ndim) if i != 1)
            accumulate(slope, np.where(pos, 0, g * x.data).sum(axis=axes).astype(slope.dtype))

    return make_result(out, (x, slope), backward)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    In training mode the running statistics (plain ndarrays) are updated in
    place using the unbiased batch variance.
    """
    n, c, h, w = x.shape
    xd = x.data
    if training:
        if n < 2:
            raise ValueError("batchnorm2d in train mode needs a batch of at least 2")
        m = n * h * w
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        if gamma.requires_grad:
            accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                m = n * h * w
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv_std.reshape(1, c, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv_std.reshape(1, c, 1, 1)
            accumulate(x, dx)

    return make_result(out, (x, gamma, beta), backward)


@lru_cache(maxsize=256)
def interp_matrix(n_in, n_out, dtype=np.float64):
    """Linear interpolation weights, half-pixel centers (align_corners=False)."""
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        mat[o, i0] += 1.0 - lam
        mat[o, i1] += lam
    mat = mat.astype(dtype)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=256)
def pool_matrix(n_in, bins, dtype=np.float64):
    """Averaging weights for adaptive pooling: bin i spans [floor(i*n/b), ceil((i+1)*n/b))."""
    mat = np.zeros((bins, n_in), dtype=np.float64)
    for i in range(bins):
        lo = (i * n_in) // bins
        hi = -((-(i + 1) * n_in) // bins)
        mat[i, lo:hi] = 1.0 / (hi - lo)
    mat = mat.astype(dtype)
    mat.setflags(write=False)
    return mat


def _separable(x, mh, mw):
    """Apply ``mh`` along H and ``mw`` along W of an NCHW tensor."""
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def backward(g):
        accumulate(x, np.matmul(np.matmul(mh.T, g), mw))

    return make_result(out, (x,), backward)


def resize_bilinear(x, size):
    """Bilinear resize of the two trailing axes to ``size`` = (H', W')."""
    h, w = x.shape[-2:]
    if (h, w) == tuple(size):
        return x
    mh = interp_matrix(h, size[0], x.dtype)
    mw = interp_matrix(w, size[1], x.dtype)
    return _separable(x, mh, mw)


def upsample(x, factor):
    """Bilinear upsampling by an integer factor; factor 1 is the identity."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    h, w = x.shape[-2:]
    return resize_bilinear(x, (h * factor, w * factor))


def adaptive_avg_pool(x, bins):
    """Average-pool the spatial grid into ``bins`` x ``bins`` near-equal cells."""
    h, w = x.shape[-2:]
    if bins > h or bins > w:
        raise ValueError(f"adaptive_avg_pool: {bins} bins exceed spatial size {h}x{w}")
    return _separable(x, pool_matrix(h, bins, x.dtype), pool_matrix(w, bins, x.dtype))


def softmax(x, axis=1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        accumulate(x, p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return make_result(p, (x,), backward)


def softmax_cross_entropy(logits, target):
    """Mean pixelwise cross-entropy between softmax(logits) and class indices.

    ``logits`` is (N, K, H, W); ``target`` an integer array (N, H, W).
    """
    target = np.asarray(target)
    n, k = logits.shape[:2]
    if target.shape != (n,) + logits.shape[2:]:
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"class index out of range [0, {k}): min {target.min()}, max {target.max()}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    tidx = target.astype(np.intp)[:, None]
    picked = np.take_along_axis(logp, tidx, axis=1)
    m = target.size
    loss = -picked.sum() / m

    def backward(g):
        d = e / s
        np.put_along_axis(d, tidx, np.take_along_axis(d, tidx, axis=1) - 1, axis=1)
        accumulate(logits, (d * (g / m)).astype(logits.dtype))

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
