"""Shared oracles for the test suite."""
import numpy as np

from floodfuse.tensor import Tensor

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def rel_error(analytic, numeric):
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def numeric_grad(loss_fn, arr, step=FD_STEP, indices=None, order=2):
    """Central differences of scalar ``loss_fn()`` w.r.t. ``arr`` (perturbed in place).

    ``order=4`` uses the five-point stencil. Paired with a larger step it cuts
    roundoff, which otherwise swamps near-zero entries of smooth ops such as
    train-mode batchnorm. Keep ``order=2`` where a kink may sit within reach.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        old = flat[i]
        f = {}
        for m in ((-2, -1, 1, 2) if order == 4 else (-1, 1)):
            flat[i] = old + m * step
            f[m] = loss_fn()
        flat[i] = old
        if order == 4:
            gflat[i] = (f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * step)
        else:
            gflat[i] = (f[1] - f[-1]) / (2 * step)
    return grad


SMOOTH_STEP = 1e-2


def check_op(op, inputs, seed=0, order=2, step=None):
    """Max relative FD error of ``sum(op(*tensors) * R)`` over all float64 inputs."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = op(*tensors)
    weight = rng.standard_normal(out.shape)

    def loss_value():
        return float(np.sum(op(*[Tensor(t.data) for t in tensors]).data * weight))

    loss = (out * Tensor(weight)).sum()
    loss.backward()
    worst = 0.0
    for t in tensors:
        worst = max(worst, rel_error(t.grad, numeric_grad(
            loss_value, t.data, step or (SMOOTH_STEP if order == 4 else FD_STEP), order=order)))
    return worst


def loop_conv2d(x, w, b, stride, dilation, padding):
    """Direct nested-loop cross-correlation oracle."""
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for b_ in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, ci, u, v] * xp[b_, ci, i * stride + u * dilation, j * stride + v * dilation]
                    out[b_, o, i, j] = acc
    return out


def brute_confusion(pred, target):
    tp = fp = tn = fn = 0
    for p, t in zip(np.asarray(pred).ravel(), np.asarray(target).ravel()):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def direct_coherence(z1, z2, window):
    """Per-pixel coherence evaluated from its definition with reflect padding."""
    r = window // 2
    a = np.pad(z1.astype(np.complex128), r, mode="reflect")
    b = np.pad(z2.astype(np.complex128), r, mode="reflect")
    h, w = z1.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            pa = a[i:i + window, j:j + window]
            pb = b[i:i + window, j:j + window]
            num = np.sum(pa * np.conj(pb))
            den = np.sqrt(np.sum(np.abs(pa) ** 2) * np.sum(np.abs(pb) ** 2))
            out[i, j] = 0.0 if den == 0 else abs(num) / den
    return out


def point_in_polygon(px, py, ring):
    """Even-odd ray casting for one closed ring."""
    inside = False
    for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
        if (y0 > py) != (y1 > py):
            xint = (x1 - x0) * (py - y0) / (y1 - y0) + x0
            if px < xint:
                inside = not inside
    return inside


def tiny_fusion_config(channels=2, pixels=16, widths=(4, 4, 4, 4), sensors=("s1", "s2")):
    from floodfuse.network import FusionConfig, StreamConfig

    streams = [StreamConfig(s, channels, pixels, 1.0, widths=widths, blocks=(1, 1, 1, 1)) for s in sensors]
    return FusionConfig(streams, float(pixels), 1.0, fusion_width=8)


def network_grad_error(cfg, seed=0, batch=2, max_entries=None):
    """Max relative FD error over every parameter of a float64 FusionNet."""
    from floodfuse import functional as F
    from floodfuse.network import FusionNet

    rng = np.random.default_rng(seed)
    model = FusionNet(cfg, seed).astype(np.float64)
    inputs = {s.sensor: rng.standard_normal((batch, s.in_channels, s.pixels, s.pixels)) for s in cfg.streams}
    n = cfg.common_pixels
    target = rng.integers(0, cfg.num_classes, (batch, n, n))

    def loss_value():
        return float(F.softmax_cross_entropy(model(inputs), target).data)

    model.zero_grad()
    F.softmax_cross_entropy(model(inputs), target).backward()
    worst, count = 0.0, 0
    for name, p in model.named_parameters():
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            idx = rng.choice(p.data.size, max_entries, replace=False)
        num = numeric_grad(loss_value, p.data, indices=idx)
        a = p.grad.reshape(-1) if idx is None else p.grad.reshape(-1)[idx]
        nn_ = num.reshape(-1) if idx is None else num.reshape(-1)[idx]
        worst = max(worst, rel_error(a, nn_))
        count += len(a)
    return worst, count
