"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Each kernel is timed on both backends with identical inputs; outputs are
checked for bit equality. ``--end-to-end`` also times a desk-scale training
step in two subprocesses, one with FLOODFUSE_PURE_PYTHON set.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from floodfuse import kernels

STEP_SNIPPET = """
import time, numpy as np
from floodfuse import functional as F, kernels
from floodfuse.network import FusionConfig, FusionNet, stream_for
cfg = FusionConfig([stream_for("s2", 320.0, 10.0)], 320.0)
net = FusionNet(cfg, 0)
rng = np.random.default_rng(0)
x = {"s2": rng.standard_normal((8, 20, 32, 32)).astype(np.float32)}
y = rng.integers(0, 2, (8, 32, 32))
def step():
    net.zero_grad()
    F.softmax_cross_entropy(net(x), y).backward()
step()
t = time.perf_counter()
for _ in range(REPEAT):
    step()
print(kernels.BACKEND, (time.perf_counter() - t) / REPEAT)
"""


def cases(rng):
    xp = rng.standard_normal((8, 32, 36, 36)).astype(np.float32)
    cols = kernels.pure.im2col(xp, 3, 1, 2, 32, 32)
    padded = rng.standard_normal((260, 260))
    edges = rng.uniform(0, 256, (64, 4))
    return {
        "im2col 8x32x32x32 k3 d2": lambda m: m.im2col(xp, 3, 1, 2, 32, 32),
        "col2im 8x32x32x32 k3 d2": lambda m: m.col2im(cols, 8, 32, 36, 36, 3, 1, 2, 32, 32),
        "box_mean 256x256 w5": lambda m: m.box_mean(padded, 5),
        "fill_evenodd 256x256 64 edges": lambda m: _fill(m, edges),
    }


def _fill(mod, edges):
    out = np.zeros((256, 256), np.uint8)
    mod.fill_evenodd(edges, out, 0, 256, 0, 256)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    if kernels.compiled is None:
        print("compiled extension not available; only the numpy backend can be timed")
    print(f"{'kernel':32s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}  equal")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(kernels.pure), number=1, repeat=args.repeat)) * 1e3
        if kernels.compiled is None:
            print(f"{name:32s} {t_py:10.2f} {'-':>10s} {'-':>8s}  -")
            continue
        t_c = min(timeit.repeat(lambda: fn(kernels.compiled), number=1, repeat=args.repeat)) * 1e3
        equal = np.array_equal(fn(kernels.pure), fn(kernels.compiled))
        print(f"{name:32s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.2f}x  {equal}")

    if args.end_to_end:
        code = STEP_SNIPPET.replace("REPEAT", str(args.repeat))
        for pure in (False, True):
            env = dict(os.environ)
            env.pop("FLOODFUSE_PURE_PYTHON", None)
            if pure:
                env["FLOODFUSE_PURE_PYTHON"] = "1"
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            backend, secs = out.stdout.split()
            print(f"train step (S2 desk, batch 8) [{backend}]: {float(secs) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
