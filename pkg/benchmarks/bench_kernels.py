"""Compiled vs numpy kernels, plus one signer/verifier training step per backend.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hfsign._core import _kernels_py

try:
    from hfsign._core import _kernels as compiled
except ImportError:
    compiled = None


def kernel_cases(rng):
    # shapes from the signer's first two layers and the verifier's input layer
    for name, (n, c, h, w, k, s, p) in {
        "e1 8x1x128x256": (8, 1, 128, 256, 3, 1, 1),
        "e2 8x16x128x256": (8, 16, 128, 256, 3, 2, 1),
        "v1 16x1x128x256": (16, 1, 128, 256, 3, 2, 1),
    }.items():
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        cols = rng.standard_normal((n * ho * wo, c * k * k)).astype(np.float32)
        yield f"im2col {name}", lambda m, x=x, a=(k, s, p, ho, wo): m.im2col(x, *a)
        yield f"col2im {name}", lambda m, c_=cols, a=(n, c, h, w, k, s, p, ho, wo): m.col2im(c_, *a)
    frames = rng.standard_normal((252, 512))
    yield "overlap_add 252x512", lambda m: m.overlap_add(frames, 256, 251 * 256 + 512)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


STEP = """
import time, numpy as np
from hfsign import _core
from hfsign.signet import SignatureNet
from hfsign.vernet import VerifierNet
from hfsign.trainer import LabeledBatch, train_step
from hfsign.nnkit import AdamState
rng = np.random.default_rng(0)
s, v = SignatureNet(rng), VerifierNet(rng)
roles = ["signed"] * 4 + ["original"] * 2 + ["clone_of_signed", "clone_of_original"]
b = LabeledBatch(rng.random((8, 128, 256)).astype(np.float32), np.array([1] * 4 + [0] * 4), roles, np.zeros(8, int))
kv = rng.integers(0, 2, (4, 32)).astype(float)
oa, ob = AdamState(lr=1e-4), AdamState(lr=1e-5)
train_step(s, v, b, kv, oa, ob)
t = []
for _ in range({repeat}):
    a = time.perf_counter(); train_step(s, v, b, kv, oa, ob); t.append(time.perf_counter() - a)
print(_core.BACKEND, min(t))
"""


def step_time(pure, repeat):
    env = dict(os.environ)
    env.pop("HFSIGN_PURE_PYTHON", None)
    if pure:
        env["HFSIGN_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    backend, t = out.stdout.split()
    return backend, float(t)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-step", action="store_true", help="skip the full training-step comparison")
    args = ap.parse_args(argv)
    if compiled is None:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(rng):
        tc = best_of(lambda: fn(compiled), args.repeat)
        tp = best_of(lambda: fn(_kernels_py), args.repeat)
        print(f"{name:34s} {tc * 1e3:10.2f} {tp * 1e3:10.2f} {tp / tc:7.2f}x")
    if not args.no_step:
        print()
        print(f"{'training step (batch 8)':34s} {'seconds':>10s}")
        for pure in (False, True):
            backend, t = step_time(pure, max(2, args.repeat // 2))
            print(f"{backend:34s} {t:10.3f}")


if __name__ == "__main__":
    main()
