"""Compiled vs numpy kernels, one row per kernel and shape.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

The last rows time one full Deep Decoder step (forward, backward, Adam) per
backend; each backend runs in its own interpreter because the choice is
made at import time.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from selfstop.tensor import _fallback

try:
    from selfstop.tensor import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    f32 = np.float32
    up = rng.standard_normal((128, 64, 64)).astype(f32)
    gup = rng.standard_normal((128, 128, 128)).astype(f32)
    nx = rng.standard_normal((1, 128, 128 * 128)).astype(f32)
    ax = rng.standard_normal((4, 32, 64, 64)).astype(f32)
    cols = rng.standard_normal((4, 32 * 9, 32 * 32)).astype(f32)

    def urn_bwd(m):
        y, mean, var = m.up_relu_norm_forward(up, 1e-5)
        return lambda: m.up_relu_norm_backward(gup, y, mean, var, 1e-5)

    def norm_bwd(m):
        y, _, var = m.norm_forward(nx, 1e-5, True)
        return lambda: m.norm_backward(nx, y, var, 1e-5, True)

    return [
        ("upsample2x_forward", "128x64x64", lambda m: (lambda: m.upsample2x_forward(up))),
        ("upsample2x_backward", "128x128x128", lambda m: (lambda: m.upsample2x_backward(gup))),
        ("norm_forward", "1x128x16384", lambda m: (lambda: m.norm_forward(nx, 1e-5, True))),
        ("norm_backward", "1x128x16384", norm_bwd),
        ("up_relu_norm_forward", "128x64x64", lambda m: (lambda: m.up_relu_norm_forward(up, 1e-5))),
        ("up_relu_norm_backward", "128x128x128", urn_bwd),
        ("im2col k3 s2 p1", "4x32x64x64", lambda m: (lambda: m.im2col(ax, 3, 2, 1))),
        ("col2im k3 s2 p1", "4x32x64x64", lambda m: (lambda: m.col2im(cols, ax.shape, 3, 2, 1))),
    ]


def best_ms(fn, repeat):
    fn()
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


STEP = """
import time, numpy as np
from selfstop.tensor import Adam, BACKEND, backward, ops
from selfstop.models import GeneratorConfig, build_generator
gen = build_generator(GeneratorConfig(features=128, depth=5))
opt = Adam(gen.params, lr=1e-3)
y = np.random.default_rng(0).uniform(size=(1, 3, 128, 128)).astype(np.float32)
def step():
    opt.zero_grad(); loss = ops.mse(gen(), y); backward(loss, gen.params); opt.step()
for _ in range(3):
    step()
ts = []
for _ in range({repeat}):
    t = time.perf_counter(); step(); ts.append(time.perf_counter() - t)
print(BACKEND, 1e3 * min(ts))
"""


def step_ms(pure: bool, repeat: int) -> tuple[str, float]:
    env = dict(os.environ, SELFSTOP_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<24}{'shape':<14}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for name, shape, make in cases(rng):
        py = best_ms(make(_fallback), args.repeat)
        c = best_ms(make(_ckernels), args.repeat) if _ckernels is not None else float("nan")
        rows.append(dict(kernel=name, shape=shape, numpy_ms=py, compiled_ms=c))
        print(f"{name:<24}{shape:<14}{py:>10.2f}{c:>13.2f}{py / c:>8.1f}x")
    steps = {}
    for pure in (True, False):
        backend, ms = step_ms(pure, max(5, args.repeat // 2))
        steps[backend] = ms
    c = steps.get("compiled", float("nan"))
    print(f"{'DD-128 step (128x128)':<24}{'full':<14}{steps['python']:>10.2f}{c:>13.2f}{steps['python'] / c:>8.1f}x")
    rows.append(dict(kernel="deep_decoder_step", shape="128x128 k=128 d=5", numpy_ms=steps["python"], compiled_ms=c))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
