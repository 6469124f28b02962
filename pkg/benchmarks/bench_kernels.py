"""Convolution kernel timing: numba jit vs the numpy fallback.

Imports both kernel modules directly (bypassing SSLFORGE_BACKEND) and
times the three conv primitives on shapes the damage classifier actually
runs: the reference model at 64x64 inputs and the miniature desk-scale
model. First numba call per shape compiles; a warmup pass keeps JIT
time out of the numbers.

    python3 benchmarks/bench_kernels.py [--batch 8] [--repeats 5]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from sslforge import kernels_numba, kernels_numpy

# (label, in_ch, out_ch, spatial, stride): stem and one stride-2 stage
# of each model size, padded by 1 as conv2d does for 3x3 kernels
CASES = [
    ("desk stem   4f 64px s1", 6, 4, 64, 1),
    ("desk stage  8f 32px s2", 4, 8, 32, 2),
    ("ref  stem  32f 64px s1", 6, 32, 64, 1),
    ("ref  stage 64f 32px s2", 32, 64, 32, 2),
]


def _time(fn, repeats):
    fn()  # warmup: jit compile + cache touch
    best = min(_once(fn) for _ in range(repeats))
    return best * 1e3


def _once(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench_case(label, cin, cout, hw, stride, batch, repeats):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((batch, cin, hw + 2, hw + 2), dtype=np.float32)
    w = rng.standard_normal((cout, cin, 3, 3), dtype=np.float32)
    out = kernels_numpy.conv2d_forward(xp, w, stride)
    dy = rng.standard_normal(out.shape, dtype=np.float32)
    hp, wp = xp.shape[2], xp.shape[3]

    ops = [
        ("forward", lambda k: k.conv2d_forward(xp, w, stride)),
        ("grad_in", lambda k: k.conv2d_grad_input(dy, w, stride, hp, wp)),
        ("grad_w ", lambda k: k.conv2d_grad_kernel(dy, xp, stride, 3, 3)),
    ]
    for op, call in ops:
        a = np.asarray(call(kernels_numpy))
        b = np.asarray(call(kernels_numba))
        worst = float(np.max(np.abs(a - b)))
        t_np = _time(lambda: call(kernels_numpy), repeats)
        t_nb = _time(lambda: call(kernels_numba), repeats)
        print(f"{label}  {op}  numpy {t_np:8.2f} ms  numba {t_nb:8.2f} ms  "
              f"x{t_np / t_nb:5.1f}  |diff|max {worst:.2e}", flush=True)


_STEP_SNIPPET = """
import time
from sslforge import backend
from sslforge import data as D
from sslforge.model import ModelConfig
from sslforge.trainer import TrainConfig, train

ex = D.synth_generate(D.SynthConfig(n_examples=120, seed=0))
split = D.split(ex, D.SplitSpec(n_labeled=10, split_seed=0, test_fraction=0.10))
tc = TrainConfig(method="fixmatch", total_steps={steps}, batch_size=8,
                 ema_decay=0.99, model=ModelConfig(block_filters=(4, 8, 16, 16)))
train(tc, split)  # warm the jit cache before timing
t0 = time.perf_counter()
train(tc, split)
dt = time.perf_counter() - t0
print(f"{{backend.backend_name()}}: {{dt / {steps} * 1e3:.1f}} ms/step "
      f"(fixmatch, desk model, batch 8)")
"""


def bench_train_step(steps):
    for name in ("numpy", "numba"):
        env = dict(os.environ, SSLFORGE_BACKEND=name)
        subprocess.run([sys.executable, "-c", _STEP_SNIPPET.format(steps=steps)],
                       env=env, check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--train-step", action="store_true",
                    help="also time whole fixmatch steps per backend")
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args()
    print(f"batch={args.batch} repeats={args.repeats} (best-of time, ms)",
          flush=True)
    for case in CASES:
        bench_case(*case, batch=args.batch, repeats=args.repeats)
    if args.train_step:
        bench_train_step(args.steps)


if __name__ == "__main__":
    main()
