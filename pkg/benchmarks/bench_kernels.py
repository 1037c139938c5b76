"""Compare the compiled im2col/col2im kernels against the numpy fallback.

Run after installing the package:

    python3 benchmarks/bench_kernels.py

Both backends must produce bit-identical arrays; the table reports the
median wall time of each and the speed ratio. A second section times a
complete forward/backward pass through a small extended model under each
backend (UPSEG_KERNELS is read at import time, so the model section runs
in subprocesses).
"""

import os
import statistics
import subprocess
import sys
import time

import numpy as np

from upseg.kernels import _fallback

try:
    from upseg.kernels import _ext
except ImportError:
    _ext = None

CASES = [
    # n, c, h, w, kh, kw, stride, pad
    (8, 1, 16, 16, 3, 3, 1, 1),
    (8, 16, 32, 32, 3, 3, 1, 1),
    (8, 32, 64, 64, 3, 3, 1, 1),
    (8, 64, 64, 64, 3, 3, 1, 1),
    (8, 32, 64, 64, 2, 2, 2, 0),
]

MODEL_SNIPPET = """
import time
import numpy as np
from upseg.graph import (BackboneConfig, UpscaleStackConfig, build_unet,
                         build_upscale_stack, forward_all_taps)
from upseg.kernels import BACKEND
from upseg.loss import LossConfig, l_sum
from upseg.tensor import backward, zero_grads

base = build_unet(BackboneConfig(in_channels=1, base_channels=8, depth=2,
                                 num_classes=1), seed=0)
graph = build_upscale_stack(base, UpscaleStackConfig(num_stages=2), seed=1)
x = np.random.default_rng(0).normal(size=(8, 1, 16, 16))
mask = np.random.default_rng(1).integers(0, 2, size=(8, 64, 64))
cfg = LossConfig(num_stages=2)
params = graph.parameters()

def step():
    taps = forward_all_taps(graph, x)
    loss = l_sum([taps[i] for i in range(3)], mask, cfg)
    zero_grads(params)
    backward(loss)

step()                                     # warm up
times = []
for _ in range(5):
    t0 = time.perf_counter()
    step()
    times.append(time.perf_counter() - t0)
print(f"{BACKEND} {min(times):.4f}")
"""


def median_time(fn, repeats=7):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"{'case':<28} {'kernel':<8} {'python':>10} {'ext':>10} {'ratio':>7}")
    for n, c, h, w, kh, kw, stride, pad in CASES:
        x = rng.normal(size=(n, c, h, w))
        label = f"{n}x{c}x{h}x{w} k{kh} s{stride} p{pad}"

        cols_py = _fallback.im2col(x, kh, kw, stride, pad)
        t_py = median_time(lambda: _fallback.im2col(x, kh, kw, stride, pad))
        if _ext is not None:
            cols_ext = np.asarray(_ext.im2col(x, kh, kw, stride, pad))
            assert np.array_equal(cols_py, cols_ext), "backends disagree"
            t_ext = median_time(lambda: _ext.im2col(x, kh, kw, stride, pad))
            print(f"{label:<28} {'im2col':<8} {t_py * 1e3:>8.2f}ms "
                  f"{t_ext * 1e3:>8.2f}ms {t_py / t_ext:>6.1f}x")
        else:
            print(f"{label:<28} {'im2col':<8} {t_py * 1e3:>8.2f}ms "
                  f"{'n/a':>10} {'':>7}")

        back_py = _fallback.col2im(cols_py, x.shape, kh, kw, stride, pad)
        t_py = median_time(
            lambda: _fallback.col2im(cols_py, x.shape, kh, kw, stride, pad))
        if _ext is not None:
            back_ext = np.asarray(
                _ext.col2im(cols_py, tuple(x.shape), kh, kw, stride, pad))
            assert np.array_equal(back_py, back_ext), "backends disagree"
            t_ext = median_time(
                lambda: _ext.col2im(cols_py, tuple(x.shape), kh, kw, stride, pad))
            print(f"{label:<28} {'col2im':<8} {t_py * 1e3:>8.2f}ms "
                  f"{t_ext * 1e3:>8.2f}ms {t_py / t_ext:>6.1f}x")
        else:
            print(f"{label:<28} {'col2im':<8} {t_py * 1e3:>8.2f}ms "
                  f"{'n/a':>10} {'':>7}")


def bench_model():
    print("\nfull training step (8x1x16x16 batch, depth-2 backbone, "
          "2-stage stack), best of 5:")
    for backend in ("python", "ext"):
        env = {**os.environ, "UPSEG_KERNELS": backend}
        proc = subprocess.run([sys.executable, "-c", MODEL_SNIPPET],
                              capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            print(f"  {backend}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        name, seconds = proc.stdout.split()
        print(f"  {name}: {float(seconds) * 1e3:.1f} ms per step")


if __name__ == "__main__":
    if _ext is None:
        print("compiled extension not importable; timing the fallback only\n")
    bench_kernels()
    bench_model()
