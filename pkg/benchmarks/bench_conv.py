"""Benchmark the compiled convolution kernels against the pure-numpy fallback.

Times im2col/col2im pairs at sizes drawn from the network's actual workload,
plus one full forward/backward training step with each backend. Each backend
runs in its own subprocess (selected via CT_KERNELS) so the timings compare
clean imports. Run as:

    python3 benchmarks/bench_conv.py
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from compositetasking import kernels
from compositetasking import palette as pal
from compositetasking.autodiff import Tensor
from compositetasking.losses import LabelSet, composite_loss
from compositetasking.network import ModelConfig, build_model

repeats = int(sys.argv[1])


def best_of(fn, n):
    fn()  # warm-up
    best = float("inf")
    for _ in range(n):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


out = {"backend": kernels.BACKEND, "kernels": {}}
shapes = {
    "encoder 64x64": ((8, 3, 64, 64), 3, 1, 1),
    "mid 32x32": ((8, 32, 32, 32), 3, 1, 1),
    "deep 16x16": ((8, 64, 16, 16), 3, 2, 1),
    "head 1x1": ((8, 64, 32, 32), 1, 1, 0),
}
for label, (xshape, k, stride, pad) in shapes.items():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(xshape).astype(np.float32)
    cols = kernels.im2col(x, k, stride, pad)

    def pair():
        kernels.im2col(x, k, stride, pad)
        kernels.col2im(cols, x.shape, k, stride, pad)

    out["kernels"][label] = best_of(pair, repeats)

net = build_model(ModelConfig(variant="ctn", height=64, width=64, seed=0))
rng = np.random.default_rng(0)
image = Tensor(rng.random((4, 3, 64, 64)).astype(np.float32))
palette = rng.integers(0, pal.NUM_TASKS, size=(4, 64, 64)).astype(np.uint8)
labels = LabelSet(
    segmentation=rng.integers(0, 21, size=(4, 64, 64)),
    parts=rng.integers(0, 7, size=(4, 64, 64)),
    normals=rng.standard_normal((4, 3, 64, 64)),
    edges=rng.integers(0, 2, size=(4, 64, 64)),
    saliency=rng.integers(0, 2, size=(4, 64, 64)),
)


def step():
    loss, _ = composite_loss(net.forward(image, palette, training=True), labels, palette)
    loss.backward()


out["train_step"] = best_of(step, max(2, repeats // 2))
print(json.dumps(out))
"""


def run_backend(name: str, repeats: int) -> dict:
    env = dict(os.environ, CT_KERNELS=name)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeats)],
                          capture_output=True, text=True, env=env, check=True)
    result = json.loads(proc.stdout)
    assert result["backend"] == name
    return result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    py = run_backend("python", args.repeats)
    cy = run_backend("cython", args.repeats)

    print(f"{'im2col+col2im':<16} {'python':>10} {'cython':>10} {'speedup':>8}")
    for label in py["kernels"]:
        tp, tc = py["kernels"][label], cy["kernels"][label]
        print(f"{label:<16} {tp*1e3:>8.2f}ms {tc*1e3:>8.2f}ms {tp/tc:>7.2f}x")
    tp, tc = py["train_step"], cy["train_step"]
    print(f"\nfull train step (batch 4, 64x64): python {tp*1e3:.0f}ms, "
          f"cython {tc*1e3:.0f}ms, speedup {tp/tc:.2f}x")


if __name__ == "__main__":
    main()
