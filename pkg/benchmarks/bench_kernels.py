"""Compiled vs numpy kernel timings, plus one tiny-det training step per backend.

    python benchmarks/bench_kernels.py [--repeat 20]

Each backend runs in its own interpreter because the choice is made at
import time (``GCPRUNE_KERNELS=python`` forces the fallback).
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, timeit
import numpy as np
from gcprune import kernels
from gcprune.detectcore import gen_dataset
from gcprune.engine import Network
from gcprune.netgraph import bundled_graph_path, init_weights, load_graph
from gcprune.training import TrainConfig, fit, hard_loss_fn

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
x = rng.standard_normal((16, 32, 32, 32)).astype(np.float32)
cols = kernels.im2col(x, 3, 1, 1, 32, 32)
y, arg = kernels.maxpool_forward(x, 5, 1, 2, 32, 32)
v = rng.standard_normal(1 << 18).astype(np.float32)
cases = {
    "im2col 3x3 16x32x32x32": lambda: kernels.im2col(x, 3, 1, 1, 32, 32),
    "col2im 3x3 16x32x32x32": lambda: kernels.col2im(cols, 16, 32, 32, 32, 3, 1, 1, 32, 32),
    "maxpool 5x5 fwd": lambda: kernels.maxpool_forward(x, 5, 1, 2, 32, 32),
    "maxpool 5x5 bwd": lambda: kernels.maxpool_backward(y, arg, 32, 32),
    "mish 262k": lambda: kernels.mish_forward(v),
}
out = {"backend": kernels.BACKEND}
for name, fn in cases.items():
    out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
g = load_graph(bundled_graph_path("tiny-det.graph"))
data = gen_dataset(0, 16)
net = Network(g, init_weights(g, np.random.default_rng(0)))
cfg = TrainConfig(epochs=1, batch_size=16)
step = lambda: fit(net, data, cfg, np.random.default_rng(0), hard_loss_fn(data.anchors))
out["train step tiny-det b16"] = min(timeit.repeat(step, number=1, repeat=max(3, repeat // 4)))
print(json.dumps(out))
"""


def measure(backend: str, repeat: int) -> dict:
    env = dict(os.environ)
    if backend == "python":
        env["GCPRUNE_KERNELS"] = "python"
    else:
        env.pop("GCPRUNE_KERNELS", None)
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    fast, slow = measure("compiled", args.repeat), measure("python", args.repeat)
    if fast["backend"] != "cython":
        print("compiled extension not built; both rows use the numpy fallback", file=sys.stderr)
    print(f"{'kernel':28s} {fast['backend']:>10s} {'python':>10s} {'speedup':>8s}")
    for k in fast:
        if k == "backend":
            continue
        print(f"{k:28s} {fast[k] * 1e3:9.2f}ms {slow[k] * 1e3:9.2f}ms {slow[k] / fast[k]:7.2f}x")


if __name__ == "__main__":
    main()
