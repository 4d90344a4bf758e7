"""Compare the compiled and numpy conv2d kernels.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Times forward, input-gradient and weight-gradient kernels on a few layer
shapes, then one full training step of an image subnetwork per backend.
"""
import argparse
import json
import timeit

import numpy as np

from adanas.autograd import kernels
from adanas.autograd.optim import SGD
from adanas.data import synthetic_task
from adanas.losses import classification_loss
from adanas.model import ArchSpec, build_subnetwork, logits

SHAPES = [
    # (batch, h, w, cin, cout)
    (32, 8, 8, 1, 16),
    (32, 8, 8, 16, 16),
    (16, 32, 32, 3, 32),
    (8, 32, 32, 32, 32),
]


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(backend, repeat):
    impl = kernels.get_backend(backend)
    rng = np.random.default_rng(0)
    rows = []
    for n, h, w, ci, co in SHAPES:
        x = rng.standard_normal((n, h, w, ci))
        wt = rng.standard_normal((3, 3, ci, co))
        b = rng.standard_normal(co)
        g = rng.standard_normal((n, h, w, co))
        rows.append({
            "shape": f"{n}x{h}x{w}x{ci}->{co}",
            "forward": _best(lambda: impl.conv2d_forward(x, wt, b), repeat),
            "backward_input": _best(lambda: impl.conv2d_backward_input(g, wt), repeat),
            "backward_weight": _best(lambda: impl.conv2d_backward_weight(x, g, 3), repeat),
        })
    return rows


def bench_train_step(backend, repeat):
    impl = kernels.get_backend(backend)
    saved = {k: getattr(kernels, k) for k in ("conv2d_forward", "conv2d_backward_input", "conv2d_backward_weight")}
    for k in saved:
        setattr(kernels, k, getattr(impl, k))
    try:
        ds = synthetic_task("bars", 64, 4, 0.1, seed=0)
        net = build_subnetwork(ArchSpec(2, 16), ds.task, seed=0)
        opt = SGD(net.params, total_steps=10_000)
        x, y = ds.x_train[:32], ds.y_train[:32]

        def step():
            opt.zero_grad()
            classification_loss(logits(net, x), y).backward()
            opt.step()

        return _best(step, repeat)
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = kernels.available()
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    results = {b: {"kernels": bench_kernels(b, args.repeat), "train_step": bench_train_step(b, args.repeat)}
               for b in backends}

    print(f"{'shape':<22}{'kernel':<17}" + "".join(f"{b:>12}" for b in backends) + "   speedup")
    for i, (n, h, w, ci, co) in enumerate(SHAPES):
        for kern in ("forward", "backward_input", "backward_weight"):
            times = [results[b]["kernels"][i][kern] for b in backends]
            row = f"{results[backends[0]]['kernels'][i]['shape']:<22}{kern:<17}"
            row += "".join(f"{t * 1e3:10.2f}ms" for t in times)
            if len(times) == 2:
                row += f"   {results['python']['kernels'][i][kern] / results['compiled']['kernels'][i][kern]:6.2f}x"
            print(row)
    steps = [results[b]["train_step"] for b in backends]
    line = f"{'train step 2@16 bars':<39}" + "".join(f"{t * 1e3:10.2f}ms" for t in steps)
    if len(steps) == 2:
        line += f"   {results['python']['train_step'] / results['compiled']['train_step']:6.2f}x"
    print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
