"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes match one training step of the 8-layer, 16-channel synthetic network.
"""
import argparse
import timeit

import numpy as np

from poolskip import backend

CASES = {
    "conv2d_forward": lambda k, d: k.conv2d_forward(d["x"], d["w"], 1),
    "conv2d_backward": lambda k, d: k.conv2d_backward(d["x"], d["w"], d["g"], 1),
    "maxpool_forward": lambda k, d: k.maxpool_forward(d["y"], 2),
    "maxunpool_forward": lambda k, d: k.maxunpool_forward(*d["pooled"], 2),
}


def make_data(batch=32, channels=16, extent=20):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, channels, extent, extent))
    w = rng.normal(size=(channels, channels, 3, 3))
    y = rng.normal(size=(batch, channels, extent - 2, extent - 2))
    pooled = backend.get("python").maxpool_forward(y, 2)
    return {"x": x, "w": w, "g": y, "y": y, "pooled": pooled}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    data = make_data()
    names = backend.available()
    print(f"{'kernel':20s}" + "".join(f"{n:>14s}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for case, fn in CASES.items():
        times = []
        for name in names:
            k = backend.get(name)
            fn(k, data)  # warm-up
            best = min(timeit.repeat(lambda: fn(k, data), number=1, repeat=args.repeat))
            times.append(best)
        row = f"{case:20s}" + "".join(f"{t * 1e3:11.3f} ms" for t in times)
        if len(times) > 1:
            row += f"   {times[0] / times[1]:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
