"""Compare the compiled and numpy mask kernels.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from zsikit.maskgeom import _pykernels, available_backends


def workloads(rng):
    h, w = 480, 640
    yy, xx = np.mgrid[:h, :w]
    masks = []
    for _ in range(20):
        cy, cx, r = rng.integers(50, 400), rng.integers(50, 600), rng.integers(20, 120)
        masks.append(((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(np.uint8).ravel(order="F"))
    counts = [_pykernels.rle_encode(m) for m in masks]
    strings = [_pykernels.rle_to_string(c) for c in counts]
    t = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    rad = 150 + 60 * np.sin(7 * t)
    poly = np.stack([320 + rad * np.cos(t), 240 + rad * np.sin(t)], 1).ravel()
    boxes = rng.uniform(0, 500, (300, 4))
    return {
        "rle_encode 20x 480x640": lambda k: [k.rle_encode(m) for m in masks],
        "rle_decode 20x 480x640": lambda k: [k.rle_decode(c, h * w) for c in counts],
        "rle_to_string 20x": lambda k: [k.rle_to_string(c) for c in counts],
        "rle_from_string 20x": lambda k: [k.rle_from_string(s) for s in strings],
        "rle_iou 20x20": lambda k: k.rle_iou(counts, counts, h * w),
        "rasterize 200-gon 480x640": lambda k: k.rasterize(poly, h, w),
        "box_iou 300x300": lambda k: k.box_iou(boxes, boxes),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is available")
    work = workloads(np.random.default_rng(0))
    names = sorted(backends)
    print(f"{'kernel':28s}" + "".join(f"{n + ' ms':>14s}" for n in names) + ("      speedup" if len(names) > 1 else ""))
    for label, fn in work.items():
        times = {}
        for n in names:
            k = backends[n]
            fn(k)  # warm up
            times[n] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
        row = f"{label:28s}" + "".join(f"{times[n]:14.3f}" for n in names)
        if len(names) > 1:
            row += f"{times['python'] / times['cython']:12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
