"""Time the numba kernels against their numpy twins on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--seed 0]

Each kernel is warmed up once (JIT compile) before timing; the reported
figure is the best of ``--repeat`` runs. Outputs of both backends are
compared so a speedup never hides a divergence.
"""

import argparse
import timeit

import numpy as np

from labelsmith import _kernels


def boxes(rng, n, size=1000.0):
    xy = rng.uniform(0, size, (n, 2))
    wh = rng.uniform(5, 120, (n, 2))
    return np.hstack([xy, wh])


def cases(rng):
    a, b = boxes(rng, 600), boxes(rng, 500)
    small_a, small_b = boxes(rng, 8, 100), boxes(rng, 8, 100)
    dense = _kernels.np_pairwise_iou(boxes(rng, 300, 200), boxes(rng, 300, 200))
    img = rng.integers(0, 256, (480, 640, 3), dtype=np.uint8)
    return [
        ("pairwise_iou 600x500", "pairwise_iou", (a, b)),
        ("pairwise_iou 8x8", "pairwise_iou", (small_a, small_b)),
        ("greedy_match 300x300", "greedy_match", (dense, 0.1)),
        ("bilinear_resize 640x480 -> 1024x768", "bilinear_resize", (img, 768, 1024)),
        ("bilinear_resize 640x480 -> 160x120", "bilinear_resize", (img, 120, 160)),
    ]


def same(x, y):
    if isinstance(x, tuple):
        return all(np.array_equal(p, q) for p, q in zip(x, y))
    return np.array_equal(x, y)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if "numba" not in _kernels.IMPLEMENTATIONS:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(args.seed)
    impl_np = _kernels.IMPLEMENTATIONS["numpy"]
    impl_nb = _kernels.IMPLEMENTATIONS["numba"]
    print(f"{'kernel':<38}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  equal")
    for label, name, call_args in cases(rng):
        f_np, f_nb = impl_np[name], impl_nb[name]
        equal = same(f_np(*call_args), f_nb(*call_args))
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<38}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x  {equal}")


if __name__ == "__main__":
    main()
