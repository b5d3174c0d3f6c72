"""Compare the numba and numpy alignment kernels on random token sequences.

    python3 benchmarks/bench_align.py --pairs 2000 --length 40
"""

import argparse
import time

import numpy as np

from rareger import kernels


def _pairs(n, length, vocab, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        la, lb = rng.integers(1, length + 1, size=2)
        out.append((rng.integers(0, vocab, size=la).astype(np.int64), rng.integers(0, vocab, size=lb).astype(np.int64)))
    return out


def _time(fn, pairs, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        for a, b in pairs:
            fn(a, b)
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--length", type=int, default=40, help="maximum sequence length")
    ap.add_argument("--vocab", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    pairs = _pairs(args.pairs, args.length, args.vocab, args.seed)
    impls = {"numpy": (kernels.edit_distance_numpy, kernels.align_codes_numpy)}
    if kernels.HAVE_NUMBA:
        impls["numba"] = (kernels.edit_distance_numba, kernels.align_codes_numba)
        for a, b in pairs[:2]:  # trigger compilation outside the timed loop
            kernels.edit_distance_numba(a, b)
            kernels.align_codes_numba(a, b)
    else:
        print("numba not installed; timing numpy only")

    ref = [kernels.align_codes_numpy(a, b) for a, b in pairs]
    print(f"{len(pairs)} pairs, length <= {args.length}, best of {args.repeat}")
    print(f"{'backend':<8} {'distance (s)':>13} {'align (s)':>10}")
    for name, (dist_fn, align_fn) in impls.items():
        got = [align_fn(a, b) for a, b in pairs]
        assert all(d1 == d2 and np.array_equal(o1, o2) for (d1, o1), (d2, o2) in zip(ref, got)), name
        t_dist = _time(dist_fn, pairs, args.repeat)
        t_align = _time(align_fn, pairs, args.repeat)
        print(f"{name:<8} {t_dist:>13.4f} {t_align:>10.4f}")


if __name__ == "__main__":
    main()
