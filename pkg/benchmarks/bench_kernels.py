"""Time the ragged kernels under numba and under the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes mimic one training batch of the desk profile: 128 queries, windows
per description around 30, 64 filters.
"""
import argparse
import timeit

import numpy as np

from maex import _accel


def workload(seed=0, n_seg=128, mean_len=30, width=64):
    rng = np.random.default_rng(seed)
    lengths = rng.poisson(mean_len, size=n_seg)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    x = rng.normal(size=(int(offsets[-1]), width))
    return x, offsets


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    x, off = workload()
    _, arg = _accel.segment_max_numpy(x, off)
    g = np.ones((len(off) - 1, x.shape[1]))
    idx = np.random.default_rng(1).integers(0, 5000, size=4096)
    rows = np.ones((4096, x.shape[1]))

    impls = {"numpy": (_accel.segment_max_numpy, _accel.segment_max_backward_numpy, _accel.scatter_add_rows_numpy)}
    if _accel.HAVE_NUMBA:
        fwd, bwd, sca = _accel._segment_max_jit, _accel._segment_max_backward_jit, _accel._scatter_add_rows_jit
        fwd(x, off), bwd(g, arg, len(x)), sca(rows, idx, 5000)  # compile outside the timed region
        impls["numba"] = (fwd, bwd, sca)
    else:
        print("numba not installed; timing the numpy fallback only")

    print(f"rows={len(x)} segments={len(off) - 1} width={x.shape[1]} repeat={args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name in impls))
    for label, pick, call in (
        ("segment_max", 0, lambda f: f(x, off)),
        ("segment_max_backward", 1, lambda f: f(g, arg, len(x))),
        ("scatter_add_rows", 2, lambda f: f(rows, idx, 5000)),
    ):
        cells = []
        for fns in impls.values():
            best = min(timeit.repeat(lambda: call(fns[pick]), number=1, repeat=args.repeat))
            cells.append(f"{best * 1e3:10.3f}ms")
        print(f"{label:<22}" + "".join(f"{c:>12}" for c in cells))


if __name__ == "__main__":
    main()
