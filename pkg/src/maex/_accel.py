"""Hot ragged-array kernels, numba-compiled when available.

Set ``MAEX_DISABLE_NUMBA=1`` to force the pure-numpy path (useful for
debugging and for the benchmark in ``benchmarks/bench_kernels.py``).
Both paths return bit-identical results.
"""
import os

import numpy as np

_DISABLED = os.environ.get("MAEX_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by MAEX_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def backend():
    return "numba" if HAVE_NUMBA else "numpy"


# --- pure numpy -----------------------------------------------------------


def segment_max_numpy(x, offsets):
    n_seg = len(offsets) - 1
    width = x.shape[1]
    out = np.zeros((n_seg, width), dtype=np.float64)
    arg = np.full((n_seg, width), -1, dtype=np.int64)
    for s in range(n_seg):
        lo, hi = offsets[s], offsets[s + 1]
        if hi <= lo:
            continue
        # argmax returns the first maximal row, which is the documented tie rule
        local = x[lo:hi].argmax(axis=0)
        arg[s] = local + lo
        out[s] = x[local + lo, np.arange(width)]
    return out, arg


def segment_max_backward_numpy(grad, arg, n_rows):
    width = grad.shape[1]
    gx = np.zeros((n_rows, width), dtype=np.float64)
    cols = np.broadcast_to(np.arange(width), arg.shape)
    valid = arg >= 0
    np.add.at(gx, (arg[valid], cols[valid]), grad[valid])
    return gx


def scatter_add_rows_numpy(grad, index, n_rows):
    out = np.zeros((n_rows, grad.shape[1]), dtype=np.float64)
    np.add.at(out, index, grad)
    return out


# --- numba ----------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _segment_max_jit(x, offsets):
        n_seg = offsets.shape[0] - 1
        width = x.shape[1]
        out = np.zeros((n_seg, width), dtype=np.float64)
        arg = np.full((n_seg, width), -1, dtype=np.int64)
        for s in range(n_seg):
            lo = offsets[s]
            hi = offsets[s + 1]
            if hi <= lo:
                continue
            for j in range(width):
                best = x[lo, j]
                where = lo
                for i in range(lo + 1, hi):
                    if x[i, j] > best:
                        best = x[i, j]
                        where = i
                out[s, j] = best
                arg[s, j] = where
        return out, arg

    @njit(cache=True)
    def _segment_max_backward_jit(grad, arg, n_rows):
        n_seg, width = grad.shape
        gx = np.zeros((n_rows, width), dtype=np.float64)
        for s in range(n_seg):
            for j in range(width):
                i = arg[s, j]
                if i >= 0:
                    gx[i, j] += grad[s, j]
        return gx

    @njit(cache=True)
    def _scatter_add_rows_jit(grad, index, n_rows):
        width = grad.shape[1]
        out = np.zeros((n_rows, width), dtype=np.float64)
        for r in range(index.shape[0]):
            dst = index[r]
            for j in range(width):
                out[dst, j] += grad[r, j]
        return out


def segment_max(x, offsets):
    """Column-wise max over row segments ``x[offsets[s]:offsets[s+1]]``.

    Returns ``(out, arg)`` where ``arg`` holds the global row index of the
    first maximal row per column, or -1 for an empty segment (whose output
    row is zero).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if HAVE_NUMBA:
        return _segment_max_jit(x, offsets)
    return segment_max_numpy(x, offsets)


def segment_max_backward(grad, arg, n_rows):
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    arg = np.ascontiguousarray(arg, dtype=np.int64)
    if HAVE_NUMBA:
        return _segment_max_backward_jit(grad, arg, int(n_rows))
    return segment_max_backward_numpy(grad, arg, int(n_rows))


def scatter_add_rows(grad, index, n_rows):
    """``out[index[r]] += grad[r]`` into a fresh ``(n_rows, width)`` array."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if HAVE_NUMBA:
        return _scatter_add_rows_jit(grad, index, int(n_rows))
    return scatter_add_rows_numpy(grad, index, int(n_rows))
