"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and ``SRFKIT_NUMBA`` is not
set to ``0``/``false``/``off``.  Both paths are always importable so tests and
``benchmarks/bench_accel.py`` can compare them directly.

Summation order differs between the two backends, so results agree to
rounding, not bit-for-bit.  Within one backend every kernel is deterministic.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    HAVE_NUMBA = False


def _env_wants_numba() -> bool:
    flag = os.environ.get("SRFKIT_NUMBA", "1").strip().lower()
    return flag not in {"0", "false", "off", "no"}


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# Fast Walsh-Hadamard transform along axis 0 (unnormalized, in place)
# --------------------------------------------------------------------------


def fwht_numpy(a: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform of the columns of ``a``.

    ``a`` has shape (n, m) with n a power of two.  Returns a new array; the
    natural (Sylvester) ordering is used so the result equals
    ``scipy.linalg.hadamard(n) @ a``.
    """
    n, m = a.shape
    out = np.array(a, dtype=np.float64, copy=True)
    h = 1
    while h < n:
        blocks = out.reshape(n // (2 * h), 2, h, m)
        top = blocks[:, 0] + blocks[:, 1]
        bot = blocks[:, 0] - blocks[:, 1]
        blocks[:, 0] = top
        blocks[:, 1] = bot
        h *= 2
    return out


def _fwht_inplace_py(a):
    n, m = a.shape
    h = 1
    while h < n:
        for start in range(0, n, 2 * h):
            for i in range(start, start + h):
                for c in range(m):
                    x = a[i, c]
                    y = a[i + h, c]
                    a[i, c] = x + y
                    a[i + h, c] = x - y
        h *= 2


# --------------------------------------------------------------------------
# Self-plus-neighbour aggregation over a CSR adjacency
# --------------------------------------------------------------------------


def aggregate_numpy(indptr: np.ndarray, indices: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Return ``x[i] + sum_{j in N(i)} x[j]`` for every row i."""
    out = np.array(x, dtype=np.float64, copy=True)
    if indices.size == 0:
        return out
    deg = np.diff(indptr)
    nz = deg > 0
    sums = np.add.reduceat(x[indices], indptr[:-1][nz], axis=0)
    out[nz] += sums
    return out


def _aggregate_py(indptr, indices, x, out):
    n, m = x.shape
    for i in range(n):
        for c in range(m):
            out[i, c] = x[i, c]
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            for c in range(m):
                out[i, c] += x[j, c]


# --------------------------------------------------------------------------
# Edge-sum of squared row differences (Dirichlet energy numerator)
# --------------------------------------------------------------------------


def edge_sqdiff_numpy(edges: np.ndarray, h: np.ndarray) -> float:
    if edges.shape[0] == 0:
        return 0.0
    diff = h[edges[:, 0]] - h[edges[:, 1]]
    return float(np.sum(diff * diff))


def _edge_sqdiff_py(edges, h):
    total = 0.0
    m = h.shape[1]
    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        for c in range(m):
            d = h[i, c] - h[j, c]
            total += d * d
    return total


if HAVE_NUMBA:
    _fwht_inplace_nb = numba.njit(cache=True)(_fwht_inplace_py)
    _aggregate_nb = numba.njit(cache=True)(_aggregate_py)
    _edge_sqdiff_nb = numba.njit(cache=True)(_edge_sqdiff_py)

    def fwht_numba(a: np.ndarray) -> np.ndarray:
        out = np.ascontiguousarray(a, dtype=np.float64).copy()
        _fwht_inplace_nb(out)
        return out

    def aggregate_numba(indptr: np.ndarray, indices: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        out = np.empty_like(x)
        _aggregate_nb(
            np.ascontiguousarray(indptr, dtype=np.int64),
            np.ascontiguousarray(indices, dtype=np.int64),
            x,
            out,
        )
        return out

    def edge_sqdiff_numba(edges: np.ndarray, h: np.ndarray) -> float:
        return float(
            _edge_sqdiff_nb(
                np.ascontiguousarray(edges, dtype=np.int64),
                np.ascontiguousarray(h, dtype=np.float64),
            )
        )

else:  # pragma: no cover
    fwht_numba = fwht_numpy
    aggregate_numba = aggregate_numpy
    edge_sqdiff_numba = edge_sqdiff_numpy


if USE_NUMBA:
    fwht = fwht_numba
    aggregate = aggregate_numba
    edge_sqdiff = edge_sqdiff_numba
else:
    fwht = fwht_numpy
    aggregate = aggregate_numpy
    edge_sqdiff = edge_sqdiff_numpy


def set_threads(n: int) -> None:
    """Cap numba's thread pool (no-op on the numpy path)."""
    if HAVE_NUMBA and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
