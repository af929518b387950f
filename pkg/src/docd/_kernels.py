"""Hot graph kernels with a numba path and a pure-numpy fallback.

Set DOCD_NUMBA=0 to force the numpy implementations (also used when numba
is not importable). Both paths return identical int64 arrays.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_wants_numba() -> bool:
    return os.environ.get("DOCD_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = numba is not None and _env_wants_numba()


# numpy ---------------------------------------------------------------------

def _dense(indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    n = indptr.size - 1
    a = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    a[rows, indices] = 1.0
    return a


def masked_link_counts_numpy(indptr, indices, mask, rows):
    """For each v in rows: edges among N(v) with both endpoints where mask is set."""
    a = _dense(indptr, indices)
    b = a[rows] * mask.astype(np.float64)[None, :]
    counts = ((b @ a) * b).sum(axis=1) / 2.0
    return np.rint(counts).astype(np.int64)


def union_link_counts_numpy(indptr, indices, membership):
    """For each v: edges among N(v) whose endpoints share a community with v."""
    a = _dense(indptr, indices)
    mem = membership.astype(np.float64)
    shared = (mem @ mem.T) > 0
    b = a * shared
    counts = ((b @ a) * b).sum(axis=1) / 2.0
    return np.rint(counts).astype(np.int64)


def eccentricities_numpy(indptr, indices):
    """BFS eccentricity per vertex, -1 where some vertex is unreachable."""
    n = indptr.size - 1
    a = _dense(indptr, indices)
    reach = np.eye(n, dtype=bool)
    frontier = reach.copy()
    ecc = np.zeros(n, dtype=np.int64)
    d = 0
    while frontier.any():
        d += 1
        nxt = ((frontier.astype(np.float64) @ a) > 0) & ~reach
        ecc[nxt.any(axis=1)] = d
        reach |= nxt
        frontier = nxt
    ecc[~reach.all(axis=1)] = -1
    return ecc


# numba ---------------------------------------------------------------------

def _masked_link_counts_loop(indptr, indices, mask, rows):
    n = indptr.size - 1
    mark = np.zeros(n, dtype=np.bool_)
    out = np.zeros(rows.size, dtype=np.int64)
    for i in range(rows.size):
        v = rows[i]
        for p in range(indptr[v], indptr[v + 1]):
            a = indices[p]
            if mask[a]:
                mark[a] = True
        cnt = 0
        for p in range(indptr[v], indptr[v + 1]):
            a = indices[p]
            if mark[a]:
                for q in range(indptr[a], indptr[a + 1]):
                    b = indices[q]
                    if b > a and mark[b]:
                        cnt += 1
        for p in range(indptr[v], indptr[v + 1]):
            mark[indices[p]] = False
        out[i] = cnt
    return out


def _union_link_counts_loop(indptr, indices, membership):
    n = indptr.size - 1
    k = membership.shape[1]
    mark = np.zeros(n, dtype=np.bool_)
    out = np.zeros(n, dtype=np.int64)
    for v in range(n):
        for p in range(indptr[v], indptr[v + 1]):
            a = indices[p]
            for c in range(k):
                if membership[a, c] and membership[v, c]:
                    mark[a] = True
                    break
        cnt = 0
        for p in range(indptr[v], indptr[v + 1]):
            a = indices[p]
            if mark[a]:
                for q in range(indptr[a], indptr[a + 1]):
                    b = indices[q]
                    if b > a and mark[b]:
                        cnt += 1
        for p in range(indptr[v], indptr[v + 1]):
            mark[indices[p]] = False
        out[v] = cnt
    return out


def _eccentricities_loop(indptr, indices):
    n = indptr.size - 1
    ecc = np.zeros(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[:] = -1
        dist[s] = 0
        head, tail = 0, 1
        queue[0] = s
        while head < tail:
            v = queue[head]
            head += 1
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    queue[tail] = u
                    tail += 1
        ecc[s] = -1 if tail < n else dist[queue[tail - 1]]
    return ecc


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    masked_link_counts_numba = _jit(_masked_link_counts_loop)
    union_link_counts_numba = _jit(_union_link_counts_loop)
    eccentricities_numba = _jit(_eccentricities_loop)
else:  # pragma: no cover
    masked_link_counts_numba = _masked_link_counts_loop
    union_link_counts_numba = _union_link_counts_loop
    eccentricities_numba = _eccentricities_loop


def masked_link_counts(indptr, indices, mask, rows):
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if USE_NUMBA:
        return masked_link_counts_numba(indptr, indices, mask, rows)
    return masked_link_counts_numpy(indptr, indices, mask, rows)


def union_link_counts(indptr, indices, membership):
    membership = np.ascontiguousarray(membership, dtype=np.bool_)
    if USE_NUMBA:
        return union_link_counts_numba(indptr, indices, membership)
    return union_link_counts_numpy(indptr, indices, membership)


def eccentricities(indptr, indices):
    if USE_NUMBA:
        return eccentricities_numba(indptr, indices)
    return eccentricities_numpy(indptr, indices)
