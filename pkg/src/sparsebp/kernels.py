"""Dense and row-masked f32 linear-algebra kernels with exact MAC accounting.

All kernels accumulate in float32, strictly in ascending index order, so that
a masked (sparse) computation is bit-identical to the corresponding dense
computation with zeros in the unselected slots.  That property is what makes
"sparse equals masked dense" an exact test rather than an approximate one,
and it is why these loops are hand-written instead of delegated to BLAS
(which reassociates sums).

Masked kernels return ``(result, macs)`` where ``macs`` is the number of
multiply-accumulate operations actually executed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

F32 = np.float32


def as_matrix(data) -> np.ndarray:
    """Validate and convert external input to a C-order f32 matrix."""
    m = np.ascontiguousarray(data, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite values")
    return m


def as_vector(data) -> np.ndarray:
    """Validate and convert external input to a contiguous f32 vector."""
    v = np.ascontiguousarray(data, dtype=np.float32)
    if v.ndim != 1:
        raise ValueError(f"vector must be 1-D, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError("vector contains non-finite values")
    return v


class IndexSet:
    """A sorted set of distinct row/component indices into a vector of length ``bound``.

    Non-empty by construction: selections always keep at least one component.
    """

    __slots__ = ("indices", "bound")

    def __init__(self, indices, bound: int):
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("indices must be 1-D")
        if not 1 <= idx.size <= bound:
            raise ValueError(f"need 1 <= |indices| <= bound, got {idx.size} of {bound}")
        if idx.size > 1 and not (np.diff(idx) > 0).all():
            raise ValueError("indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= bound:
            raise ValueError(f"indices must lie in [0, {bound})")
        idx.setflags(write=False)
        self.indices = idx
        self.bound = int(bound)

    @classmethod
    def full(cls, bound: int) -> "IndexSet":
        return cls._trusted(np.arange(bound, dtype=np.int64), bound)

    @classmethod
    def _trusted(cls, sorted_indices: np.ndarray, bound: int) -> "IndexSet":
        # Fast path for internally produced, already-valid index arrays.
        obj = object.__new__(cls)
        sorted_indices.setflags(write=False)
        object.__setattr__(obj, "indices", sorted_indices)
        object.__setattr__(obj, "bound", int(bound))
        return obj

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def is_full(self) -> bool:
        return self.size == self.bound

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndexSet):
            return NotImplemented
        return self.bound == other.bound and np.array_equal(self.indices, other.indices)

    def __repr__(self) -> str:
        return f"IndexSet({self.indices.tolist()}, bound={self.bound})"


# --------------------------------------------------------------------------
# numba kernels (private): f32, ascending accumulation order
# --------------------------------------------------------------------------


@njit(cache=True)
def _matvec(w, x):
    n, m = w.shape
    out = np.empty(n, np.float32)
    for i in range(n):
        acc = np.float32(0.0)
        for j in range(m):
            acc += w[i, j] * x[j]
        out[i] = acc
    return out


@njit(cache=True)
def _matvec_t(w, d):
    # out[j] = sum_i w[i,j] * d[i], i ascending (row saxpy order)
    n, m = w.shape
    out = np.zeros(m, np.float32)
    for i in range(n):
        di = d[i]
        for j in range(m):
            out[j] += w[i, j] * di
    return out


@njit(cache=True)
def _matvec_t_rows(w, dvals, rows):
    # Same accumulation order as _matvec_t restricted to the selected rows.
    m = w.shape[1]
    out = np.zeros(m, np.float32)
    macs = 0
    for ii in range(rows.size):
        i = rows[ii]
        di = dvals[ii]
        for j in range(m):
            out[j] += w[i, j] * di
        macs += m
    return out, macs


@njit(cache=True)
def _outer_rows(dvals, a):
    k = dvals.size
    m = a.size
    out = np.empty((k, m), np.float32)
    macs = 0
    for ii in range(k):
        dv = dvals[ii]
        for j in range(m):
            out[ii, j] = dv * a[j]
        macs += m
    return out, macs


@njit(cache=True)
def _topk_indices(absv, k):
    # Quickselect the k largest by (absolute value, then lower index wins),
    # then sort the survivors ascending.  The composite key is total, so the
    # selected set is unique and pivot choice cannot affect the result.
    n = absv.size
    idx = np.arange(n)
    if k < n:
        left = 0
        right = n - 1
        while left < right:
            pm = (left + right) // 2
            t = idx[pm]
            idx[pm] = idx[right]
            idx[right] = t
            p = idx[right]
            store = left
            for i in range(left, right):
                c = idx[i]
                if absv[c] > absv[p] or (absv[c] == absv[p] and c < p):
                    t = idx[store]
                    idx[store] = idx[i]
                    idx[i] = t
                    store += 1
            t = idx[store]
            idx[store] = idx[right]
            idx[right] = t
            if store == k - 1:
                break
            elif store < k - 1:
                left = store + 1
            else:
                right = store - 1
    return np.sort(idx[:k])


@njit(cache=True)
def _sgd_rows(w, b, rows, dw_rows, db_vals, lr):
    m = w.shape[1]
    for ii in range(rows.size):
        i = rows[ii]
        for j in range(m):
            w[i, j] -= lr * dw_rows[ii, j]
        b[i] -= lr * db_vals[ii]


@njit(cache=True)
def _sgd_dense(w, b, dw, db, lr):
    n, m = w.shape
    for i in range(n):
        for j in range(m):
            w[i, j] -= lr * dw[i, j]
        b[i] -= lr * db[i]


@njit(cache=True)
def _accum_rows(acc_w, acc_b, rows, dw_rows, db_vals):
    m = acc_w.shape[1]
    for ii in range(rows.size):
        i = rows[ii]
        for j in range(m):
            acc_w[i, j] += dw_rows[ii, j]
        acc_b[i] += db_vals[ii]


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Dense W·x with fixed ascending-j accumulation."""
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec shape mismatch: {w.shape} @ {x.shape}")
    return _matvec(w, x)


def matvec_t(w: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Dense Wᵀ·d with the same per-element accumulation order as the masked variant."""
    if w.shape[0] != d.shape[0]:
        raise ValueError(f"matvec_t shape mismatch: {w.shape}ᵀ @ {d.shape}")
    return _matvec_t(w, d)


def matvec_t_masked(w: np.ndarray, d: np.ndarray, sel: IndexSet):
    """Wᵀ·d touching only the rows of W in ``sel``; d must be zero outside ``sel``.

    Returns ``(dense vector of length w.cols, macs)`` with macs == sel.size * w.cols.
    """
    if w.shape[0] != d.shape[0] or sel.bound != w.shape[0]:
        raise ValueError(
            f"matvec_t_masked shape mismatch: W {w.shape}, d {d.shape}, bound {sel.bound}"
        )
    return _matvec_t_rows(w, np.ascontiguousarray(d[sel.indices]), sel.indices)


def matvec_t_rows(w: np.ndarray, dvals: np.ndarray, sel: IndexSet):
    """As matvec_t_masked, but taking the k surviving values directly."""
    if sel.bound != w.shape[0] or dvals.shape[0] != sel.size:
        raise ValueError("matvec_t_rows shape mismatch")
    return _matvec_t_rows(w, dvals, sel.indices)


def outer_masked(d: np.ndarray, a: np.ndarray, sel: IndexSet):
    """Row-sparse outer product d·aᵀ: returns the |sel| selected rows and the MAC count.

    Row ``ii`` of the result is ``d[sel.indices[ii]] * a``; unselected rows of the
    conceptual gradient are exactly zero and never materialized.
    """
    if sel.bound != d.shape[0]:
        raise ValueError(f"outer_masked bound mismatch: d {d.shape}, bound {sel.bound}")
    return _outer_rows(np.ascontiguousarray(d[sel.indices]), a)


def outer_rows(dvals: np.ndarray, a: np.ndarray, sel: IndexSet):
    """As outer_masked, but taking the k surviving values directly."""
    if dvals.shape[0] != sel.size:
        raise ValueError("outer_rows shape mismatch")
    return _outer_rows(dvals, a)


def top_k(v: np.ndarray, k: int) -> IndexSet:
    """Indices of the k largest |v[i]|, ties broken toward the lower index, sorted ascending."""
    n = v.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"top_k needs 1 <= k <= {n}, got {k}")
    return IndexSet._trusted(_topk_indices(np.abs(v), k), n)


def mask(v: np.ndarray, sel: IndexSet) -> np.ndarray:
    """Copy of v with entries outside ``sel`` set to exactly 0.0."""
    if sel.bound != v.shape[0]:
        raise ValueError(f"mask bound mismatch: len(v)={v.shape[0]}, bound={sel.bound}")
    out = np.zeros_like(v)
    out[sel.indices] = v[sel.indices]
    return out
