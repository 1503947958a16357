"""Sparse and dense matrix kernels used throughout the pipeline.

Sparse matrices are ``scipy.sparse.csr_matrix`` instances kept in canonical
form (sorted column indices, no duplicates, no stored zeros). Dense matrices
are C-ordered ``float64`` numpy arrays.

Summation order: every sparse row reduction accumulates stored entries in
ascending column order (the CSR storage order), and dense products go
through the BLAS linked into numpy. Results are therefore bit-identical run
to run at a fixed thread count.
"""

from __future__ import annotations

import contextlib
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from .errors import CapacityError, DomainError, InputError, SingularityError

DEFAULT_DENSE_CAP = 32768

TRANSPOSE_FIRST = "transpose_first"
TRANSPOSE_SECOND = "transpose_second"


def canonical(M) -> sp.csr_matrix:
    """Return ``M`` as a float64 CSR matrix in canonical form."""
    M = sp.csr_matrix(M, dtype=np.float64)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def sparse_from_triples(triples: Iterable, rows: int, cols: int) -> sp.csr_matrix:
    """Build a CSR matrix from ``(row, col, value)`` triples.

    Zero-valued triples are dropped. Duplicate ``(row, col)`` pairs and
    out-of-range indices raise :class:`InputError`.
    """
    triples = list(triples)
    if rows < 0 or cols < 0:
        raise InputError(f"negative shape ({rows}, {cols})")
    if not triples:
        return sp.csr_matrix((rows, cols), dtype=np.float64)

    r = np.empty(len(triples), dtype=np.int64)
    c = np.empty(len(triples), dtype=np.int64)
    v = np.empty(len(triples), dtype=np.float64)
    for t, (i, j, x) in enumerate(triples):
        if not (0 <= i < rows and 0 <= j < cols):
            raise InputError(f"triple {(i, j, x)!r} out of range for shape ({rows}, {cols})")
        r[t], c[t], v[t] = i, j, x

    return _from_arrays(r, c, v, rows, cols)


def _from_arrays(r, c, v, rows, cols) -> sp.csr_matrix:
    key = r * cols + c
    order = np.argsort(key, kind="stable")
    key = key[order]
    dup = np.flatnonzero(key[1:] == key[:-1])
    if dup.size:
        t = order[dup[0] + 1]
        raise InputError(f"duplicate entry at ({r[t]}, {c[t]})")
    M = sp.csr_matrix((v, (r, c)), shape=(rows, cols), dtype=np.float64)
    return canonical(M)


def row_degrees(M) -> np.ndarray:
    """Row sums of ``M`` as a 1-D float64 array."""
    return np.asarray(M.sum(axis=1), dtype=np.float64).ravel()


def col_degrees(M) -> np.ndarray:
    """Column sums of ``M`` as a 1-D float64 array."""
    return np.asarray(M.sum(axis=0), dtype=np.float64).ravel()


def _degree_power(deg: np.ndarray, exp: float, touched: np.ndarray, axis: str) -> np.ndarray:
    deg = np.asarray(deg, dtype=np.float64)
    if exp == 0:
        return np.ones_like(deg)
    bad = np.flatnonzero((deg <= 0) & touched) if exp < 0 else np.flatnonzero((deg < 0) & touched)
    if bad.size:
        shown = ", ".join(str(i) for i in bad[:10])
        more = f" (+{bad.size - 10} more)" if bad.size > 10 else ""
        raise SingularityError(
            f"{axis} degree {deg[bad[0]]:g} cannot be raised to power {exp:g}; "
            f"offending {axis}s: {shown}{more}"
        )
    out = np.ones_like(deg)
    ok = deg > 0
    out[ok] = deg[ok] ** exp
    return out


def scale_rows_cols(M, row_scale, col_scale, row_exp: float, col_exp: float) -> sp.csr_matrix:
    """Compute ``diag(row_scale)**row_exp @ M @ diag(col_scale)**col_exp``.

    Only degrees that touch a stored entry must be positive when their
    exponent is negative; untouched zero degrees are ignored.
    """
    M = canonical(M)
    n_rows, n_cols = M.shape
    row_scale = np.asarray(row_scale, dtype=np.float64).ravel()
    col_scale = np.asarray(col_scale, dtype=np.float64).ravel()
    if row_scale.shape != (n_rows,) or col_scale.shape != (n_cols,):
        raise InputError(
            f"scale lengths ({row_scale.size}, {col_scale.size}) do not match shape {M.shape}"
        )
    rows_touched = np.diff(M.indptr) > 0
    cols_touched = np.zeros(n_cols, dtype=bool)
    cols_touched[M.indices] = True

    rf = _degree_power(row_scale, row_exp, rows_touched, "row")
    cf = _degree_power(col_scale, col_exp, cols_touched, "column")

    out = M.copy()
    row_of_entry = np.repeat(np.arange(n_rows), np.diff(M.indptr))
    out.data = rf[row_of_entry] * M.data * cf[M.indices]
    return out


def gram(M, mode: str = TRANSPOSE_FIRST, *, dense: bool = True,
         dense_cap: int = DEFAULT_DENSE_CAP):
    """Gram product of a sparse matrix.

    ``transpose_first`` gives ``M.T @ M`` (cols x cols), ``transpose_second``
    gives ``M @ M.T`` (rows x rows). With ``dense=True`` the result is a
    dense array and its dimension must not exceed ``dense_cap``; otherwise
    a canonical CSR matrix is returned.
    """
    M = canonical(M)
    if mode == TRANSPOSE_FIRST:
        n = M.shape[1]
        left, right = M.T.tocsr(), M
    elif mode == TRANSPOSE_SECOND:
        n = M.shape[0]
        left, right = M, M.T.tocsr()
    else:
        raise InputError(f"unknown gram mode {mode!r}")
    if dense and n > dense_cap:
        raise CapacityError(
            f"dense {n}x{n} gram product exceeds the cap of {dense_cap} items "
            f"(~{n * n * 8 / 2**30:.1f} GiB); raise the cap or use sparse storage"
        )
    G = left @ right
    if dense:
        return np.ascontiguousarray(G.toarray())
    return canonical(G)


def hadamard_power(M, s: float, *, out=None):
    """Elementwise power ``M ** s`` with ``0 ** s = 0`` for ``s > 0``.

    Accepts a dense array or a sparse matrix (only stored values are
    raised, so ``s`` must be positive). ``out`` lets callers reuse a dense
    buffer they own.
    """
    s = float(s)
    if sp.issparse(M):
        if s <= 0:
            raise DomainError(f"sparse hadamard power needs s > 0, got {s:g}")
        M = canonical(M)
        if not float(s).is_integer() and M.nnz and M.data.min() < 0:
            raise DomainError(f"negative entry with non-integer exponent {s:g}")
        R = M.copy()
        R.data = np.power(M.data, s)
        return R

    M = np.asarray(M, dtype=np.float64)
    if s == 1.0:
        if out is None:
            return M.copy()
        if out is not M:
            out[...] = M
        return out
    if not s.is_integer() and (M < 0).any():
        raise DomainError(f"negative entry with non-integer exponent {s:g}")
    if s <= 0 and (M == 0).any():
        raise DomainError(f"zero entry cannot be raised to non-positive power {s:g}")
    return np.power(M, s, out=out)


def _check_vector(n: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != n:
        raise InputError(f"vector of shape {x.shape} does not match dimension {n}")
    return x


def symv(M, x) -> np.ndarray:
    """Dense matrix times vector."""
    M = np.asarray(M, dtype=np.float64)
    return M @ _check_vector(M.shape[1], x)


def spmv(M, x) -> np.ndarray:
    """Sparse matrix times vector, rows reduced in ascending column order."""
    return np.asarray(M @ _check_vector(M.shape[1], x)).ravel()


def matmat(A, B) -> np.ndarray:
    """Matrix product returning a dense array; either side may be sparse."""
    if A.shape[1] != B.shape[0]:
        raise InputError(f"cannot multiply {A.shape} by {B.shape}")
    C = A @ B
    if sp.issparse(C):
        C = C.toarray()
    return np.ascontiguousarray(C, dtype=np.float64)


def is_symmetric(M, atol: float) -> bool:
    if sp.issparse(M):
        D = (M - M.T).tocsr()
        return D.nnz == 0 or float(abs(D).max()) <= atol
    M = np.asarray(M)
    return M.shape[0] == M.shape[1] and bool(np.all(np.abs(M - M.T) <= atol))


@contextlib.contextmanager
def thread_limit(n: int | None):
    """Cap BLAS/OpenMP threads inside the block (``None`` leaves them alone)."""
    if n is None:
        yield
        return
    with threadpool_limits(limits=int(n)):
        yield
