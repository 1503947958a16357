"""Item-item similarity graphs from interactions and modality features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import matrix as mx
from .errors import InputError, SingularityError

# rows of the cosine matrix computed per BLAS call; bounds peak memory
DEFAULT_BLOCK_ROWS = 2048
# cap on block elements, so a block stays near 128 MB however many items there are
BLOCK_ELEMENTS = 1 << 24


def _block_rows(n: int, block_rows: int | None) -> int:
    if block_rows is None:
        return max(1, min(DEFAULT_BLOCK_ROWS, BLOCK_ELEMENTS // max(n, 1)))
    if block_rows < 1:
        raise InputError(f"block_rows must be positive, got {block_rows}")
    return block_rows


@dataclass(frozen=True)
class ItemGraph:
    """A symmetric nonnegative item x item adjacency.

    ``adjacency`` is a dense float64 array or, for large catalogs, a CSR
    matrix. ``source`` is ``"interaction"`` or ``"modality:<name>"``.
    """

    adjacency: np.ndarray | sp.csr_matrix
    source: str
    alpha: float
    s: float

    @property
    def n_items(self) -> int:
        return self.adjacency.shape[0]

    @property
    def is_dense(self) -> bool:
        return not sp.issparse(self.adjacency)

    def to_dense(self) -> np.ndarray:
        if self.is_dense:
            return self.adjacency
        return self.adjacency.toarray()


@dataclass(frozen=True)
class ModalityConfig:
    k_neighbors: int = 20
    modality_name: str = "txt"


def _check_alpha_s(alpha: float, s: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha!r}")
    if not s > 0:
        raise InputError(f"adjustment s must be positive, got {s!r}")


def _list_indices(idx: np.ndarray, limit: int = 10) -> str:
    shown = ", ".join(str(i) for i in idx[:limit])
    return shown + (f" (+{idx.size - limit} more)" if idx.size > limit else "")


def build_interaction_graph(R, alpha: float, s: float, *, dense: bool = True,
                            dense_cap: int = mx.DEFAULT_DENSE_CAP,
                            allow_isolated: bool = False) -> ItemGraph:
    """Item graph ``(Dr^-a R Dc^(a-1))^T (Dr^-a R Dc^(a-1))`` raised elementwise to ``s``.

    Every user and every item must have at least one interaction unless
    ``allow_isolated`` is set, in which case empty users contribute nothing
    and empty items become isolated nodes (all-zero rows and columns).
    """
    _check_alpha_s(alpha, s)
    R = mx.canonical(R)
    if R.nnz == 0:
        raise InputError("rating matrix has no interactions")
    dr = mx.row_degrees(R)
    dc = mx.col_degrees(R)
    bad_users = np.flatnonzero(dr <= 0)
    bad_items = np.flatnonzero(dc <= 0)
    if (bad_users.size or bad_items.size) and not allow_isolated:
        parts = []
        if bad_users.size:
            parts.append(f"users [{_list_indices(bad_users)}]")
        if bad_items.size:
            parts.append(f"items [{_list_indices(bad_items)}]")
        raise SingularityError("zero-degree " + " and ".join(parts) + "; filter them out first")

    R_norm = mx.scale_rows_cols(R, dr, dc, -alpha, alpha - 1.0)
    P = mx.gram(R_norm, mx.TRANSPOSE_FIRST, dense=dense, dense_cap=dense_cap)
    P = mx.hadamard_power(P, s, out=P if dense else None)
    return ItemGraph(P, "interaction", float(alpha), float(s))


def _normalized_rows(X) -> np.ndarray:
    X = np.array(X, dtype=np.float64)
    if X.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise InputError("feature matrix contains non-finite values")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise SingularityError(f"all-zero feature rows for items [{_list_indices(zero)}]")
    X /= norms[:, None]
    return X


def _cosine_block(Xn: np.ndarray, start: int, stop: int) -> np.ndarray:
    S = Xn[start:stop] @ Xn.T
    S[np.arange(stop - start), np.arange(start, stop)] = 1.0
    return S


def cosine_similarity(X, *, block_rows: int | None = None) -> np.ndarray:
    """Dense cosine similarity between the rows of ``X`` (unit diagonal)."""
    Xn = _normalized_rows(X)
    n = Xn.shape[0]
    block_rows = _block_rows(n, block_rows)
    S = np.empty((n, n))
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        S[start:stop] = _cosine_block(Xn, start, stop)
    return S


def _topk_mask(block: np.ndarray, offset: int, k: int) -> np.ndarray:
    """Boolean top-k mask of a row block whose first row is matrix row ``offset``.

    The diagonal is always kept; the remaining k-1 slots go to the largest
    values, ties resolved towards the lower column index.
    """
    b, n = block.shape
    vals = block.copy()
    rows = np.arange(b)
    vals[rows, offset + rows] = np.inf
    kth = np.partition(vals, n - k, axis=1)[:, n - k][:, None]
    greater = vals > kth
    need = k - greater.sum(axis=1)
    equal = vals == kth
    mask = greater | (equal & (np.cumsum(equal, axis=1, dtype=np.int32) <= need[:, None]))
    return mask


def _mask_to_csr(masks, n: int) -> sp.csr_matrix:
    rows, cols = [], []
    for offset, mask in masks:
        r, c = np.nonzero(mask)
        rows.append(r + offset)
        cols.append(c)
    r = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    M = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    M.sort_indices()
    return M


def topk_binarize(S, k: int) -> sp.csr_matrix:
    """Binary kNN matrix keeping, per row, the diagonal plus the k-1 most similar columns."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InputError(f"similarity matrix must be square, got {S.shape}")
    n = S.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k_neighbors must lie in [1, {n}], got {k}")
    step = _block_rows(n, None)
    masks = ((start, _topk_mask(S[start:start + step], start, k)) for start in range(0, n, step))
    return _mask_to_csr(masks, n)


def knn_graph(X, k: int, *, block_rows: int | None = None) -> sp.csr_matrix:
    """``topk_binarize(cosine_similarity(X), k)`` without materializing the n x n similarity."""
    Xn = _normalized_rows(X)
    n = Xn.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k_neighbors must lie in [1, {n}], got {k}")
    block_rows = _block_rows(n, block_rows)
    # consumed lazily so only one block mask is alive at a time
    masks = ((start, _topk_mask(_cosine_block(Xn, start, min(start + block_rows, n)), start, k))
             for start in range(0, n, block_rows))
    return _mask_to_csr(masks, n)


def modality_graph_from_knn(S_hat, alpha: float, s: float, name: str, *, dense: bool = True,
                            dense_cap: int = mx.DEFAULT_DENSE_CAP) -> ItemGraph:
    """Normalize a binary kNN matrix and form ``S~ S~^T`` raised elementwise to ``s``."""
    _check_alpha_s(alpha, s)
    S_hat = mx.canonical(S_hat)
    S_norm = mx.scale_rows_cols(S_hat, mx.row_degrees(S_hat), mx.col_degrees(S_hat),
                                -alpha, alpha - 1.0)
    P = mx.gram(S_norm, mx.TRANSPOSE_SECOND, dense=dense, dense_cap=dense_cap)
    P = mx.hadamard_power(P, s, out=P if dense else None)
    return ItemGraph(P, f"modality:{name}", float(alpha), float(s))


def build_modality_graph(X, cfg: ModalityConfig, alpha: float, s: float, *, dense: bool = True,
                         dense_cap: int = mx.DEFAULT_DENSE_CAP) -> ItemGraph:
    """Cosine kNN graph of one modality, normalized like the interaction graph.

    Note the Gram orientation is ``S~ S~^T`` (rows x rows).
    """
    _check_alpha_s(alpha, s)
    S_hat = knn_graph(X, cfg.k_neighbors)
    return modality_graph_from_knn(S_hat, alpha, s, cfg.modality_name,
                                   dense=dense, dense_cap=dense_cap)
