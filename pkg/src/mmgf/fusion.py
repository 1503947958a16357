"""Fusion of filtered graphs, preference scoring and top-K recommendation."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import matrix as mx
from .errors import InputError
from .spectral import FilteredGraph

DEFAULT_USER_BLOCK = 1024


@dataclass(frozen=True)
class FusionWeights:
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InputError(f"fusion weight {name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: tuple[int, ...]
    scores: tuple[float, ...]


def _check_pair(name, graph, weight, n):
    if graph is None:
        if weight != 0:
            raise InputError(f"{name} graph is absent but its weight is {weight:g}")
        return False
    if graph.n_items != n:
        raise InputError(f"{name} graph has {graph.n_items} items, expected {n}")
    return weight != 0


def fuse(interaction_f: FilteredGraph, txt_f: FilteredGraph | None,
         img_f: FilteredGraph | None, w: FusionWeights) -> np.ndarray:
    """``P_f + beta * P_txt_f + gamma * P_img_f`` as a dense matrix."""
    n = interaction_f.n_items
    use_txt = _check_pair("txt", txt_f, w.beta, n)
    use_img = _check_pair("img", img_f, w.gamma, n)
    for g in (interaction_f, txt_f if use_txt else None, img_f if use_img else None):
        if g is not None and not g.materialized:
            raise InputError("fuse needs materialized filtered graphs; use FusedOperator instead")
    P = interaction_f.adjacency.copy()
    if use_txt:
        P += w.beta * txt_f.adjacency
    if use_img:
        P += w.gamma * img_f.adjacency
    return P


class FusedOperator:
    """Unmaterialized fusion: scores are summed per graph instead of per matrix."""

    def __init__(self, interaction_f: FilteredGraph, txt_f: FilteredGraph | None,
                 img_f: FilteredGraph | None, w: FusionWeights):
        n = interaction_f.n_items
        self.n_items = n
        self.terms = [(1.0, interaction_f)]
        if _check_pair("txt", txt_f, w.beta, n):
            self.terms.append((w.beta, txt_f))
        if _check_pair("img", img_f, w.gamma, n):
            self.terms.append((w.gamma, img_f))

    @property
    def shape(self):
        return (self.n_items, self.n_items)

    def right_multiply(self, Y) -> np.ndarray:
        out = None
        for weight, graph in self.terms:
            part = graph.right_multiply(Y)
            if weight != 1.0:
                part *= weight
            out = part if out is None else out + part
        return out


def _right_multiply(Y, P) -> np.ndarray:
    if hasattr(P, "right_multiply"):
        return P.right_multiply(Y)
    return mx.matmat(Y, P)


def score_user(r_u, P_MM) -> np.ndarray:
    """Preference scores ``r_u @ P_MM`` for one user's interaction row.

    Stored entries of ``r_u`` are accumulated in ascending item order.
    """
    n = P_MM.shape[0]
    if sp.issparse(r_u):
        r_u = sp.csr_matrix(r_u)
        if r_u.shape != (1, n):
            raise InputError(f"user row of shape {r_u.shape} does not match {n} items")
        r_u.sort_indices()
        idx, vals = r_u.indices, r_u.data
    else:
        r = np.asarray(r_u, dtype=np.float64).ravel()
        if r.shape != (n,):
            raise InputError(f"user row of length {r.size} does not match {n} items")
        idx = np.flatnonzero(r)
        vals = r[idx]
    if hasattr(P_MM, "right_multiply"):
        row = sp.csr_matrix((vals, idx, [0, idx.size]), shape=(1, n))
        return P_MM.right_multiply(row)[0]
    s = np.zeros(n)
    for j, v in zip(idx, vals):
        s += v * P_MM[j]
    return s


def _select(scores: np.ndarray, excluded: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best non-excluded entries, ordered by (-score, index)."""
    cand = np.flatnonzero(~excluded)
    if cand.size <= k:
        chosen = cand
    else:
        vals = scores[cand]
        kth = np.partition(vals, vals.size - k)[vals.size - k]
        greater = vals > kth
        equal = np.flatnonzero(vals == kth)[: k - int(greater.sum())]
        keep = greater
        keep[equal] = True
        chosen = cand[keep]
    order = np.argsort(-scores[chosen], kind="stable")
    return chosen[order]


def recommend_topk(s_u, train_items: Iterable[int], K_rec: int, user: int = -1) -> RecommendationList:
    """The ``K_rec`` highest scores outside ``train_items``; ties go to the lower index."""
    if K_rec < 1:
        raise InputError(f"K_rec must be >= 1, got {K_rec}")
    s_u = np.asarray(s_u, dtype=np.float64).ravel()
    excluded = np.zeros(s_u.size, dtype=bool)
    idx = np.fromiter(train_items, dtype=np.int64)
    excluded[idx] = True
    chosen = _select(s_u, excluded, K_rec)
    return RecommendationList(int(user), tuple(int(i) for i in chosen),
                              tuple(float(v) for v in s_u[chosen]))


def batch_recommend(R_train, P_MM, users: Sequence[int], K_rec: int, *,
                    block_size: int = DEFAULT_USER_BLOCK) -> list[RecommendationList]:
    """Score users in blocks (sparse rows times the fused graph) and take top-K.

    ``P_MM`` is a dense fused matrix or any object with ``right_multiply``
    (for instance :class:`FusedOperator`).
    """
    if K_rec < 1:
        raise InputError(f"K_rec must be >= 1, got {K_rec}")
    R_train = mx.canonical(R_train)
    n = R_train.shape[1]
    if P_MM.shape != (n, n):
        raise InputError(f"fused graph {P_MM.shape} does not match {n} items")
    users = np.asarray(list(users), dtype=np.int64)
    out = []
    for start in range(0, users.size, block_size):
        block = users[start:start + block_size]
        R_block = R_train[block]
        S = _right_multiply(R_block, P_MM)
        for row, u in enumerate(block):
            excluded = np.zeros(n, dtype=bool)
            excluded[R_block.indices[R_block.indptr[row]:R_block.indptr[row + 1]]] = True
            chosen = _select(S[row], excluded, K_rec)
            out.append(RecommendationList(int(u), tuple(int(i) for i in chosen),
                                          tuple(float(v) for v in S[row, chosen])))
    return out


def recommendations_tsv(recs: Iterable[RecommendationList]) -> str:
    """``user<TAB>item<TAB>rank<TAB>score`` lines, rank starting at 1."""
    buf = io.StringIO()
    for rec in recs:
        for rank, (item, score) in enumerate(zip(rec.items, rec.scores), start=1):
            buf.write(f"{rec.user}\t{item}\t{rank}\t{score:.17g}\n")
    return buf.getvalue()


def read_recommendations_tsv(text: str) -> list[RecommendationList]:
    rows: dict[int, list] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise InputError(f"line {lineno}: expected 4 tab-separated fields")
        u, i, rank, score = int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
        rows.setdefault(u, []).append((rank, i, score))
    out = []
    for u, entries in rows.items():
        entries.sort()
        out.append(RecommendationList(u, tuple(e[1] for e in entries), tuple(e[2] for e in entries)))
    return out
