"""Dataset splitting, ranking metrics, cold-start subsets, feature noise and synthetic data."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import matrix as mx
from .errors import InputError
from .fusion import RecommendationList

DEFAULT_RATIOS = (0.8, 0.1, 0.1)
COLD_START_THRESHOLD = 5
# level -> multiple of the per-dimension standard deviation; 2..4 interpolate 0.1..2.0
NOISE_SCALES = (0.0, 0.1, 0.575, 1.05, 1.525, 2.0)
LATENT_DIM = 16


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    train: sp.csr_matrix
    valid: sp.csr_matrix
    test: sp.csr_matrix
    seed: int


def split_dataset(R, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> DatasetSplit:
    """Per-user random train/valid/test partition.

    Each user with ``n >= 3`` interactions sends ``max(1, floor(n * valid))``
    to validation and ``max(1, floor(n * test))`` to test; the remainder
    stays in training. Users with fewer than three interactions keep all of
    them in training.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise InputError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    R = mx.canonical(R)
    n_users, n_items = R.shape
    rng = np.random.default_rng(seed)
    parts = {0: ([], []), 1: ([], []), 2: ([], [])}
    for u in range(n_users):
        items = R.indices[R.indptr[u]:R.indptr[u + 1]]
        n = items.size
        if n == 0:
            continue
        if n >= 3:
            n_valid = max(1, math.floor(n * ratios[1] + 1e-9))
            n_test = max(1, math.floor(n * ratios[2] + 1e-9))
        else:
            n_valid = n_test = 0
        n_train = n - n_valid - n_test
        perm = items[rng.permutation(n)]
        for which, chunk in ((0, perm[:n_train]), (1, perm[n_train:n_train + n_valid]),
                             (2, perm[n_train + n_valid:])):
            parts[which][0].append(np.full(chunk.size, u))
            parts[which][1].append(chunk)

    def build(which):
        rows, cols = parts[which]
        r = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
        c = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
        return mx.canonical(sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n_users, n_items)))

    return DatasetSplit(build(0), build(1), build(2), int(seed))


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    recall_at: dict[int, float]
    ndcg_at: dict[int, float]
    n_users_evaluated: int
    wall_time_seconds: float = 0.0
    n_skipped: int = 0

    def to_tsv(self, include_time: bool = False) -> str:
        buf = io.StringIO()
        buf.write("metric\tK\tvalue\n")
        for k in sorted(self.recall_at):
            buf.write(f"recall\t{k}\t{self.recall_at[k]:.10f}\n")
        for k in sorted(self.ndcg_at):
            buf.write(f"ndcg\t{k}\t{self.ndcg_at[k]:.10f}\n")
        buf.write(f"users_evaluated\t-\t{self.n_users_evaluated}\n")
        buf.write(f"users_skipped\t-\t{self.n_skipped}\n")
        if include_time:
            buf.write(f"wall_time_seconds\t-\t{self.wall_time_seconds:.6f}\n")
        return buf.getvalue()


def _discounts(K: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, K + 2))


def evaluate(recs: Iterable[RecommendationList], test, Ks: Sequence[int],
             wall_time_seconds: float = 0.0) -> EvalReport:
    """Recall@K and NDCG@K (binary relevance) averaged over users with test items.

    Lists for users without test interactions are skipped and counted in
    ``n_skipped``.
    """
    Ks = sorted({int(k) for k in Ks})
    if not Ks or Ks[0] < 1:
        raise InputError(f"cutoffs must be positive, got {Ks}")
    test = mx.canonical(test)
    disc = _discounts(Ks[-1])
    cum_disc = np.cumsum(disc)
    recall = {k: 0.0 for k in Ks}
    ndcg = {k: 0.0 for k in Ks}
    n_eval = n_skip = 0
    for rec in recs:
        u = rec.user
        truth = test.indices[test.indptr[u]:test.indptr[u + 1]] if 0 <= u < test.shape[0] else ()
        if len(truth) == 0:
            n_skip += 1
            continue
        n_eval += 1
        ranked = np.asarray(rec.items[:Ks[-1]], dtype=np.int64)
        hits = np.isin(ranked, truth).astype(np.float64)
        for k in Ks:
            h = hits[:k]
            recall[k] += h.sum() / len(truth)
            idcg = cum_disc[min(k, len(truth)) - 1]
            ndcg[k] += float(h @ disc[:h.size]) / idcg
    if n_eval:
        recall = {k: v / n_eval for k, v in recall.items()}
        ndcg = {k: v / n_eval for k, v in ndcg.items()}
    return EvalReport(recall, ndcg, n_eval, wall_time_seconds, n_skip)


def users_with_interactions(M) -> np.ndarray:
    M = mx.canonical(M)
    return np.flatnonzero(np.diff(M.indptr) > 0)


def cold_start_users(R_train, threshold: int = COLD_START_THRESHOLD) -> np.ndarray:
    """Users whose training degree is at most ``threshold``."""
    R_train = mx.canonical(R_train)
    return np.flatnonzero(np.diff(R_train.indptr) <= threshold)


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseLevel:
    level: int
    sigma_scale: float = field(init=False)

    def __post_init__(self):
        if not (isinstance(self.level, (int, np.integer)) and 0 <= self.level < len(NOISE_SCALES)):
            raise InputError(f"noise level must be an integer in 0..5, got {self.level!r}")
        object.__setattr__(self, "sigma_scale", NOISE_SCALES[self.level])


def inject_noise(X, level: NoiseLevel | int, seed: int, *, per_dimension: bool = True) -> np.ndarray:
    """Add Gaussian noise scaled to the feature standard deviation.

    The noise standard deviation of dimension ``d`` is
    ``sigma_scale * std(X[:, d])`` (sample std); with
    ``per_dimension=False`` one scalar std of the whole matrix is used.
    Each level draws from its own seed substream.
    """
    if not isinstance(level, NoiseLevel):
        level = NoiseLevel(level)
    X = np.asarray(X, dtype=np.float64)
    if level.sigma_scale == 0.0:
        return X.copy()
    if X.shape[0] < 2:
        return X.copy()
    sigma = X.std(axis=0, ddof=1) if per_dimension else np.full(X.shape[1], X.std(ddof=1))
    rng = np.random.default_rng([int(seed), level.level])
    noise = rng.standard_normal(X.shape)
    noise *= level.sigma_scale * sigma
    return X + noise


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

def generate_synthetic(n_users: int, n_items: int, n_interactions: int, d_txt: int = 384,
                       d_img: int = 4096, seed: int = 0, *, affinity: float = 0.8,
                       n_clusters: int | None = None, feature_noise: float = 1.0):
    """Random implicit-feedback data with latent-factor modality features.

    Items belong to latent clusters; each item has a 16-dimensional latent
    vector (cluster centroid plus jitter) that is projected to ``d_txt`` and
    ``d_img`` dimensions with additive Gaussian noise. A coverage pass first
    pairs users and items so every item, and as many users as the budget
    allows, get one interaction. Remaining interactions are drawn without
    replacement: with probability ``affinity`` from the user's home cluster,
    otherwise uniformly. ``affinity=0`` gives uniform sampling.

    Returns ``(R, X_txt, X_img)``; features are float32 like on-disk embeddings.
    """
    if min(n_users, n_items) < 1 or n_interactions < 1:
        raise InputError("users, items and interactions must be positive")
    if n_interactions > n_users * n_items:
        raise InputError(f"{n_interactions} interactions exceed {n_users}x{n_items} cells")
    if n_interactions < n_items:
        raise InputError(f"{n_interactions} interactions cannot cover {n_items} items")
    if not 0.0 <= affinity <= 1.0:
        raise InputError(f"affinity must lie in [0, 1], got {affinity}")

    rng = np.random.default_rng(seed)
    C = n_clusters or int(np.clip(n_items // 50, 2, 64))
    C = min(C, n_items)
    item_cluster = np.arange(n_items) % C
    rng.shuffle(item_cluster)
    user_home = rng.integers(0, C, size=n_users)

    # coverage pass
    m = min(max(n_users, n_items), n_interactions)
    t = np.arange(m)
    cu = rng.permutation(n_users)[t % n_users]
    ci = rng.permutation(n_items)[t % n_items]
    codes = np.unique(cu.astype(np.int64) * n_items + ci)

    # remaining budget
    by_cluster = np.argsort(item_cluster, kind="stable")
    sizes = np.bincount(item_cluster, minlength=C)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    while codes.size < n_interactions:
        need = n_interactions - codes.size
        draw = max(1024, int(need * 1.3))
        u = rng.integers(0, n_users, size=draw)
        from_home = rng.random(draw) < affinity
        i = rng.integers(0, n_items, size=draw)
        homes = user_home[u[from_home]]
        pick = (rng.random(homes.size) * sizes[homes]).astype(np.int64)
        i[from_home] = by_cluster[starts[homes] + pick]
        new = u.astype(np.int64) * n_items + i
        new = new[~np.isin(new, codes)]
        _, first = np.unique(new, return_index=True)
        new = new[np.sort(first)][:need]
        codes = np.union1d(codes, new)

    R = sp.csr_matrix((np.ones(codes.size), (codes // n_items, codes % n_items)),
                      shape=(n_users, n_items))
    R = mx.canonical(R)

    centroids = rng.standard_normal((C, LATENT_DIM))
    Z = centroids[item_cluster] + 0.5 * rng.standard_normal((n_items, LATENT_DIM))
    feats = []
    for d in (d_txt, d_img):
        W = rng.standard_normal((LATENT_DIM, d)) / np.sqrt(LATENT_DIM)
        X = Z.astype(np.float32) @ W.astype(np.float32)
        X += np.float32(feature_noise) * rng.standard_normal((n_items, d), dtype=np.float32)
        feats.append(X)
    return R, feats[0], feats[1]


def drop_empty_users(R) -> tuple[sp.csr_matrix, np.ndarray]:
    """Remove users without interactions; returns the compacted matrix and kept user ids."""
    R = mx.canonical(R)
    keep = users_with_interactions(R)
    return R[keep], keep
