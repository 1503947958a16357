"""End-to-end training-free pipeline: graphs, filters, fusion, recommendation."""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import matrix as mx
from .errors import InputError
from .evaluation import EvalReport, evaluate, users_with_interactions
from .fusion import FusedOperator, FusionWeights, batch_recommend, fuse
from .graphs import ItemGraph, build_interaction_graph, knn_graph, modality_graph_from_knn
from .spectral import (DEFAULT_DENSE_THRESHOLD, DEFAULT_MAX_ITER, DEFAULT_TOL, FilterSpec,
                       SpectralBounds, apply_filter, extreme_eigenvalues)

log = logging.getLogger(__name__)

MODALITIES = ("txt", "img")

PRESETS = {
    "baby": dict(coefficients=(-0.7, 1.1, -0.1), beta=0.1, gamma=0.0),
    "sports": dict(coefficients=(0.7, 1.8, 1.5), beta=1.9, gamma=0.5),
    "clothing": dict(coefficients=(1.9, 0.7, -0.1), beta=0.5, gamma=0.2),
}


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.5
    s: float = 1.0
    k_neighbors: int = 20
    interaction_filter: FilterSpec = FilterSpec.polynomial(-0.7, 1.1, -0.1)
    txt_filter: FilterSpec = FilterSpec.linear()
    img_filter: FilterSpec = FilterSpec.linear()
    beta: float = 0.1
    gamma: float = 0.0
    # per-modality (alpha, s); None falls back to the shared values
    txt_alpha_s: tuple[float, float] | None = None
    img_alpha_s: tuple[float, float] | None = None

    @classmethod
    def preset(cls, name: str, **overrides) -> "Hyperparams":
        try:
            p = PRESETS[name]
        except KeyError:
            raise InputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        hp = cls(interaction_filter=FilterSpec.polynomial(*p["coefficients"]),
                 beta=p["beta"], gamma=p["gamma"])
        return replace(hp, **overrides)

    def weight(self, modality: str) -> float:
        return self.beta if modality == "txt" else self.gamma

    def modality_filter(self, modality: str) -> FilterSpec:
        return self.txt_filter if modality == "txt" else self.img_filter

    def modality_alpha_s(self, modality: str) -> tuple[float, float]:
        override = self.txt_alpha_s if modality == "txt" else self.img_alpha_s
        return override if override is not None else (self.alpha, self.s)


@dataclass(frozen=True)
class Settings:
    """Numerical and storage settings that do not change the model definition."""

    materialize: bool = True
    dense_cap: int = mx.DEFAULT_DENSE_CAP
    eig_tol: float = DEFAULT_TOL
    eig_max_iter: int = DEFAULT_MAX_ITER
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD
    user_block: int = 1024


class StageTimer:
    """Wall-clock seconds per named stage, in first-seen order."""

    def __init__(self):
        self.stages: dict[str, float] = {}
        self.failed: str | None = None

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException:
            if self.failed is None:
                self.failed = name
            raise
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0

    @property
    def total(self) -> float:
        return sum(self.stages.values())

    def to_tsv(self, total: float | None = None) -> str:
        lines = ["stage\tseconds"]
        lines += [f"{k}\t{v:.6f}" for k, v in self.stages.items()]
        lines.append(f"total\t{self.total if total is None else total:.6f}")
        return "\n".join(lines) + "\n"


class GraphCache:
    """Memo of graphs, spectral bounds and filtered graphs keyed by their parameters.

    A cache belongs to one training matrix and one set of features; reusing
    it with different data raises :class:`InputError`. Matrix-valued entries
    are kept least-recently-used, at most ``max_entries`` per kind (the first
    element of the key); scalar bounds are never evicted.
    """

    def __init__(self, max_entries: int = 3):
        self.max_entries = max_entries
        self.store: dict[str, OrderedDict] = {}
        self._data_key = None

    def bind(self, R_train, features: Mapping[str, np.ndarray | None]) -> None:
        key = (R_train.shape, R_train.nnz, hash(R_train.indices.tobytes()),
               hash(R_train.indptr.tobytes()),
               tuple((m, None if features.get(m) is None else (id(features[m]), features[m].shape))
                     for m in MODALITIES))
        if self._data_key is None:
            self._data_key = key
        elif key != self._data_key:
            raise InputError("graph cache reused with a different dataset")

    def get(self, key: tuple, build):
        bucket = self.store.setdefault(key[0], OrderedDict())
        if key in bucket:
            bucket.move_to_end(key)
            return bucket[key]
        value = build()
        bucket[key] = value
        if key[0] != "bounds":
            while len(bucket) > self.max_entries:
                bucket.popitem(last=False)
        return value


@dataclass
class Model:
    hp: Hyperparams
    graphs: dict[str, ItemGraph]
    bounds: dict[str, SpectralBounds]
    filtered: dict[str, object]
    fused: object
    timer: StageTimer = field(default_factory=StageTimer)

    @property
    def n_items(self) -> int:
        return self.filtered["interaction"].n_items


def fit(R_train, features: Mapping[str, np.ndarray | None], hp: Hyperparams,
        settings: Settings = Settings(), *, timer: StageTimer | None = None,
        cache: GraphCache | None = None) -> Model:
    """Build, bound, filter and fuse the item graphs for one hyperparameter point.

    Modality graphs are only built for modalities with a nonzero weight,
    so zero-weight modalities never touch their features.
    """
    timer = timer or StageTimer()
    cache = cache or GraphCache()
    R_train = mx.canonical(R_train)
    n_items = R_train.shape[1]
    dense = settings.materialize
    cache.bind(R_train, features)

    active = [m for m in MODALITIES if hp.weight(m) != 0]
    for m in active:
        X = features.get(m)
        if X is None:
            raise InputError(f"{m} weight is {hp.weight(m):g} but no {m} features were supplied")
        if X.shape[0] != n_items:
            raise InputError(f"{m} features have {X.shape[0]} rows, expected {n_items} items")

    graphs, bounds, filtered = {}, {}, {}

    def graph_interaction():
        empty_items = int((np.diff(R_train.tocsc().indptr) == 0).sum())
        if empty_items:
            log.info("%d items without training interactions become isolated nodes", empty_items)
        return build_interaction_graph(R_train, hp.alpha, hp.s, dense=dense,
                                       dense_cap=settings.dense_cap, allow_isolated=True)

    keys = {}
    with timer.stage("graph_interaction"):
        keys["interaction"] = ("interaction", hp.alpha, hp.s, dense)
        graphs["interaction"] = cache.get(("graph",) + keys["interaction"], graph_interaction)

    for m in active:
        a, s = hp.modality_alpha_s(m)
        X = features[m]
        with timer.stage(f"graph_{m}"):
            knn = cache.get(("knn", m, hp.k_neighbors), lambda: knn_graph(X, hp.k_neighbors))
            keys[m] = (m, hp.k_neighbors, a, s, dense)
            graphs[m] = cache.get(
                ("graph",) + keys[m],
                lambda: modality_graph_from_knn(knn, a, s, m, dense=dense,
                                                dense_cap=settings.dense_cap))

    with timer.stage("eigenvalues"):
        for name, g in graphs.items():
            bounds[name] = cache.get(
                ("bounds",) + keys[name] + (settings.eig_tol, settings.eig_max_iter,
                                            settings.dense_threshold),
                lambda: extreme_eigenvalues(g, settings.eig_tol, settings.eig_max_iter,
                                            dense_threshold=settings.dense_threshold))
            log.info("%s graph spectrum [%.6g, %.6g] (%s)", name, bounds[name].lambda_min,
                     bounds[name].lambda_max, bounds[name].method)

    with timer.stage("filter"):
        for name, g in graphs.items():
            spec = hp.interaction_filter if name == "interaction" else hp.modality_filter(name)
            filtered[name] = cache.get(
                ("filtered",) + keys[name] + (spec.kind, spec.coefficients, settings.eig_tol,
                                              settings.eig_max_iter, settings.dense_threshold),
                lambda: apply_filter(g, bounds[name], spec, materialize=dense,
                                     dense_cap=settings.dense_cap))

    with timer.stage("fuse"):
        w = FusionWeights(hp.beta, hp.gamma)
        args = (filtered["interaction"], filtered.get("txt"), filtered.get("img"), w)
        fused = fuse(*args) if dense else FusedOperator(*args)

    return Model(hp, graphs, bounds, filtered, fused, timer)


def recommend(model: Model, R_train, users: Sequence[int], K_rec: int,
              settings: Settings = Settings()):
    return batch_recommend(R_train, model.fused, users, K_rec, block_size=settings.user_block)


@dataclass
class RunResult:
    report: EvalReport
    recommendations: list
    model: Model
    timer: StageTimer
    total_seconds: float


def run(R_train, target, features: Mapping[str, np.ndarray | None], hp: Hyperparams,
        Ks: Sequence[int] = (10, 20), settings: Settings = Settings(), *,
        users: Sequence[int] | None = None, cache: GraphCache | None = None,
        timer: StageTimer | None = None) -> RunResult:
    """Fit on ``R_train`` and evaluate against ``target`` (validation or test).

    ``users`` restricts scoring to a subset (cold-start evaluation); by
    default every user with a target interaction is scored.
    """
    t0 = time.perf_counter()
    timer = timer or StageTimer()
    model = fit(R_train, features, hp, settings, timer=timer, cache=cache)
    with timer.stage("score"):
        eval_users = users_with_interactions(target)
        if users is not None:
            eval_users = np.intersect1d(eval_users, np.asarray(users, dtype=np.int64))
        recs = recommend(model, R_train, eval_users, max(Ks), settings)
    with timer.stage("evaluate"):
        report = evaluate(recs, target, Ks)
    total = time.perf_counter() - t0
    report.wall_time_seconds = total
    return RunResult(report, recs, model, timer, total)
