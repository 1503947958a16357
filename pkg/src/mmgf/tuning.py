"""Exhaustive hyperparameter search on the validation split."""

from __future__ import annotations

import io
import itertools
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError
from .evaluation import DatasetSplit, EvalReport
from .pipeline import GraphCache, Hyperparams, Settings, run
from .spectral import FilterSpec

# column order doubles as the tie-break order
GRID_AXES = ("alpha", "s", "k_neighbors", "a1", "a2", "a3", "beta", "gamma")
_OBJECTIVE = re.compile(r"^(recall|ndcg)@(\d+)$")


@dataclass(frozen=True)
class GridSpec:
    alpha: tuple[float, ...] = (0.5,)
    s: tuple[float, ...] = (1.0,)
    k_neighbors: tuple[int, ...] = (20,)
    a1: tuple[float, ...] = (-0.7,)
    a2: tuple[float, ...] = (1.1,)
    a3: tuple[float, ...] = (-0.1,)
    beta: tuple[float, ...] = (0.1,)
    gamma: tuple[float, ...] = (0.0,)
    objective: str = "ndcg@20"

    def __post_init__(self):
        for axis in GRID_AXES:
            cast = int if axis == "k_neighbors" else float
            values = tuple(sorted({cast(v) for v in getattr(self, axis)}))
            if not values:
                raise InputError(f"grid axis {axis} is empty")
            object.__setattr__(self, axis, values)
        bad = [a for a in self.alpha if not 0.0 <= a <= 1.0]
        if bad:
            raise InputError(f"grid alpha values outside [0, 1]: {bad}")
        if not _OBJECTIVE.match(self.objective.lower()):
            raise InputError(f"objective must look like 'ndcg@20' or 'recall@10', got {self.objective!r}")
        object.__setattr__(self, "objective", self.objective.lower())

    @property
    def metric(self) -> tuple[str, int]:
        name, k = _OBJECTIVE.match(self.objective).groups()
        return name, int(k)

    @property
    def size(self) -> int:
        return int(np.prod([len(getattr(self, a)) for a in GRID_AXES]))

    def points(self):
        """Grid points as tuples in ``GRID_AXES`` order, lexicographically ascending."""
        return itertools.product(*(getattr(self, a) for a in GRID_AXES))

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str]) -> "GridSpec":
        from .io import parse_list

        kv = dict(kv)
        kwargs = {}
        for axis in GRID_AXES:
            if axis in kv:
                kwargs[axis] = tuple(parse_list(kv.pop(axis), int if axis == "k_neighbors" else float))
        if "objective" in kv:
            kwargs["objective"] = kv.pop("objective")
        if kv:
            raise InputError(f"unknown grid keys: {', '.join(sorted(kv))}")
        return cls(**kwargs)


def hyperparams_at(point: Sequence[float], base: Hyperparams = Hyperparams()) -> Hyperparams:
    p = dict(zip(GRID_AXES, point))
    return replace(base, alpha=p["alpha"], s=p["s"], k_neighbors=int(p["k_neighbors"]),
                   interaction_filter=FilterSpec.polynomial(p["a1"], p["a2"], p["a3"]),
                   beta=p["beta"], gamma=p["gamma"])


def _metric(report: EvalReport, name: str, k: int) -> float:
    table = report.ndcg_at if name == "ndcg" else report.recall_at
    return table[k]


@dataclass
class GridResult:
    best: Hyperparams
    best_point: tuple
    best_score: float
    points: list[tuple] = field(default_factory=list)
    reports: list[EvalReport] = field(default_factory=list)
    Ks: tuple[int, ...] = ()

    def to_tsv(self) -> str:
        buf = io.StringIO()
        cols = list(GRID_AXES)
        cols += [f"recall@{k}" for k in self.Ks] + [f"ndcg@{k}" for k in self.Ks]
        buf.write("\t".join(cols) + "\n")
        for point, rep in zip(self.points, self.reports):
            vals = [f"{v:g}" for v in point]
            vals += [f"{rep.recall_at[k]:.10f}" for k in self.Ks]
            vals += [f"{rep.ndcg_at[k]:.10f}" for k in self.Ks]
            buf.write("\t".join(vals) + "\n")
        return buf.getvalue()


def grid_search(data: DatasetSplit, features: Mapping[str, np.ndarray | None], grid: GridSpec,
                settings: Settings = Settings(), *, Ks: Sequence[int] = (10, 20),
                base: Hyperparams = Hyperparams()) -> GridResult:
    """Evaluate every grid point on the validation split and keep the best.

    Graphs, spectral bounds and filtered graphs are cached by their own
    parameters, so points differing only in filter coefficients or fusion
    weights reuse the graphs of their ``(alpha, s, k)``. Ties go to the
    lexicographically smallest point in ``GRID_AXES`` order.
    """
    name, k_obj = grid.metric
    Ks = tuple(sorted(set(Ks) | {k_obj}))
    cache = GraphCache()
    result = GridResult(base, (), -np.inf, Ks=Ks)
    for point in grid.points():
        hp = hyperparams_at(point, base)
        rep = run(data.train, data.valid, features, hp, Ks, settings, cache=cache).report
        result.points.append(point)
        result.reports.append(rep)
        score = _metric(rep, name, k_obj)
        # points arrive in ascending order, so strict improvement keeps the smallest tie
        if score > result.best_score:
            result.best, result.best_point, result.best_score = hp, point, score
    return result
