"""Dataset files, feature files and ``key = value`` run configurations."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import matrix as mx
from .errors import InputError
from .pipeline import PRESETS, Hyperparams, Settings
from .spectral import DEFAULT_MAX_ITER, DEFAULT_TOL, FilterSpec

FEATURE_MAGIC = b"MMGF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sBQQ")


# --------------------------------------------------------------------------
# interactions
# --------------------------------------------------------------------------

def write_interactions(path, R) -> None:
    """``#users=<U>\\titems=<I>`` header, then one ``user\\titem`` line per interaction."""
    R = mx.canonical(R)
    coo = R.tocoo()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#users={R.shape[0]}\titems={R.shape[1]}\n")
        for u, i in zip(coo.row, coo.col):
            fh.write(f"{u}\t{i}\n")


def _parse_header(line: str, path) -> tuple[int, int]:
    parts = line.lstrip("#").strip().split("\t")
    kv = {}
    for part in parts:
        key, sep, value = part.partition("=")
        if not sep:
            break
        kv[key.strip()] = value.strip()
    try:
        return int(kv["users"]), int(kv["items"])
    except (KeyError, ValueError):
        raise InputError(f"{path}: first line must be '#users=<U>\\titems=<I>', got {line.strip()!r}") from None


def read_interactions(path) -> sp.csr_matrix:
    """Binary rating matrix from an interaction file; duplicates and bad indices are errors."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"interaction file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        n_users, n_items = _parse_header(header, path)
        rows, cols = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'user<TAB>item', got {line.strip()!r}")
            try:
                u, i = int(parts[0]), int(parts[1])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-integer index in {line.strip()!r}") from None
            if not (0 <= u < n_users and 0 <= i < n_items):
                raise InputError(f"{path}:{lineno}: ({u}, {i}) outside {n_users} x {n_items}")
            rows.append(u)
            cols.append(i)
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    try:
        return mx._from_arrays(r, c, np.ones(r.size), n_users, n_items)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------

def write_features(path, X) -> None:
    """Binary feature file: magic, version byte, u64 rows, u64 cols, float32 row-major (all LE)."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise InputError(f"feature matrix must be 2-D, got shape {X.shape}")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Feature matrix as float64 from a binary ``MMGF`` file or a tab-separated text file."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"feature file {path} does not exist")
    with open(path, "rb") as fh:
        head = fh.read(_FEATURE_HEADER.size)
        if head[:4] != FEATURE_MAGIC:
            return _read_features_tsv(path)
        if len(head) < _FEATURE_HEADER.size:
            raise InputError(f"{path}: truncated feature header")
        _, version, rows, cols = _FEATURE_HEADER.unpack(head)
        if version != FEATURE_VERSION:
            raise InputError(f"{path}: unsupported feature file version {version}")
        data = fh.read()
    if len(data) != rows * cols * 4:
        raise InputError(f"{path}: expected {rows * cols * 4} payload bytes for {rows} x {cols}, "
                         f"found {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float64)


def _read_features_tsv(path) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter="\t", comments="#", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: not a binary feature file and not valid TSV ({exc})") from None
    return X


# --------------------------------------------------------------------------
# key = value files
# --------------------------------------------------------------------------

def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; later keys override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key.strip().lower()] = value.strip()
    return out


def parse_list(value: str, cast=float) -> list:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise InputError(f"empty list {value!r}")
    try:
        return [cast(v) for v in items]
    except ValueError:
        raise InputError(f"cannot parse {value!r} as a list of {cast.__name__}") from None


def parse_filter(value: str) -> FilterSpec:
    """``linear`` or comma-separated polynomial coefficients ``a_1, ..., a_K``."""
    if value.strip().lower() in ("linear", "linear_lpf", "lpf"):
        return FilterSpec.linear()
    return FilterSpec.polynomial(*parse_list(value))


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InputError(f"expected a boolean, got {value!r}")


# items above which the pipeline keeps filtered graphs as sparse operators
AUTO_DENSE_ITEMS = 8192


@dataclass
class RunConfig:
    """Everything a command needs: data paths, hyperparameters and numerical settings."""

    interactions: Path | None = None
    features: dict[str, Path] = field(default_factory=dict)
    hp: Hyperparams = field(default_factory=Hyperparams)
    k_rec: tuple[int, ...] = (10, 20)
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dense_cap: int = mx.DEFAULT_DENSE_CAP
    eig_tol: float = DEFAULT_TOL
    eig_max_iter: int = DEFAULT_MAX_ITER
    materialize: str = "auto"
    threads: int | None = None
    bins: int = 50

    def settings(self, n_items: int) -> Settings:
        if self.materialize == "auto":
            dense = n_items <= AUTO_DENSE_ITEMS
        else:
            dense = _bool(self.materialize)
        return Settings(materialize=dense, dense_cap=self.dense_cap, eig_tol=self.eig_tol,
                        eig_max_iter=self.eig_max_iter)

    def check_files(self) -> None:
        """Fail before any compute if a needed file is missing."""
        if self.interactions is None:
            raise InputError("config does not name an interactions file")
        if not self.interactions.is_file():
            raise InputError(f"interaction file {self.interactions} does not exist")
        for m in ("txt", "img"):
            w = self.hp.weight(m)
            path = self.features.get(m)
            if w != 0 and path is None:
                raise InputError(f"{m} weight is {w:g} but the config names no {m}_features file")
            if w != 0 and not path.is_file():
                raise InputError(f"{m} feature file {path} does not exist")

    def load_features(self) -> dict[str, np.ndarray | None]:
        return {m: read_features(self.features[m]) if self.hp.weight(m) != 0 else None
                for m in ("txt", "img")}


_HP_FLOATS = ("alpha", "s", "beta", "gamma")


def config_from_mapping(kv: Mapping[str, str], base_dir: Path | None = None) -> RunConfig:
    kv = dict(kv)
    base_dir = base_dir or Path.cwd()

    def path(v):
        p = Path(os.path.expanduser(v))
        return p if p.is_absolute() else base_dir / p

    try:
        preset = kv.pop("preset", None)
        hp = Hyperparams.preset(preset) if preset else Hyperparams()
        updates = {}
        for key in _HP_FLOATS:
            if key in kv:
                updates[key] = float(kv.pop(key))
        if "k_neighbors" in kv:
            updates["k_neighbors"] = int(kv.pop("k_neighbors"))
        if "filter" in kv:
            updates["interaction_filter"] = parse_filter(kv.pop("filter"))
        for m in ("txt", "img"):
            if f"{m}_filter" in kv:
                updates[f"{m}_filter"] = parse_filter(kv.pop(f"{m}_filter"))
            if f"{m}_alpha_s" in kv:
                a, s = parse_list(kv.pop(f"{m}_alpha_s"))
                updates[f"{m}_alpha_s"] = (a, s)
        hp = Hyperparams(**{**{f.name: getattr(hp, f.name) for f in fields(hp)}, **updates})

        cfg = RunConfig(hp=hp)
        if "interactions" in kv:
            cfg.interactions = path(kv.pop("interactions"))
        for m in ("txt", "img"):
            if f"{m}_features" in kv:
                cfg.features[m] = path(kv.pop(f"{m}_features"))
        if "k_rec" in kv:
            cfg.k_rec = tuple(parse_list(kv.pop("k_rec"), int))
        if "seed" in kv:
            cfg.seed = int(kv.pop("seed"))
        if "split" in kv:
            cfg.split = tuple(parse_list(kv.pop("split")))
        if "dense_cap" in kv:
            cfg.dense_cap = int(kv.pop("dense_cap"))
        if "eig_tol" in kv:
            cfg.eig_tol = float(kv.pop("eig_tol"))
        if "eig_max_iter" in kv:
            cfg.eig_max_iter = int(kv.pop("eig_max_iter"))
        if "materialize" in kv:
            cfg.materialize = kv.pop("materialize").lower()
            if cfg.materialize != "auto":
                _bool(cfg.materialize)
        if "threads" in kv:
            cfg.threads = int(kv.pop("threads"))
        if "bins" in kv:
            cfg.bins = int(kv.pop("bins"))
    except ValueError as exc:
        raise InputError(f"bad config value: {exc}") from None
    if kv:
        raise InputError(f"unknown config keys: {', '.join(sorted(kv))}")
    if len(cfg.split) != 3:
        raise InputError(f"split needs three ratios, got {cfg.split}")
    if not cfg.k_rec or min(cfg.k_rec) < 1:
        raise InputError(f"k_rec must be positive, got {cfg.k_rec}")
    return cfg


def read_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file {path} does not exist")
    kv = parse_key_values(path.read_text(encoding="utf-8"), str(path))
    return config_from_mapping(kv, path.parent)


def write_config(path, cfg: RunConfig) -> None:
    """Serialize a config so that :func:`read_config` reproduces it."""
    hp = cfg.hp
    lines = []
    if cfg.interactions is not None:
        lines.append(f"interactions = {cfg.interactions}")
    for m, p in sorted(cfg.features.items()):
        lines.append(f"{m}_features = {p}")
    lines += [
        f"alpha = {hp.alpha!r}",
        f"s = {hp.s!r}",
        f"k_neighbors = {hp.k_neighbors}",
        f"filter = {_filter_str(hp.interaction_filter)}",
        f"txt_filter = {_filter_str(hp.txt_filter)}",
        f"img_filter = {_filter_str(hp.img_filter)}",
        f"beta = {hp.beta!r}",
        f"gamma = {hp.gamma!r}",
    ]
    for m in ("txt", "img"):
        override = hp.txt_alpha_s if m == "txt" else hp.img_alpha_s
        if override is not None:
            lines.append(f"{m}_alpha_s = {override[0]!r}, {override[1]!r}")
    lines += [
        f"k_rec = {', '.join(str(k) for k in cfg.k_rec)}",
        f"seed = {cfg.seed}",
        f"split = {', '.join(repr(r) for r in cfg.split)}",
        f"dense_cap = {cfg.dense_cap}",
        f"eig_tol = {cfg.eig_tol!r}",
        f"eig_max_iter = {cfg.eig_max_iter}",
        f"materialize = {cfg.materialize}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _filter_str(spec: FilterSpec) -> str:
    if spec.kind == "linear_lpf":
        return "linear"
    return ", ".join(repr(a) for a in spec.coefficients)


__all__ = ["PRESETS", "RunConfig", "read_config", "write_config", "config_from_mapping",
           "read_interactions", "write_interactions", "read_features", "write_features",
           "parse_key_values", "parse_list", "parse_filter"]
