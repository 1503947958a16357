"""Command-line entry point: ``mmgf {run,spectrum,synth,tune,coldstart,noise}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import ExitStack
from pathlib import Path

from . import io as mio
from . import matrix as mx
from .errors import InputError, MMGFError
from .evaluation import (NoiseLevel, cold_start_users, generate_synthetic, inject_noise,
                         split_dataset)
from .fusion import recommendations_tsv
from .graphs import build_interaction_graph, knn_graph, modality_graph_from_knn
from .pipeline import StageTimer, run
from .spectral import spectrum_histogram
from .tuning import GridSpec, grid_search

log = logging.getLogger("mmgf")

SYNTH_SIZES = ((10_000, 5_000, 5_000), (20_000, 10_000, 20_000),
               (40_000, 20_000, 80_000), (60_000, 30_000, 180_000))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _config(args) -> mio.RunConfig:
    if args.config is None:
        raise InputError("this command needs --config")
    cfg = mio.read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    elif cfg.threads is not None:
        args.stack.enter_context(mx.thread_limit(cfg.threads))
    return cfg


def _prepare(cfg: mio.RunConfig, timer: StageTimer):
    """Validate files, then load and split the data."""
    cfg.check_files()
    with timer.stage("load"):
        R = mio.read_interactions(cfg.interactions)
        features = cfg.load_features()
    with timer.stage("split"):
        split = split_dataset(R, cfg.split, cfg.seed)
    return split, features


def _evaluate(args, cfg, timer, t0, *, features_hook=None, users_hook=None, tag=""):
    split, features = _prepare(cfg, timer)
    if features_hook is not None:
        with timer.stage("noise"):
            features = features_hook(features)
    users = users_hook(split.train) if users_hook is not None else None
    settings = cfg.settings(split.train.shape[1])
    res = run(split.train, split.test, features, cfg.hp, cfg.k_rec, settings,
              users=users, timer=timer)
    out = Path(args.out)
    with timer.stage("write"):
        _write(out / f"metrics{tag}.tsv", res.report.to_tsv())
        _write(out / f"recommendations{tag}.tsv", recommendations_tsv(res.recommendations))
    total = time.perf_counter() - t0
    _write(out / f"timing{tag}.tsv", timer.to_tsv(total))
    print(res.report.to_tsv(), end="")
    print(timer.to_tsv(total), end="")
    return res


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    timer = args.timer
    cfg = _config(args)
    _evaluate(args, cfg, timer, t0)
    return 0


def cmd_coldstart(args) -> int:
    t0 = time.perf_counter()
    timer = args.timer
    cfg = _config(args)
    res = _evaluate(args, cfg, timer, t0, tag="_coldstart",
                    users_hook=lambda R: cold_start_users(R, args.threshold))
    log.info("cold-start evaluation over %d users", res.report.n_users_evaluated)
    return 0


def cmd_noise(args) -> int:
    t0 = time.perf_counter()
    timer = args.timer
    level = NoiseLevel(args.level)
    cfg = _config(args)

    def hook(features):
        return {m: None if X is None else inject_noise(X, level, cfg.seed, per_dimension=not args.global_std)
                for m, X in features.items()}

    _evaluate(args, cfg, timer, t0, features_hook=hook, tag=f"_noise{level.level}")
    return 0


def cmd_spectrum(args) -> int:
    cfg = _config(args)
    hp = cfg.hp
    split, _ = _prepare(cfg, args.timer)
    if args.graph == "interaction":
        g = build_interaction_graph(split.train, hp.alpha, hp.s, dense=False, allow_isolated=True)
    else:
        path = cfg.features.get(args.graph)
        if path is None:
            raise InputError(f"config names no {args.graph}_features file")
        X = mio.read_features(path)
        a, s = hp.modality_alpha_s(args.graph)
        g = modality_graph_from_knn(knn_graph(X, hp.k_neighbors), a, s, args.graph, dense=False)
    hist = spectrum_histogram(g, args.bins or cfg.bins)
    text = hist.to_tsv()
    _write(Path(args.out) / f"spectrum_{args.graph}.tsv", text)
    print(text, end="")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    if args.size is not None:
        if not 1 <= args.size <= len(SYNTH_SIZES):
            raise InputError(f"--size must be 1..{len(SYNTH_SIZES)}")
        users, items, inter = SYNTH_SIZES[args.size - 1]
    else:
        users, items, inter = args.users, args.items, args.interactions
    R, X_txt, X_img = generate_synthetic(users, items, inter, args.d_txt, args.d_img, seed,
                                         affinity=args.affinity)
    out.mkdir(parents=True, exist_ok=True)
    mio.write_interactions(out / "interactions.tsv", R)
    mio.write_features(out / "txt.mmgf", X_txt)
    mio.write_features(out / "img.mmgf", X_img)
    cfg = mio.RunConfig(interactions=Path("interactions.tsv"),
                        features={"txt": Path("txt.mmgf"), "img": Path("img.mmgf")}, seed=seed)
    mio.write_config(out / "config.cfg", cfg)
    sparsity = 1.0 - R.nnz / (users * items)
    print(f"users\t{users}\nitems\t{items}\ninteractions\t{R.nnz}\nsparsity\t{sparsity:.6f}")
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    grid_path = Path(args.grid)
    if not grid_path.is_file():
        raise InputError(f"grid file {grid_path} does not exist")
    grid = GridSpec.from_mapping(mio.parse_key_values(grid_path.read_text(encoding="utf-8"),
                                                      str(grid_path)))
    # modality features are needed whenever some grid point weights them
    need = {"txt": max(grid.beta) > 0, "img": max(grid.gamma) > 0}
    if cfg.interactions is None or not cfg.interactions.is_file():
        raise InputError(f"interaction file {cfg.interactions} does not exist")
    for m, needed in need.items():
        if needed and (cfg.features.get(m) is None or not cfg.features[m].is_file()):
            raise InputError(f"grid uses {m} weights > 0 but {m}_features is missing")
    R = mio.read_interactions(cfg.interactions)
    features = {m: mio.read_features(cfg.features[m]) if need[m] else None for m in need}
    split = split_dataset(R, cfg.split, cfg.seed)
    res = grid_search(split, features, grid, cfg.settings(R.shape[1]), Ks=cfg.k_rec, base=cfg.hp)
    out = Path(args.out)
    _write(out / "grid.tsv", res.to_tsv())
    best = mio.RunConfig(**{**cfg.__dict__, "hp": res.best})
    mio.write_config(out / "best.cfg", best)
    print(res.to_tsv(), end="")
    print(f"best\t{grid.objective}\t{res.best_score:.10f}")
    return 0


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommand copies use SUPPRESS so they never clobber flags given before the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", type=Path, default=d(None), help="key = value run configuration")
    parser.add_argument("--seed", type=int, default=d(None), help="random seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=d(None),
                        help="BLAS thread count (default: all cores)")
    parser.add_argument("--out", default=d("out"), help="output directory (default: out)")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    parser = argparse.ArgumentParser(prog="mmgf",
                                     description="Training-free multimodal graph-filtering recommender.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="fit, recommend and evaluate on the test split")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("spectrum", parents=[common], help="eigenvalue histogram of one item graph")
    p.add_argument("--graph", choices=("interaction", "txt", "img"), default="interaction")
    p.add_argument("--bins", type=int, default=None)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--size", type=int, help="preset size 1..4 (10k/5k/5k up to 60k/30k/180k)")
    p.add_argument("--users", type=int, default=10_000)
    p.add_argument("--items", type=int, default=5_000)
    p.add_argument("--interactions", type=int, default=5_000)
    p.add_argument("--d-txt", type=int, default=384)
    p.add_argument("--d-img", type=int, default=4096)
    p.add_argument("--affinity", type=float, default=0.8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tune", parents=[common], help="grid search on the validation split")
    p.add_argument("--grid", required=True, help="key = value file of comma-separated axis values")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("coldstart", parents=[common], help="evaluate only users with few training items")
    p.add_argument("--threshold", type=int, default=5)
    p.set_defaults(func=cmd_coldstart)

    p = sub.add_parser("noise", parents=[common], help="evaluate with Gaussian noise added to features")
    p.add_argument("--level", type=int, required=True, help="noise level 0..5")
    p.add_argument("--global-std", action="store_true",
                   help="scale noise by one whole-matrix std instead of per dimension")
    p.set_defaults(func=cmd_noise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.timer = StageTimer()
    try:
        with ExitStack() as stack:
            args.stack = stack
            stack.enter_context(mx.thread_limit(args.threads))
            return args.func(args)
    except MMGFError as exc:
        where = f" (stage {args.timer.failed})" if args.timer.failed else ""
        print(f"mmgf {args.command}{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
