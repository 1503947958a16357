"""Acceptance suite for the MM-GF recommender.

Every criterion is one test that prints a single ``PASS``/``FAIL`` (or
``SKIP``) line with the measured quantity next to its threshold, then
asserts.  Run on its own with::

    python3 -m pytest tests/test_acceptance.py -v -s

The scalability criterion builds four synthetic datasets up to 30k items
with 4096-d image features and takes several minutes on one core.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from mmgf.evaluation import (cold_start_users, evaluate, generate_synthetic, inject_noise,
                             split_dataset, users_with_interactions)
from mmgf.fusion import RecommendationList, recommend_topk, score_user
from mmgf.graphs import build_interaction_graph
from mmgf.pipeline import Hyperparams, Settings, StageTimer, fit, recommend, run
from mmgf.spectral import (FilterSpec, apply_polynomial_filter, extreme_eigenvalues,
                           filter_response)

from conftest import TOY_R

BABY_ENV = "MMGF_BABY_DIR"


@pytest.fixture
def report(capsys):
    """Print one verdict line past pytest's capture, then assert it."""
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail
    return emit


def random_symmetric(rng, n, lo, hi):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(lo, hi, n)
    lam[:2] = lo, hi
    A = (Q * lam) @ Q.T
    return (A + A.T) / 2


def random_binary(rng, n_users, n_items, density):
    R = (rng.random((n_users, n_items)) < density).astype(float)
    R[np.arange(n_users), rng.integers(0, n_items, n_users)] = 1
    R[rng.integers(0, n_users, n_items), np.arange(n_items)] = 1
    return sp.csr_matrix(R)


def monomial(k):
    return FilterSpec.polynomial(*([0.0] * (k - 1) + [1.0]))


def test_criterion_1_shifted_spectrum_bounds(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_shift = worst_resp = 0.0
    monotone = True
    # spectral regimes: narrow near-PSD, wide positive, straddling zero
    regimes = [(-0.05, 1.0), (0.0, 80.0), (-2.0, 80.0), (-2.0, 5.0)]
    for trial in range(100):
        n = int(rng.integers(5, 201))
        lo, hi = regimes[trial % len(regimes)]
        P = random_symmetric(rng, n, lo, hi)
        b = extreme_eigenvalues(P)
        lstar = b.lambda_star
        mu = np.linalg.eigvalsh(P - b.lambda_min * np.eye(n))
        worst_shift = max(worst_shift, -mu.min(), mu.max() - lstar)
        freq = np.sort(np.clip(b.lambda_max - np.linalg.eigvalsh(P), 0.0, lstar))
        for k in (1, 2, 3):
            h = filter_response(monomial(k), b, freq)
            worst_resp = max(worst_resp, -h.min(), h.max() - lstar)
            monotone &= bool(np.all(np.diff(h) <= 1e-12 * lstar))
            ev = np.linalg.eigvalsh(apply_polynomial_filter(P, b, monomial(k)).adjacency)
            worst_resp = max(worst_resp, -ev.min(), ev.max() - lstar)
    elapsed = time.perf_counter() - t0
    ok = worst_shift <= 1e-8 and worst_resp <= 1e-8 and monotone and elapsed < 30
    report(1, ok, f"max excursion outside [0, lambda*]: shifted {worst_shift:.2e}, "
                  f"monomials {worst_resp:.2e} (<= 1e-8); monotone={monotone}; "
                  f"{elapsed:.1f} s (< 30 s)")


def test_criterion_2_spectral_calculus_oracle(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 101))
        P = random_symmetric(rng, n, rng.uniform(-2, 0), rng.uniform(0.5, 80))
        K = int(rng.integers(1, 6))
        spec = FilterSpec.polynomial(*rng.uniform(-2, 2, K))
        b = extreme_eigenvalues(P)
        lam, U = np.linalg.eigh(P)
        mu = lam - b.lambda_min
        h = sum(a * mu ** k / b.lambda_star ** (k - 1) for k, a in enumerate(spec.coefficients, 1))
        oracle = (U * h) @ U.T
        got = apply_polynomial_filter(P, b, spec).adjacency
        worst = max(worst, np.linalg.norm(got - oracle) / max(np.linalg.norm(oracle), 1e-300))
    report(2, worst <= 1e-6, f"max Frobenius-relative error {worst:.2e} over 50 pairs (<= 1e-6)")


def test_criterion_3_normalized_interaction_spectrum(report):
    rng = np.random.default_rng(303)
    lo, hi = np.inf, -np.inf
    for _ in range(20):
        R = random_binary(rng, int(rng.integers(5, 60)), int(rng.integers(3, 40)), rng.uniform(0.05, 0.5))
        ev = np.linalg.eigvalsh(build_interaction_graph(R, 0.5, 1.0).to_dense())
        lo, hi = min(lo, ev.min()), max(hi, ev.max())
    inside = lo >= -1e-8 and hi <= 1 + 1e-8

    exits = 0
    for _ in range(20):
        R = random_binary(rng, int(rng.integers(5, 60)), int(rng.integers(3, 40)), rng.uniform(0.05, 0.5))
        ev = np.linalg.eigvalsh(build_interaction_graph(R, 0.7, 0.6).to_dense())
        exits += bool(ev.min() < -1e-8 or ev.max() > 1 + 1e-8)
    report(3, inside and exits >= 1,
           f"alpha=0.5,s=1 eigenvalues in [{lo:.3e}, {hi:.12f}] (within [-1e-8, 1+1e-8]); "
           f"alpha=0.7,s=0.6 leaves [0, 1] for {exits}/20 matrices (>= 1)")


def brute_metrics(lists, truth, Ks):
    out = {}
    for k in Ks:
        rec, ndcg, n = 0.0, 0.0, 0
        for user, items in lists:
            t = truth[user]
            if not t:
                continue
            n += 1
            hits = [1 if i in t else 0 for i in items[:k]]
            rec += sum(hits) / len(t)
            dcg = sum(h / math.log2(r + 1) for r, h in enumerate(hits, start=1))
            idcg = sum(1 / math.log2(r + 1) for r in range(1, min(k, len(t)) + 1))
            ndcg += dcg / idcg
        out[k] = (rec / n, ndcg / n) if n else (0.0, 0.0)
    return out


def test_criterion_4_metric_oracle(report):
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(200):
        n_users, n_items = int(rng.integers(1, 21)), int(rng.integers(2, 16))
        truth = {u: set(rng.choice(n_items, int(rng.integers(0, n_items + 1)), replace=False).tolist())
                 for u in range(n_users)}
        lists = [(u, rng.permutation(n_items)[:int(rng.integers(1, n_items + 1))].tolist())
                 for u in range(n_users)]
        cells = [(u, i) for u, t in truth.items() for i in t]
        T = sp.csr_matrix((np.ones(len(cells)), ([c[0] for c in cells], [c[1] for c in cells])),
                          shape=(n_users, n_items))
        recs = [RecommendationList(u, tuple(items), tuple(-float(r) for r in range(len(items))))
                for u, items in lists]
        Ks = sorted(set(rng.integers(1, 12, 3).tolist()))
        rep = evaluate(recs, T, Ks)
        ref = brute_metrics(lists, truth, Ks)
        for k in Ks:
            worst = max(worst, abs(rep.recall_at[k] - ref[k][0]), abs(rep.ndcg_at[k] - ref[k][1]))

    T = sp.csr_matrix(np.array([[1.0, 1.0, 0.0]]))
    hand = evaluate([recommend_topk([3.0, 1.0, 2.0], [], 2, user=0)], T, [2])
    r2, n2 = round(hand.recall_at[2], 4), round(hand.ndcg_at[2], 4)
    ok = worst == 0.0 and r2 == 0.5 and n2 == 0.6131
    report(4, ok, f"max |evaluate - brute force| {worst:.1e} over 200 instances "
                  f"(must be exactly 0); hand example Recall@2={r2}, NDCG@2={n2}")


def test_criterion_5_pipeline_equivalence(report):
    R = sp.csr_matrix(TOY_R)
    rng = np.random.default_rng(5)
    feats = {"txt": rng.standard_normal((4, 3)), "img": rng.standard_normal((4, 5))}
    identical = True
    for hp in (Hyperparams.preset("sports", k_neighbors=2), Hyperparams.preset("baby", k_neighbors=3)):
        model = fit(R, feats, hp)
        batch = recommend(model, R, range(5), 3, Settings(user_block=2))
        for u, rec in enumerate(batch):
            ref = recommend_topk(score_user(R[u], model.fused), R[u].indices, 3, user=u)
            identical &= rec.items == ref.items and rec.scores == ref.scores

    hp0 = Hyperparams.preset("sports", beta=0.0, gamma=0.0)
    target = sp.csr_matrix(1.0 - TOY_R)
    base = run(R, target, feats, hp0, (1, 2))
    invariant = True
    perturbations = [
        {"txt": rng.standard_normal((4, 3)) * 1e6, "img": rng.standard_normal((4, 5))},
        {"txt": np.zeros((4, 3)), "img": np.full((4, 5), np.nan)},
        {"txt": None, "img": None},
    ]
    for other in perturbations:
        alt = run(R, target, other, hp0, (1, 2))
        invariant &= alt.recommendations == base.recommendations
        invariant &= alt.report.to_tsv() == base.report.to_tsv()
    report(5, identical and invariant,
           f"batch == per-user bitwise: {identical}; beta=gamma=0 invariant to "
           f"{len(perturbations)} feature perturbations: {invariant}")


SCALE_SIZES = [(10000, 5000, 5000), (20000, 10000, 20000), (40000, 20000, 80000),
               (60000, 30000, 180000)]


def timed_pipeline(size, materialize):
    U, I, N = size
    R, Xt, Xi = generate_synthetic(U, I, N, 384, 4096, seed=0)
    timer = StageTimer()
    t0 = time.perf_counter()
    settings = Settings(materialize=materialize)
    model = fit(R, {"txt": Xt, "img": Xi}, Hyperparams.preset("sports", k_neighbors=20), settings,
                timer=timer)
    with timer.stage("score"):
        recs = recommend(model, R, users_with_interactions(R), 20, settings)
    assert len(recs) == users_with_interactions(R).size
    return timer.stages, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_scalability(report, capsys):
    # smallest size with the default storage choice (dense below 8192 items)
    stages, total = timed_pipeline(SCALE_SIZES[0], True)
    with capsys.disabled():
        print("\nstage timings, 10k users / 5k items / 5k interactions, d=384/4096 (dense):")
        print("  " + "  ".join(f"{k}={v:.2f}s" for k, v in stages.items()) + f"  total={total:.1f}s")

    # growth across the four sizes, lazy operator mode so every size fits in memory
    rows = []
    for size in SCALE_SIZES:
        st, tot = timed_pipeline(size, False)
        rows.append((size, st, tot))
        with capsys.disabled():
            print(f"  {size[0]}x{size[1]}, {size[2]} interactions (operator): "
                  + "  ".join(f"{k}={v:.2f}s" for k, v in st.items()) + f"  total={tot:.1f}s")
    # stages doing real work; lazy filter/fuse are O(1) bookkeeping and excluded
    work = [k for k in rows[0][1] if rows[0][1][k] >= 0.05]
    series = {k: [r[1][k] for r in rows] for k in work}
    series["total"] = [r[2] for r in rows]
    monotone = all(all(a < b for a, b in zip(v, v[1:])) for v in series.values())
    ok = total < 300 and monotone
    report(6, ok, f"size 1 total {total:.1f} s (< 300 s); monotone growth over "
                  f"{sorted(series)}: {monotone}")


def _baby_dir():
    path = os.environ.get(BABY_ENV)
    return Path(path) if path else None


def test_criterion_7_full_scale_baby(report, capsys):
    root = _baby_dir()
    if root is None or not (root / "config.cfg").exists():
        with capsys.disabled():
            print(f"\nSKIP criterion 7: set {BABY_ENV} to a directory holding config.cfg, "
                  "interactions.tsv and the 384/4096-d feature files")
        pytest.skip("Amazon Baby dataset not supplied")
    from mmgf.io import read_config, read_interactions
    from mmgf.tuning import GridSpec, grid_search

    cfg = read_config(root / "config.cfg")
    R = read_interactions(cfg.interactions)
    feats = cfg.load_features()
    split = split_dataset(R, cfg.split, seed=cfg.seed)
    settings = cfg.settings(R.shape[1])
    base = Hyperparams.preset("baby")
    grid = GridSpec(alpha=(0.3, 0.4, 0.5, 0.6, 0.7), s=(0.8, 0.9, 1.0, 1.1, 1.2),
                    k_neighbors=(20,), a1=(-0.7,), a2=(1.1,), a3=(-0.1,), beta=(0.1,), gamma=(0.0,),
                    objective="ndcg@20")
    best = grid_search(split, feats, grid, settings, Ks=(20,), base=base).best
    ndcg = run(split.train + split.valid, split.test, feats, best, (20,), settings).report.ndcg_at[20]
    report(7, ndcg >= 0.050, f"Baby NDCG@20 {ndcg:.4f} (>= 0.050) at alpha={best.alpha}, s={best.s}")


def test_criterion_8_noise_monotonicity(report):
    level0, level5 = [], []
    hp = Hyperparams.preset("sports", k_neighbors=10)
    for seed in range(5):
        R, Xt, Xi = generate_synthetic(500, 200, 6000, 64, 128, seed=seed)
        split = split_dataset(R, seed=seed)
        for level, out in ((0, level0), (5, level5)):
            feats = {"txt": inject_noise(Xt, level, seed), "img": inject_noise(Xi, level, seed)}
            out.append(run(split.train, split.test, feats, hp, (20,)).report.ndcg_at[20])
    m0, m5 = np.mean(level0), np.mean(level5)
    se = math.sqrt(np.var(level0, ddof=1) / 5 + np.var(level5, ddof=1) / 5)
    ok = m5 <= m0 + se
    report(8, ok, f"mean NDCG@20 level 5 {m5:.4f} vs level 0 {m0:.4f} "
                  f"(fails only if level 5 exceeds level 0 by more than pooled SE {se:.4f})")


def test_criterion_9_cold_start(report):
    # degrees 1..8 around the inclusive threshold of 5
    rows = [[1] * d + [0] * (10 - d) for d in range(1, 9)]
    boundary = cold_start_users(sp.csr_matrix(np.array(rows, dtype=float))).tolist()
    boundary_ok = boundary == [0, 1, 2, 3, 4]

    R, Xt, Xi = generate_synthetic(400, 150, 3500, 16, 16, seed=9)
    split = split_dataset(R, seed=9)
    feats = {"txt": Xt, "img": Xi}
    hp = Hyperparams.preset("clothing", k_neighbors=10)
    cold = cold_start_users(split.train)
    deg = np.diff(split.train.indptr)
    subset_ok = bool(np.all(deg[cold] <= 5)) and bool(np.all(np.delete(deg, cold) > 5))

    full = run(split.train, split.test, feats, hp, (10, 20))
    restricted = run(split.train, split.test, feats, hp, (10, 20), users=cold)
    cold_set = set(cold.tolist())
    tested = [r for r in full.recommendations if r.user in cold_set]
    ref = evaluate(tested, split.test, (10, 20))
    averaging_ok = (restricted.report.n_users_evaluated == len(tested) > 0
                    and restricted.report.ndcg_at == ref.ndcg_at
                    and restricted.report.recall_at == ref.recall_at
                    and {r.user for r in restricted.recommendations} <= cold_set)
    report(9, boundary_ok and subset_ok and averaging_ok,
           f"boundary cold users {boundary} (expect [0..4]); {len(tested)} cold users evaluated; "
           f"restricted average equals cold-subset average: {averaging_ok}")
