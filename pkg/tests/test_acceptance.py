"""Acceptance criteria 1-8, one test each. Each prints a PASS/FAIL line."""

import itertools
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

import oracles
from conftest import record_criterion
from leakhound import pipeline as pl
from leakhound.config import PipelineConfig, with_overrides
from leakhound.explain import (Explanation, LimeConfig, lime_explain, select_h2, select_h3)
from leakhound.features import (EmptyVocabulary, FeatureConfig, FeatureMatrix, Vocabulary, apply_heuristic1,
                                build_matrix, heuristic1_scores, tfidf_scores)
from leakhound.models import TrainConfig, bce_loss, nn_gradients, rmsprop_step
from leakhound.models.tree import ccp_path, dt_fit
from leakhound.pii import SyntheticSpec, generate_synthetic_corpus


def check(number, passed, detail):
    record_criterion(number, bool(passed), detail)
    assert passed, detail


def test_criterion_1_feature_extraction_oracle():
    started = time.perf_counter()
    failures, worst, empty = [], 0.0, 0
    for case in range(50):
        rng = np.random.default_rng(1000 + case)
        n = int(rng.integers(5, 101))
        _, truth = generate_synthetic_corpus(SyntheticSpec(n, float(rng.uniform(0.1, 0.6)), seed=case))
        freq_t, pct = int(rng.integers(1, 5)), float(rng.choice([50.0, 75.0, 90.0]))
        cfg = FeatureConfig(freq_t=freq_t, tfidf_percentile=pct, seed=case)
        kept, rows, _, scores = oracles.algorithm1(truth, freq_t, None, pct, cfg.stop_words, 1, case)
        try:
            m = build_matrix(truth, cfg)
        except EmptyVocabulary:
            empty += 1
            if kept:
                failures.append(case)
            continue
        expected = np.array([[int(t in r) for t in kept] for r in rows], dtype=np.uint8)
        if list(m.vocabulary.tokens) != kept or not np.array_equal(m.values, expected):
            failures.append(case)
            continue
        ref = np.array([scores[t] for t in kept])
        brute = oracles.tfidf_bruteforce([set(r) for r in rows], kept)
        worst = max(worst, float(np.abs(np.asarray(m.vocabulary.tfidf) - ref).max()),
                    float(np.abs(tfidf_scores(m) - brute).max()))
    elapsed = time.perf_counter() - started
    check(1, not failures and worst <= 1e-12 and elapsed < 30,
          f"50 corpora, mismatches={failures}, max tf-idf error={worst:.2e}, "
          f"empty-vocabulary agreements={empty}, {elapsed:.1f}s (< 30s)")


def _h1_case(rng):
    n, d = int(rng.integers(1, 40)), int(rng.integers(1, 8))
    values = (rng.random((n, d)) < rng.uniform(0.05, 0.9)).astype(np.uint8)
    labels = (rng.random(n) < rng.uniform(0.0, 1.0)).astype(np.uint8)
    vocab = Vocabulary(tuple(f"t{j}" for j in range(d)), tuple(int(c) for c in values.sum(0)), (0.0,) * d, n)
    return FeatureMatrix(tuple(map(str, range(n))), vocab, values, labels)


def test_criterion_2_heuristic1_exactness():
    rng = np.random.default_rng(2)
    exact, monotone, cases = True, True, 0
    thresholds = [k / 10 for k in range(11)]
    while cases < 1000:
        m = _h1_case(rng)
        got = {s.key: s for s in heuristic1_scores(m)}
        for j, (kp, ka, p) in enumerate(oracles.heuristic1_bruteforce(m.values.tolist(), m.labels.tolist())):
            cases += 1
            s = got.get(f"t{j}")
            if ka == 0:
                exact &= s is None
            else:
                exact &= s is not None and Fraction(s.k_pii, s.k_all) == p and s.p == float(p)
        kept = []
        for t in thresholds:
            try:
                kept.append(set(apply_heuristic1(m, t).vocabulary.tokens))
            except EmptyVocabulary:
                kept.append(set())
        monotone &= all(b <= a for a, b in zip(kept, kept[1:]))
    check(2, exact and monotone, f"{cases} token cases exact={exact}, monotone over 0..1 step 0.1={monotone}")


def _datasets():
    """Binary datasets with d <= 3 features and 1..8 rows."""
    for d in (1, 2, 3):
        types = [(tuple(x), y) for x in oracles.binary_rows(d) for y in (0, 1)]
        if d < 3:
            for n in range(1, 9):
                yield from ((d, c) for c in itertools.combinations_with_replacement(types, n))
        else:
            # Every multiset up to 5 rows, every duplicate-free dataset of 6..8 rows.
            for n in range(1, 6):
                yield from ((d, c) for c in itertools.combinations_with_replacement(types, n))
            for n in range(6, 9):
                yield from ((d, c) for c in itertools.combinations(types, n))


def test_criterion_3_tree_oracle_exhaustive():
    started = time.perf_counter()
    checked = mismatches = bad_paths = 0
    for d, rows in _datasets():
        X = [list(x) for x, _ in rows]
        y = [label for _, label in rows]
        if not 0 < sum(y) < len(y):
            continue
        tree = dt_fit(X, y)
        checked += 1
        if tree.structure() != oracles.cart_tree(X, y, d):
            mismatches += 1
        counts = ccp_path(tree).node_counts
        if not all(a > b for a, b in zip(counts, counts[1:])):
            bad_paths += 1
    elapsed = time.perf_counter() - started
    check(3, mismatches == 0 and bad_paths == 0 and elapsed < 60,
          f"{checked} datasets, oracle mismatches={mismatches}, bad pruning paths={bad_paths}, "
          f"{elapsed:.1f}s (< 60s)")


def _rel_error(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def test_criterion_4_nn_numerics():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        ws, bs, X, y = oracles.random_network(rng)
        _, gw, gb = nn_gradients(ws, bs, X, y)
        nw, nb = oracles.central_differences(ws, bs, X, y)
        worst = max(worst, _rel_error(gw + gb, nw + nb))
    cfg = TrainConfig(alpha=0.01, gamma=0.9, epsilon=1e-8)
    w, v = rmsprop_step(np.array(1.0), np.array(2.0), np.array(0.0), cfg)
    rms_err = max(abs(float(v) - 0.4), abs(float(w) - (1 - 0.01 * 2 / (math.sqrt(0.4) + 1e-8))))
    bce_err = max(abs(bce_loss([0.5] * 4, [0, 1, 1, 0]) - math.log(2)),
                  abs(bce_loss([0.9, 0.2], [1, 0]) + 0.5 * (math.log(0.9) + math.log(0.8))))
    check(4, worst < 1e-4 and rms_err <= 1e-12 and bce_err <= 1e-12,
          f"100 networks max gradient rel. error={worst:.2e} (< 1e-4), rmsprop error={rms_err:.1e}, "
          f"BCE error={bce_err:.1e}")


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    out = tmp_path_factory.mktemp("benchmark")
    cfg = with_overrides(PipelineConfig(seed=7, output=str(out)), {}).validate()
    ws = pl.Workspace.create(cfg)
    started = time.perf_counter()
    pl.stage_generate(ws, SyntheticSpec(10_000, 0.3, seed=7))
    pl.stage_label(ws)
    pl.stage_featurize(ws)
    pl.stage_train(ws)
    return ws, time.perf_counter() - started


def test_criterion_5_synthetic_benchmark(benchmark):
    ws, elapsed = benchmark
    dt = ws.stage_info("prune")["test"]["accuracy"]
    nn = ws.stage_info("train")["models"]["nn"]["test"]["accuracy"]
    check(5, dt >= 0.95 and nn >= 0.95 and elapsed < 120,
          f"DT pruned test acc={dt:.4f}, NN paper-reduced test acc={nn:.4f} (>= 0.95), {elapsed:.1f}s (< 120s)")


def test_criterion_6_lime_fidelity():
    matches, d = 0, 12
    for k in range(20):
        rng = np.random.default_rng(600 + k)
        f, _, leaders = oracles.near_linear_model(rng, d)
        x = rng.integers(0, 2, d)
        e = lime_explain(f, x, LimeConfig(seed=k), np.full(d, 0.4))
        matches += list(np.argsort(-np.abs(e.importances), kind="stable")[:3]) == leaders
    worst_const = 0.0
    for c in (0.0, 0.3, 0.97):
        e = lime_explain(lambda Z, c=c: np.full(len(Z), c), np.array([1, 0, 1, 1, 0, 1]), LimeConfig(seed=1),
                         np.full(6, 0.3))
        worst_const = max(worst_const, float(np.abs(e.importances).max()))
    f, _, _ = oracles.near_linear_model(np.random.default_rng(66), d)
    x = np.array([1, 0] * (d // 2))
    a, b = (lime_explain(f, x, LimeConfig(seed=3), np.full(d, 0.4)) for _ in range(2))
    deterministic = np.array_equal(a.importances, b.importances) and a.intercept == b.intercept
    check(6, matches == 20 and worst_const < 1e-8 and deterministic,
          f"top-3 matches {matches}/20, constant-model max |importance|={worst_const:.1e} (< 1e-8), "
          f"deterministic={deterministic}")


def test_criterion_7_selection(benchmark):
    h3_ok = 0
    for k in range(20):
        rng = np.random.default_rng(700 + k)
        imp = rng.normal(size=(10, 50))
        imp[rng.random(imp.shape) < 0.2] = 0.0
        top, support = ["0.1", "0.2", "0.25", "0.3"][k % 4], ["0.5", "0.6", "0.7", "0.75"][k // 5]
        rows = [Explanation(str(i), r, 0.0, 1.0) for i, r in enumerate(imp)]
        h3_ok += set(select_h3(rows, float(top), float(support)).selected) == \
            oracles.h3_bruteforce(imp.tolist(), top, support)
    fixture = [Explanation(str(i), np.array(r), 0.0, 1.0)
               for i, r in enumerate([(0.9, 0.1, 0, 0.5), (0.8, 0, 0.3, -0.6), (-0.7, 0.2, 0, 0.4)])]
    h2_ok = (select_h2(fixture, 50).selected == (0,) and select_h2(fixture, 25).selected == (0, 3)
             and select_h2(fixture, 75).degenerate)

    ws, _ = benchmark
    info = pl.stage_explain_select(ws)
    base, sel = info["baseline"], info["selected"]
    drop = 100 * (base["test"]["accuracy"] - sel["test"]["accuracy"])
    faster = sel["train"]["train_time"] < base["train"]["train_time"]
    check(7, h3_ok == 20 and h2_ok and drop <= 3 and faster,
          f"H3 brute-force agreement {h3_ok}/20, H2 fixture={h2_ok}, "
          f"{info['n_selected']}/{info['n_features']} features: test acc {sel['test']['accuracy']:.4f} vs "
          f"{base['test']['accuracy']:.4f} (drop {drop:.2f} <= 3 points), train time "
          f"{sel['train']['train_time']:.2f}s vs {base['train']['train_time']:.2f}s")


def test_criterion_8_recon(tmp_path):
    dump = os.environ.get("LEAKHOUND_RECON")
    if not dump:
        record_criterion(8, None, "LEAKHOUND_RECON not set; dataset-conditional check skipped")
        pytest.skip("LEAKHOUND_RECON not set")
    cfg = with_overrides(PipelineConfig(seed=0, output=str(tmp_path)),
                         {"input.paths": (dump,), "input.format": "recon"}).validate()
    report = pl.run_pipeline(pl.Workspace.create(cfg), explain=False)
    ws = pl.Workspace(cfg, tmp_path)
    dt = 100 * ws.stage_info("prune")["test"]["accuracy"]
    nn = 100 * ws.stage_info("train")["models"]["nn"]["test"]["accuracy"]
    assert report["results"]
    check(8, 67.89 <= dt <= 77.89 and 69.5 <= nn <= 79.5,
          f"DT test acc={dt:.2f} in [67.89, 77.89], NN test acc={nn:.2f} in [69.5, 79.5]")
