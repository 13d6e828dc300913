"""Numbered acceptance criteria, each checked at its stated tolerance.

A summary line per criterion is printed at the end of the session."""

import hashlib
import time
from itertools import combinations
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from sasl.cli import main
from sasl.data import chrono_split, expand_design
from sasl.elimination import EliminationConfig, backward_eliminate, nested_f_pvalues
from sasl.gating import gate_predictions
from sasl.gbdt import GbdtConfig, predict_proba_gbdt, train_gbdt
from sasl.linalg import f_cdf, fit_ols
from sasl.metrics import macro_f1, roc_auc
from sasl.s2 import aggregate_daily, default_aggregate_spec, reindex_analysis_days
from sasl.synthetic import fig1_spec, generate, lifelog_spec, minute_records, planted_signal
from sasl.thresholds import (
    ThresholdSet,
    candidate_grid,
    discretize,
    search_threshold_binary,
    search_threshold_ternary,
)


@pytest.mark.criterion(1, "OLS matches the normal equations")
def test_criterion_01_ols_oracle():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    for _ in range(100):
        p = int(rng.integers(1, 21))
        n = int(rng.integers(p + 5, 201))
        X = rng.normal(size=(n, p))
        y = rng.normal(size=n)
        b = fit_ols(X, y).coefficients
        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose(b, oracle, rtol=1e-8, atol=1e-8 * np.abs(oracle).max())
    assert time.perf_counter() - start < 5.0


@pytest.mark.criterion(2, "nested F p-value equals two-sided t p-value")
def test_criterion_02_f_equals_t_squared():
    rng = np.random.default_rng(202)
    for _ in range(50):
        p = int(rng.integers(2, 11))
        n = int(rng.integers(p + 3, 120))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = X @ rng.normal(size=p) * rng.uniform(0, 1) + rng.normal(size=n)
        _, pf = nested_f_pvalues(X, y)
        b = np.linalg.solve(X.T @ X, X.T @ y)
        df = n - p
        s2 = np.sum((y - X @ b) ** 2) / df
        se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
        pt = 2 * stats.t.sf(np.abs(b / se), df)
        np.testing.assert_allclose(pf, pt, rtol=0, atol=1e-10)


def _f_cdf_quad(x, d1, d2):
    # substitute t = u^2 so the d1 = 1 singularity at zero disappears
    def integrand(u):
        return 2 * u * stats.f.pdf(u * u, d1, d2)
    mode = max((d1 - 2) / d1 * d2 / (d2 + 2), 0.0) if d1 > 2 else 0.0
    top = np.sqrt(x)
    pts = [np.sqrt(mode)] if 0 < mode < x else None
    val, _ = integrate.quad(integrand, 0.0, top, points=pts, epsabs=1e-14, epsrel=1e-13, limit=500)
    return val


@pytest.mark.criterion(3, "f_cdf agrees with adaptive quadrature")
def test_criterion_03_f_cdf():
    rng = np.random.default_rng(303)
    for _ in range(1000):
        d1 = float(rng.choice([1, 2, 3, 5, 10, 30]) if rng.random() < 0.5 else rng.uniform(1, 60))
        d2 = float(rng.choice([1, 2, 4, 20, 100]) if rng.random() < 0.5 else rng.uniform(1, 300))
        x = float(rng.exponential(2.0))
        assert abs(f_cdf(x, d1, d2) - _f_cdf_quad(x, d1, d2)) <= 1e-8, (x, d1, d2)
    assert abs(f_cdf(1.0, 1.0, 1.0) - 0.5) <= 1e-12


@pytest.mark.criterion(4, "toy recovery of the true support in >= 90 of 100 seeds")
def test_criterion_04_fig1_recovery():
    truth_set = {"intercept", "x", "id3:x"}
    start = time.perf_counter()
    hits = 0
    for seed in range(100):
        table, truth = generate(fig1_spec(seed, n_per_subject=200, noise=0.5))
        reduced, _ = backward_eliminate(expand_design(table), truth.latent["y"],
                                        EliminationConfig(alpha=0.05, seed=seed))
        hits += set(reduced.names) == truth_set
    elapsed = time.perf_counter() - start
    print(f"exact recovery {hits}/100 in {elapsed:.1f} s")
    assert elapsed < 60.0
    assert hits >= 90


def _brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    total = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg)
    return total / (pos.size * neg.size)


@pytest.mark.criterion(5, "ROC-AUC equals brute-force concordance")
def test_criterion_05_auc():
    rng = np.random.default_rng(505)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, 6, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
        assert roc_auc(s, y) == _brute_auc(s, y)


def _min_fold(thr, z1, y1, z2, y2, classes):
    return min(macro_f1(discretize(z1, thr), y1, classes),
               macro_f1(discretize(z2, thr), y2, classes))


def _case(rng, levels):
    n = int(rng.integers(levels + 5, 40))
    z1, z2 = rng.normal(size=n), rng.normal(size=n)
    y1 = np.clip(np.round(z1 + rng.normal(size=n)), 0, levels - 1).astype(int)
    y2 = np.clip(np.round(z2 + rng.normal(size=n)), 0, levels - 1).astype(int)
    y1[:levels], y2[:levels] = np.arange(levels), np.arange(levels)
    return z1, y1, z2, y2


@pytest.mark.criterion(6, "threshold search attains the exhaustive optimum")
def test_criterion_06_threshold_optimality():
    rng = np.random.default_rng(606)
    for _ in range(100):
        z1, y1, z2, y2 = _case(rng, 2)
        thr = search_threshold_binary(z1, y1, z2, y2, stability_delta=0.0)
        best = max(_min_fold(ThresholdSet.fixed("", (t,)), z1, y1, z2, y2, [0, 1])
                   for t in candidate_grid(z1, z2))
        assert _min_fold(thr, z1, y1, z2, y2, [0, 1]) == best
    for _ in range(100):
        z1, y1, z2, y2 = _case(rng, 3)
        thr = search_threshold_ternary(z1, y1, z2, y2, stability_delta=0.0)
        best = max(_min_fold(ThresholdSet.fixed("", (a, b)), z1, y1, z2, y2, [0, 1, 2])
                   for a, b in combinations(candidate_grid(z1, z2), 2))
        assert _min_fold(thr, z1, y1, z2, y2, [0, 1, 2]) == best


@pytest.mark.criterion(7, "elimination postconditions and determinism")
def test_criterion_07_elimination():
    for seed in range(5):
        table, truth = generate(lifelog_spec(seed, subjects=4, days=40))
        X = expand_design(table)
        y = table.labels("Q1").astype(float)
        cfg = EliminationConfig(seed=seed)
        runs = [backward_eliminate(X, y, cfg) for _ in range(3)]
        texts = {r[1].to_jsonl() for r in runs}
        assert len(texts) == 1
        reduced, trace = runs[0]
        cand = [j for j, n in enumerate(reduced.names) if n != "intercept"]
        _, p = nested_f_pvalues(reduced, y, cand)
        assert np.all(p <= cfg.alpha)
        sse = [fit_ols(X, y).sse] + [s.sse for s in trace.steps]
        assert all(b >= a for a, b in zip(sse, sse[1:]))


@pytest.mark.criterion(8, "GBDT loss, separability and prior")
def test_criterion_08_gbdt():
    for seed in range(3):
        X, y = planted_signal(200, 3, 7, rng_seed=seed)
        model = train_gbdt(X, y, cfg=GbdtConfig(n_trees_max=60, learning_rate=0.3))
        assert np.all(np.diff(model.train_loss) <= 1e-9)
    rng = np.random.default_rng(8)
    X = np.vstack([rng.normal(-3, 0.5, size=(60, 2)), rng.normal(3, 0.5, size=(60, 2))])
    y = np.repeat([0, 1], 60)
    assert roc_auc(predict_proba_gbdt(train_gbdt(X, y, cfg=GbdtConfig(n_trees_max=20)), X), y) == 1.0
    y2 = y.copy()
    y2[:15] = 1
    prior = predict_proba_gbdt(train_gbdt(X, y2, cfg=GbdtConfig(n_trees_max=0)), X)
    np.testing.assert_allclose(prior, y2.mean(), rtol=1e-12)


@pytest.mark.criterion(9, "confidence gating rules")
def test_criterion_09_gating():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n = 40
        p, s = rng.integers(0, 3, size=n), rng.integers(0, 3, size=n)
        c = rng.uniform(0, 1, size=n) * 0.999
        np.testing.assert_array_equal(gate_predictions(p, s, c, 1.0).final, p)
        dis = p != s
        np.testing.assert_array_equal(gate_predictions(p, s, np.maximum(c, 0.5), 0.5).final[dis],
                                      s[dis])
        counts = [gate_predictions(p, s, c, t).overrides for t in np.linspace(0.5, 1.0, 11)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert gate_predictions([0], [1], [0.97], 0.97).final[0] == 1


@pytest.mark.criterion(10, "no temporal leakage in S2 features or folds")
def test_criterion_10_leakage():
    table, truth = generate(lifelog_spec(10, subjects=3, days=12))
    rec = minute_records(table, truth, step_minutes=30, rng_seed=10)
    spec = default_aggregate_spec()
    dev = [r.name for r in spec.rules if r.kind == "baseline_deviation"]
    assert dev
    base = aggregate_daily(reindex_analysis_days(rec), spec)
    days = reindex_analysis_days(rec)["analysis_day"].to_numpy()
    all_days = sorted(set(days))
    row_day = np.array([pd.Timestamp(int(t), unit="s").date() for t in base.timestamps])
    for cut in all_days[1:-1:3]:
        mutated = rec.copy()
        future = days > cut
        mutated.loc[future, "value"] = mutated.loc[future, "value"] * -2.0 + 5.0
        after = aggregate_daily(reindex_analysis_days(mutated), spec)
        keep = row_day <= cut
        for name in dev:
            np.testing.assert_array_equal(base.feature(name)[keep], after.feature(name)[keep])
    for fold in chrono_split(table):
        for subj in np.unique(table.subjects):
            mine = table.subjects == subj
            tr = table.timestamps[fold.train_rows][mine[fold.train_rows]]
            va = table.timestamps[fold.valid_rows][mine[fold.valid_rows]]
            if tr.size and va.size:
                assert tr.max() < va.min() or va.max() < tr.min()


def _tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.criterion(11, "end-to-end determinism and runtime")
def test_criterion_11_end_to_end(tmp_path, monkeypatch):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    digests = []
    for k in range(2):
        monkeypatch.setenv("SASL_OUTPUT_DIR", str(tmp_path / f"run{k}"))
        start = time.perf_counter()
        assert main(["run", "--config", str(tmp_path / "config.json")]) == 0
        elapsed = time.perf_counter() - start
        print(f"run {k}: {elapsed:.1f} s")
        assert elapsed < 180.0
        digests.append(_tree_digest(tmp_path / f"run{k}"))
    assert digests[0] and digests[0] == digests[1]
