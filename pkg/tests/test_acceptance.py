"""Acceptance criteria; each test prints one PASS/FAIL line."""
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from eereplay.bandit import (BetaParams, BucketLayout, LayoutKind, ThompsonState, make_policy,
                             sample_beta, simulate_bernoulli, update)
from eereplay.cli import main
from eereplay.experiment import load_spec, report_csv, report_svg, run
from eereplay.logmodel import ReplayConfig
from eereplay.ranker import TrainingSet, train
from eereplay.replay import FixedPosition, ctr_lift, replay_log
from eereplay.synth import Distortion, GroundTruthModel, generate_logs, load_model
from eereplay.weighting import WeightingScheme, multinomial_prob, weight

from conftest import record_criterion, table1_record
from oracles import numeric_gradient, recount_propensities, weighted_ridge

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_c1_worked_examples():
    p = multinomial_prob([0.60, 0.45, 0.40], 0)
    w = weight(p, WeightingScheme("multinomial", 10.0))
    scores = BucketLayout(LayoutKind.SCORES, k=2)
    sp = BucketLayout(LayoutKind.SCORES_AND_POSITIONS, k=3, n_logged=5)
    b1, b2 = scores.index(3, 0.60), sp.index(4, 0.45)
    ok = abs(w - 1.45 / 0.6) <= 1e-9 and scores.label(b1) == "P_61" and sp.label(b2) == "P^4_46"
    record_criterion(1, ok, f"weight={w:.12f} (target {1.45 / 0.6:.12f}, tol 1e-9); "
                            f"s=0.60 -> {scores.label(b1)}; pos 4 s=0.45 -> {sp.label(b2)}")
    assert ok


def test_c2_counterfactual_table1():
    cfg = ReplayConfig(k=2)
    q = table1_record()
    keep = replay_log([q], cfg, FixedPosition(2))
    promote = replay_log([q], cfg, FixedPosition(3))
    lift = ctr_lift(promote, keep)
    ok = keep.clicks_topk == 0 and promote.clicks_topk == 1 and lift == 1.0
    record_criterion(2, ok, f"pi1 click={keep.clicks_topk}, pi2 click={promote.clicks_topk}, lift={lift:+.1f}")
    assert ok


def test_c3_posterior_conservation():
    t0 = time.perf_counter()
    ok = True
    for eps in (1.0, 0.01):
        rng = np.random.default_rng(3)
        state = ThompsonState(BucketLayout("scorepos", 2), epsilon=eps)
        buckets = rng.integers(0, state.layout.bucket_count, 10**5)
        clicks = rng.random(10**5) < 0.3
        for b, c in zip(buckets.tolist(), clicks.tolist()):
            update(state, b, c)
        e = Fraction(repr(eps))
        for b in range(state.layout.bucket_count):
            a, bt = state.exact_posterior(b)
            ok &= a + bt - 2 == e * int(state.pull_counts[b])
        ok &= int(state.pull_counts.sum()) == 10**5
    dt = time.perf_counter() - t0
    ok &= dt < 5
    record_criterion(3, ok, f"alpha+beta-2 == eps*pulls exactly for eps in (1, 0.01) over 1e5 updates; {dt:.1f}s (<5s)")
    assert ok


def test_c4_propensity_oracle():
    t0 = time.perf_counter()
    model = GroundTruthModel((0.5, 0.5), distortion=Distortion(noise=0.2))
    kinds = ("positions", "scores", "scorepos")
    checked = mismatches = 0
    for seq in range(1000):
        log = generate_logs(model, 25, seed=seq)
        cfg = ReplayConfig(k=1 + seq % 3, window=1 + seq % 4)
        policy = make_policy(kinds[seq % 3], cfg.k, seed=seq, score_bins=5)
        s = replay_log(log, cfg, policy, WeightingScheme("propensity"))
        for q, p in recount_propensities(log, cfg, policy.layout, s.buckets).items():
            checked += 1
            mismatches += s.propensity[q] != float(p)
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and checked > 0 and dt < 10
    record_criterion(4, ok, f"{checked} propensities over 1000 sequences, {mismatches} mismatches; {dt:.1f}s (<10s)")
    assert ok


def test_c5_bandit_convergence():
    t0 = time.perf_counter()
    chosen = simulate_bernoulli([0.6, 0.3, 0.3, 0.3], 50_000, runs=100, epsilon=1.0, seed=2016)
    share = (chosen[45_000:] == 0).mean(axis=0)
    good = int((share >= 0.9).sum())
    dt = time.perf_counter() - t0
    ok = good >= 95 and dt < 30
    record_criterion(5, ok, f"{good}/100 seeds give the best arm >=90% of final-decile pulls "
                            f"(min share {share.min():.4f}); {dt:.1f}s (<30s)")
    assert ok


def test_c6_beta_moments():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    params = BetaParams(50.0, 50.0)
    draws = np.fromiter((sample_beta(rng, params) for _ in range(10**6)), dtype=np.float64, count=10**6)
    a, b = params.alpha, params.beta
    var_ref = a * b / ((a + b) ** 2 * (a + b + 1))
    mean, var = draws.mean(), draws.var()
    dt = time.perf_counter() - t0
    ok = abs(mean - 0.5) <= 0.005 and abs(var / var_ref - 1) <= 0.05 and dt < 10
    record_criterion(6, ok, f"mean={mean:.5f} (0.5+-0.005), var={var:.6f} vs {var_ref:.6f} "
                            f"({100 * (var / var_ref - 1):+.2f}%, tol 5%); {dt:.1f}s (<10s)")
    assert ok


def test_c7_ranker_oracle():
    rng = np.random.default_rng(7)
    worst_coef = worst_grad = 0.0
    for _ in range(200):
        X = rng.normal(size=(20, 5))
        y = rng.integers(0, 2, 20).astype(float)
        w = rng.uniform(0.1, 10.0, 20)
        lam = float(rng.choice([0.0, 1e-6, 0.1, 5.0]))
        m = train(TrainingSet(X, y, w), lam)
        coef, b = weighted_ridge(X, y, w, lam)
        worst_coef = max(worst_coef, np.abs(np.array(m.coefficients) - coef).max(), abs(m.intercept - b))
        g = numeric_gradient(np.array(m.coefficients), m.intercept, X, y, w, lam)
        worst_grad = max(worst_grad, np.linalg.norm(g))
    ok = worst_coef <= 1e-8 and worst_grad <= 1e-6
    record_criterion(7, ok, f"max |coef - oracle|={worst_coef:.2e} (<=1e-8), "
                            f"max |grad|={worst_grad:.2e} (<=1e-6) over 200 problems 20x5")
    assert ok


@pytest.fixture(scope="module")
def full_sweep():
    spec = load_spec(CONFIGS / "experiment.json")
    t0 = time.perf_counter()
    report = run(spec)
    return spec, report, time.perf_counter() - t0


def test_c8a_exploring_policies_beat_baseline_on_test_ctr(full_sweep):
    spec, report, dt = full_sweep
    details, ok = [], dt < 300
    for pol in ("scores", "scorepos"):
        for size in (s for s in spec.dataset_sizes if s >= 5000):
            base = report.cell("none", size).test_ctr
            wins = sum(t > b for t, b in zip(report.cell(pol, size).test_ctr, base))
            ok &= wins >= 8
            details.append(f"{pol}@{size}:{wins}/10")
    record_criterion("8a", ok, "test CTR strictly above none in >=8/10 runs: " + ", ".join(details)
                     + f"; sweep {dt:.0f}s (<300s)")
    assert ok


def test_c8b_scores_lift_positive_at_largest(full_sweep):
    spec, report, _ = full_sweep
    size = max(spec.dataset_sizes)
    lift = report.cell("scores", size).lift_mean
    ok = lift > 0
    record_criterion("8b", ok, f"mean replay CTR lift of scores at {size}: {lift:+.5f} (must be > 0)")
    assert ok


def test_c8c_positions_low_epsilon_lift_non_positive(full_sweep):
    spec, report, _ = full_sweep
    lifts = {s: report.cell("positions", s).lift_mean for s in spec.dataset_sizes}
    ok = all(v <= 0 for v in lifts.values())
    record_criterion("8c", ok, "positions (eps=0.01) mean lift per size: "
                     + ", ".join(f"{s}:{v:+.5f}" for s, v in lifts.items()) + " (all <= 0)")
    assert ok


def test_c9_exploration_histograms(full_sweep):
    spec, report, _ = full_sweep
    k = spec.replay.k
    sizes = list(spec.dataset_sizes)

    def share_at_k(pol, s):
        h = report.cell(pol, s).histogram_mean()
        return h.get(k, 0.0) / max(sum(h.values()), 1e-12)

    def suboptimal(pol, s):
        return sum(v for p, v in report.cell(pol, s).histogram_mean().items() if p != k)

    shares = [share_at_k("positions", s) for s in sizes]
    rising = all(b > a for a, b in zip(shares, shares[1:]))
    compare = [s for s in sizes if s >= 10_000] or sizes[-1:]
    conservative = all(suboptimal("scorepos", s) < suboptimal("scores", s) for s in compare)
    ok = rising and conservative
    record_criterion(9, ok, "positions share at i=k by size: "
                     + ", ".join(f"{s}:{v:.3f}" for s, v in zip(sizes, shares))
                     + "; suboptimal examples scorepos vs scores: "
                     + ", ".join(f"{s}:{suboptimal('scorepos', s):.0f}/{suboptimal('scores', s):.0f}"
                                 for s in sizes)
                     + f" (compared at sizes {compare})")
    assert ok


def test_c10_determinism(full_sweep, tmp_path):
    _, report, _ = full_sweep
    same_render = report_svg(report) == report_svg(report) and report_csv(report) == report_csv(report)
    outputs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        spec = (CONFIGS / "experiment.json").read_text()
        small = spec.replace("[1000, 5000, 10000, 100000]", "[200, 500]") \
                    .replace('"repetitions": 10', '"repetitions": 2') \
                    .replace("200000", "3000").replace("50000", "1000")
        (d / "spec.json").write_text(small)
        (d / "model.json").write_bytes((CONFIGS / "model.json").read_bytes())
        rc = [main(["gen", "--model", str(d / "model.json"), "--queries", "3000", "--seed", "1",
                    "--out", str(d / "logs.jsonl")]),
              main(["replay", "--logs", str(d / "logs.jsonl"), "--policy", "scorepos", "--seed", "9",
                    "--out", str(d / "summary.json"), "--records", str(d / "records.jsonl"),
                    "--examples", str(d / "examples.jsonl")]),
              main(["train", "--examples", str(d / "examples.jsonl"), "--out", str(d / "ranker.json")]),
              main(["experiment", "--spec", str(d / "spec.json"), "--out", str(d / "exp")])]
        assert rc == [0, 0, 0, 0]
        outputs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    identical = outputs[0] == outputs[1]
    n_svg = sum(1 for p in outputs[0] if p.suffix == ".svg")
    ok = same_render and identical and n_svg == 3
    record_criterion(10, ok, f"{len(outputs[0])} files byte-identical across reruns "
                             f"(including {n_svg} SVG); full-sweep render stable: {same_render}")
    assert ok


def test_c11_throughput():
    model = load_model(CONFIGS / "model.json")
    t0 = time.perf_counter()
    log = generate_logs(model, 1_000_000, seed=11)
    t_gen = time.perf_counter() - t0
    t0 = time.perf_counter()
    s = replay_log(log, ReplayConfig(k=2), make_policy("scores", 2, seed=11))
    dt = time.perf_counter() - t0
    ok = s.queries_total == 1_000_000 and dt < 120
    record_criterion(11, ok, f"scores replay of 1M queries: {dt:.1f}s (<120s); generation {t_gen:.1f}s")
    assert ok
