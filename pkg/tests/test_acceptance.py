"""Acceptance criteria, each at its stated tolerance and time budget.

Every test writes one PASS/FAIL/SKIP line, collected in the terminal
summary. Criteria that this hardware cannot meet are marked xfail with the
reason; their assertions are unchanged.
"""

import itertools
import json
import math
import os
import statistics
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from avgemb import _backend, analytic, cli, datasets, evaluator
from avgemb.analytic import InOutParams
from avgemb.evaluator import EmbeddingMatrix, SubsetSample
from avgemb.stats_core import DistributionSpec, MomentSet, RandomSeed

from conftest import cpu_count
from helpers import mean_var_z, simulate_similarities

FIG2_K = "2,5,10,20,30,40,50"


def simulate_with_analytic(out, dist_args, seed):
    argv = ["--out", str(out), "--seed", str(seed), "--format", "json", "simulate", *dist_args,
            "--d", "128", "--N", "1000", "--k", FIG2_K, "--trials", "1000", "--with-analytic"]
    assert cli.main(argv) == 0
    return json.loads((out / "report.json").read_text())


def test_criterion_01_normal_curve(tmp_path, acceptance):
    t0 = time.perf_counter()
    rep = simulate_with_analytic(tmp_path, ["--dist", "normal"], 2024)
    elapsed = time.perf_counter() - t0
    gap = rep["comparisons"]["pairs"][0]["max_abs_gap"]
    k50 = rep["curves"][0]["scores"][-1]
    ok = gap <= 0.03 and 0.35 <= k50 <= 0.45 and elapsed <= 120
    acceptance.record(1, ok, f"max gap {gap:.4f} (<= 0.03), analytic k=50 {k50:.4f} in [0.35, 0.45], {elapsed:.1f}s (<= 120s)")
    assert gap <= 0.03
    assert 0.35 <= k50 <= 0.45
    assert elapsed <= 120


def test_criterion_02_rademacher_uniform_curves(tmp_path, acceptance):
    t0 = time.perf_counter()
    gaps = {}
    for name, args in (("rademacher", ["--dist", "rademacher"]),
                       ("uniform(-1,1)", ["--dist", "uniform", "--lo", "-1", "--hi", "1"])):
        rep = simulate_with_analytic(tmp_path / name, args, 2025)
        gaps[name] = rep["comparisons"]["pairs"][0]["max_abs_gap"]
    elapsed = time.perf_counter() - t0
    ok = max(gaps.values()) <= 0.03 and elapsed <= 240
    detail = ", ".join(f"{k} max gap {v:.4f}" for k, v in gaps.items())
    acceptance.record(2, ok, f"{detail} (<= 0.03), {elapsed:.1f}s (<= 240s)")
    assert max(gaps.values()) <= 0.03
    assert elapsed <= 240


def test_criterion_03_million_item_catalog(acceptance):
    t0 = time.perf_counter()
    score = analytic.consistency_analytic(DistributionSpec.normal().moments, 2, 1_000_000, 128)
    elapsed = time.perf_counter() - t0
    acceptance.record(3, score >= 0.95 and elapsed <= 10, f"N=1e6 k=2 score {score:.5f} (>= 0.95), {elapsed:.2f}s (<= 10s)")
    assert score >= 0.95
    assert elapsed <= 10


def test_criterion_04_crossing_probability_properties(acceptance):
    rng = RandomSeed(4).generator()
    t0 = time.perf_counter()
    failures = []
    for t in range(10_000):
        zero_mean = t % 2 == 0
        mu = 0.0 if zero_mean else float(rng.uniform(-2, 2))
        var = float(rng.uniform(0.01, 10))
        gamma = float(rng.uniform(-3, 3))
        kappa = gamma * gamma + 1 + float(rng.uniform(0, 10))
        k = int(rng.integers(2, 200))
        d = int(rng.integers(1, 2000))
        m = MomentSet(mu, var, gamma, kappa)
        p = analytic.prob_in_beats_out(m, k, d)
        # the complement keeps the strict upper bound visible where p rounds to 1.0
        tail = analytic.prob_out_beats_in(m, k, d)
        if not (p > 0.5 and 0.0 < tail < 0.5):
            failures.append(("range", m, k, d))
        if not analytic.prob_out_beats_in(m, k, d + 1) < tail:
            failures.append(("d", m, k, d))
        if zero_mean:
            if not analytic.prob_out_beats_in(m, k + 1, d) > tail:
                failures.append(("k", m, k, d))
            heavier = MomentSet(0.0, var, gamma, kappa + float(rng.uniform(0.01, 5)))
            if not analytic.prob_out_beats_in(heavier, k, d) > tail:
                failures.append(("kappa", m, k, d))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed <= 5
    acceptance.record(4, ok, f"10000 tuples, {len(failures)} violations, {elapsed:.2f}s (<= 5s)")
    assert not failures, failures[:5]
    assert elapsed <= 5


def test_criterion_05_similarity_moments_vs_simulation(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for n, spec in enumerate((DistributionSpec.normal(), DistributionSpec.uniform(-1, 1))):
        ms = spec.moments
        for k in (2, 5, 20):
            samples = simulate_similarities(spec, k, 128, 100_000, RandomSeed(5).derive(n, k))
            params = (analytic.s_in_params(ms, k, 128), analytic.s_out_params(ms, k, 128),
                      analytic.s_diff_params(ms, k, 128))
            for sample, approx in zip(samples, params):
                worst = max(worst, *map(abs, mean_var_z(sample, approx)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 5 and elapsed <= 120
    acceptance.record(5, ok, f"worst |z| over mean/variance of s_in, s_out, s_diff {worst:.2f} (<= 5), {elapsed:.1f}s (<= 120s)")
    assert worst <= 5
    assert elapsed <= 120


def test_criterion_06_order_statistics(acceptance):
    t0 = time.perf_counter()
    ms = DistributionSpec.normal().moments
    N, d = 1000, 128
    worst_mass = 0.0
    monotone = True
    for k in range(2, 51):
        p = InOutParams.from_moments(ms, k, N, d)
        lo, hi = p.mu_in - 12 * p.sigma_in, p.mu_in + 12 * p.sigma_in
        grid = np.linspace(-8 * p.sigma_out, p.mu_in + 8 * p.sigma_in, 400)
        for i in range(1, k + 1):
            f = analytic.f_in_order_density(i, p)
            mass, _ = integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)
            worst_mass = max(worst_mass, abs(mass - 1.0))
            F = analytic.F_out_order_cdf(i, p)(grid)
            monotone &= bool(np.all(np.diff(F) >= 0))

    rng = RandomSeed(6).generator()
    worst_q = 0.0
    for k in (2, 10, 50):
        p = InOutParams.from_moments(ms, k, N, d)
        m_out = N - k
        draws = rng.standard_normal((20_000, m_out)) * p.sigma_out
        for i in (k, 1):
            # F_out for member rank i is the law of the (k - i + 1)-th largest non-member
            r = k - i + 1
            order_stat = -np.partition(-draws, r - 1, axis=1)[:, r - 1]
            F = analytic.F_out_order_cdf(i, p)
            for q in (0.05, 0.25, 0.5, 0.75, 0.95):
                worst_q = max(worst_q, abs(F(float(np.quantile(order_stat, q))) - q))
    elapsed = time.perf_counter() - t0
    ok = worst_mass <= 1e-6 and monotone and worst_q <= 0.01 and elapsed <= 60
    acceptance.record(6, ok, f"max |mass - 1| {worst_mass:.1e} (<= 1e-6), monotone {monotone}, "
                             f"max quantile error {worst_q:.4f} (<= 0.01), {elapsed:.1f}s (<= 60s)")
    assert worst_mass <= 1e-6
    assert monotone
    assert worst_q <= 0.01
    assert elapsed <= 60


def test_criterion_07_exhaustive_oracle(acceptance):
    t0 = time.perf_counter()
    X = DistributionSpec.normal().sample(RandomSeed(7).generator(), (8, 4))
    m = EmbeddingMatrix(X)

    def brute(subset):
        q = X[list(subset)].mean(axis=0)
        s = X @ q
        order = sorted(range(8), key=lambda i: (-s[i], i))
        return len(set(order[:2]) & set(subset)) / 2

    subsets = list(itertools.combinations(range(8), 2))
    exact = math.fsum(brute(s) for s in subsets) / len(subsets)
    # the Monte Carlo estimator's infinite-trial limit is the uniform average over subsets
    limit = math.fsum(evaluator.precision_k(m, SubsetSample(s)) for s in subsets) / len(subsets)
    score, se = evaluator.consistency_mc(m, 2, 100_000, RandomSeed(8))
    elapsed = time.perf_counter() - t0
    ok = limit == exact and abs(score - exact) <= 3 * se and elapsed <= 10
    acceptance.record(7, ok, f"exact {exact:.5f}, estimator limit {limit:.5f}, MC {score:.5f} +/- {se:.5f} "
                             f"(within 3 se), {elapsed:.1f}s (<= 10s)")
    assert limit == exact
    assert abs(score - exact) <= 3 * se
    assert elapsed <= 10


def test_criterion_08_similarity_histograms(tmp_path, acceptance):
    t0 = time.perf_counter()
    worst = {}
    for name, args in (("N(0.5,1)", ["--dist", "shifted-normal"]),
                       ("Beta(2,2)", ["--dist", "beta", "--alpha", "2", "--beta", "2"]),
                       ("U(0,1)", ["--dist", "uniform", "--lo", "0", "--hi", "1"])):
        out = tmp_path / name
        argv = ["--out", str(out), "--seed", "8", "histogram", *args, "--d-list", "2,10,32,64,128", "--n-vectors", "1000"]
        assert cli.main(argv) == 0
        hists = json.loads((out / "report.json").read_text())["histograms"]
        h128 = next(h for h in hists if h["d"] == 128)
        worst[name] = max(abs(h128["empirical"]["mean_z"]), abs(h128["empirical"]["variance_z"]))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 5 and elapsed <= 60
    detail = ", ".join(f"{k} |z| {v:.2f}" for k, v in worst.items())
    acceptance.record(8, ok, f"d=128 {detail} (<= 5 jackknife se), {elapsed:.1f}s (<= 60s)")
    assert max(worst.values()) <= 5
    assert elapsed <= 60


def _load_any(path):
    path = Path(path)
    return datasets.load_embeddings(path, "csv" if path.suffix.lower() == ".csv" else "binary")


def test_criterion_09_public_datasets(tmp_path, acceptance):
    paths = {name: os.environ.get(var) for name, var in (("TT-SVD", "AVGEMB_TTSVD_PATH"), ("UT-ALS", "AVGEMB_UTALS_PATH"))}
    missing = [n for n, p in paths.items() if not p or not Path(p).exists()]
    if missing:
        acceptance.skip(9, f"public embeddings not available ({', '.join(missing)}); set AVGEMB_TTSVD_PATH and "
                           "AVGEMB_UTALS_PATH to EMB1 or CSV files to run")
    curves = {}
    for name, path in paths.items():
        m = datasets.center(_load_any(path))
        curves[name] = evaluator.consistency_curve_mc(m, range(2, 51), 1000, RandomSeed(9))
    tt_max = max(curves["TT-SVD"].scores)
    ut = curves["UT-ALS"].scores
    ok = tt_max <= 0.14 and all(0.005 <= s <= 0.05 for s in ut)
    acceptance.record(9, ok, f"TT-SVD max {tt_max:.4f} (<= 0.14), UT-ALS range [{min(ut):.4f}, {max(ut):.4f}] "
                             "within [0.005, 0.05]")
    assert tt_max <= 0.14
    assert all(0.005 <= s <= 0.05 for s in ut)


@pytest.fixture(scope="module")
def big_catalog():
    m = datasets.synth(DistributionSpec.normal(), 2_000_000, 128, RandomSeed(10), dtype=np.float32)
    yield m
    del m


def _query_times(m, threads, repeats=9):
    _backend.set_threads(threads)
    rng = RandomSeed(11).generator()
    evaluator.top_k(rng.standard_normal(128), m, 50)
    times = []
    for _ in range(repeats):
        q = rng.standard_normal(128)
        t0 = time.perf_counter()
        evaluator.top_k(q, m, 50)
        times.append(time.perf_counter() - t0)
    _backend.set_threads(_backend.default_threads())
    return statistics.median(times)


@pytest.mark.xfail(reason="a single query streams 1 GB; this host reads it slower than 100 ms (see ledger)", strict=False)
def test_criterion_10a_topk_latency(big_catalog, acceptance):
    median = _query_times(big_catalog, 1)
    t0 = time.perf_counter()
    np.add.reduce(big_catalog.data, axis=0)
    floor = time.perf_counter() - t0
    acceptance.record("10a", median <= 0.100, f"2M x 128 top-k median {median * 1e3:.0f} ms single-thread (<= 100 ms); "
                                              f"one pass over the data alone takes {floor * 1e3:.0f} ms here")
    assert median <= 0.100


@pytest.mark.xfail(cpu_count() < 8, reason="fewer than 8 cores available", strict=False)
def test_criterion_10b_topk_scaling(big_catalog, acceptance):
    cores = min(8, cpu_count())
    t1 = _query_times(big_catalog, 1)
    t8 = _query_times(big_catalog, 8)
    efficiency = (t1 / t8) / 8
    acceptance.record("10b", efficiency >= 0.7, f"speedup {t1 / t8:.2f}x with 8 threads requested on {cores} core(s), "
                                                f"efficiency {efficiency:.2f} (>= 0.7)")
    assert efficiency >= 0.7


def test_criterion_10c_empirical_curve_budget(tmp_path, acceptance):
    m = datasets.synth(DistributionSpec.normal(), 50_000, 128, RandomSeed(12), dtype=np.float32)
    path = tmp_path / "catalog.emb"
    datasets.write_embeddings(m, path)
    del m
    t0 = time.perf_counter()
    assert cli.main(["--out", str(tmp_path / "out"), "--format", "csv", "empirical", str(path),
                     "--k", "2..50", "--trials", "1000"]) == 0
    elapsed = time.perf_counter() - t0
    acceptance.record("10c", elapsed <= 900, f"50000 x 128 curve k=2..50, 1000 trials: {elapsed:.0f}s on "
                                             f"{cpu_count()} core(s) (<= 900s on 8 cores)")
    assert elapsed <= 900


def _run_cli(args, threads, out):
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    env.pop("AVGEMB_THREADS", None)
    proc = subprocess.run([sys.executable, "-m", "avgemb", "--threads", str(threads), "--out", str(out),
                           "--format", "csv", *args], capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    return (out / "curves.csv").read_bytes()


def test_criterion_11_determinism_across_threads(tmp_path, acceptance):
    emb = tmp_path / "m.emb"
    datasets.write_embeddings(datasets.synth(DistributionSpec.uniform(-1, 1), 3000, 32, RandomSeed(13)), emb)
    commands = {
        "simulate": ["--seed", "77", "simulate", "--dist", "rademacher", "--k", "2..12", "--trials", "300"],
        "empirical": ["--seed", "78", "empirical", str(emb), "--k", "2,5,9", "--trials", "300", "--baseline-normal"],
        "analytic": ["analytic", "--k", "2..20"],
    }
    mismatched = []
    for name, args in commands.items():
        runs = [_run_cli(args, threads, tmp_path / f"{name}-{threads}-{rep}")
                for threads, rep in ((1, 0), (4, 0), (4, 1))]
        if len(set(runs)) != 1:
            mismatched.append(name)
    ok = not mismatched
    acceptance.record(11, ok, f"curves.csv byte-identical for 1 vs 4 threads and on replay; mismatches: {mismatched or 'none'}")
    assert not mismatched
