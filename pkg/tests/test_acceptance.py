"""Acceptance criteria, one PASS/FAIL line each (shown in the terminal summary).

The structure experiment runs at full size (10000/2000 samples, 300 rounds)
for seeds 0-4 and is shared by criteria 1 and 2.
"""
import json
import math
import time

import numpy as np
import pytest

from structkan import experiments as E
from structkan import representability as R
from structkan import topology as T
from structkan.cli import main
from structkan.expr import Z_TEXT, ZPRIME_TEXT, parse_expr
from structkan.representability import SmoothnessSpec
from structkan.training import normalized_rmse

import oracles
from conftest import ACCEPTANCE_LINES, random_smooth_topology
from test_experiments import symbolic_decomposable

SEEDS = range(5)


def report(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


@pytest.fixture(scope="session")
def fig1_runs():
    runs = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        res = E.run_fig1(*E.default_specs(seed))
        runs[seed] = (res, time.perf_counter() - t0)
    return runs


def test_criterion_1_structure_separation(fig1_runs):
    parts, ok = [], True
    for seed, (res, secs) in fig1_runs.items():
        s = res.summary
        good = s["final_val_z"] < 0.15 and s["final_val_zprime"] > 0.6 and s["ratio"] > 3
        ok &= good
        parts.append(f"seed {seed}: z={s['final_val_z']:.4f} z'={s['final_val_zprime']:.4f} "
                     f"ratio={s['ratio']:.2f} ({secs:.0f}s)")
    report(1, ok, "z<0.15, z'>0.6, ratio>3 | " + "; ".join(parts))


def test_criterion_2_trend(fig1_runs):
    parts, ok = [], True
    for seed, (res, _) in fig1_runs.items():
        tz = E.trend_ratio(res.trace_z)
        tzp = E.trend_ratio(res.trace_zprime)
        ok &= tz >= 4 and tzp <= 1.5
        parts.append(f"seed {seed}: z={tz:.2f} z'={tzp:.2f}")
    report(2, ok, "median(1-50)/median(250-300): z>=4, z'<=1.5 | " + "; ".join(parts))


def test_criterion_3_counting_oracles():
    t0 = time.perf_counter()
    mismatches = 0
    inf = R.INFINITE
    orders = list(range(11)) + [inf]
    for n in range(1, 9):
        for n_prime in range(1, n + 1):
            for k in orders:
                for kp in orders:
                    got = R.vitushkin_violates(SmoothnessSpec(k, n, kp, n_prime))
                    mismatches += got != oracles.ratio_violates(k, n, kp, n_prime)
    for n in range(1, 9):
        for p in range(0, 31):
            mismatches += R.deriv_dim_exact(n, p) != oracles.multisets(n, p)
    for m in range(1, 51):
        for n in range(1, 9):
            for p in range(0, 31):
                mismatches += R.param_bound(m, n, p) != oracles.count_params(m, n, p)
    for n in range(3, 9):
        for p in range(1, 31):
            mismatches += R.paper_lower_bound(n, p) != oracles.quadratic_bound(n, p)
        for m in range(1, 51):
            for p in range(1, 31):
                rep = R.counting_report(m, n, p)
                want = oracles.quadratic_bound(n, p) <= oracles.count_params(m, n, p)
                mismatches += rep.representable_all != want
                mismatches += rep.n_p_bound != oracles.count_params(m, n, p)
            mismatches += R.smoothness_limit(m, n) != oracles.first_failure(m, n)
    secs = time.perf_counter() - t0
    discrepancy = R.deriv_dim_exact(4, 3) == 20 and R.paper_lower_bound(4, 3) == 27
    report(3, mismatches == 0 and secs < 5 and discrepancy,
           f"{mismatches} mismatches against brute force, {secs:.2f}s (<5s), "
           f"deriv_dim_exact(4,3)={R.deriv_dim_exact(4, 3)} vs paper_lower_bound(4,3)={R.paper_lower_bound(4, 3)}")


def test_criterion_4_gradients():
    rng = np.random.default_rng(2024)
    worst, n_params = 0.0, 0
    for _ in range(20):
        top = random_smooth_topology(rng, n_nodes=12)
        err, k = oracles.gradient_check(top, rng, n_samples=32, h=1e-5)
        worst = max(worst, err)
        n_params += k
    report(4, worst < 1e-5, f"max rel err {worst:.2e} (<1e-5) over {n_params} parameters, "
                            f"20 topologies x 32 samples, h=1e-5")


def test_criterion_5_decomposability():
    ab = ([0, 1], [2, 3])
    z, zp = parse_expr(Z_TEXT), parse_expr(ZPRIME_TEXT)
    sym_z, sym_zp = symbolic_decomposable(Z_TEXT), symbolic_decomposable(ZPRIME_TEXT)
    ok = True
    hi_z, lo_zp, scale_gap = 0.0, math.inf, 0.0
    for seed in range(10):
        rz = E.decomposability_score(z, ab, 64, seed)
        rzp = E.decomposability_score(zp, ab, 64, seed)
        ok &= rz.score < 1e-6 and rzp.score > 1e-2
        ok &= (rz.verdict == "decomposable") == sym_z and (rzp.verdict == "decomposable") == sym_zp
        hi_z, lo_zp = max(hi_z, rz.score), min(lo_zp, rzp.score)
        for e, r in ((z, rz), (zp, rzp)):
            scale_gap = max(scale_gap, abs(E.decomposability_score(e.scaled(3.0), ab, 64, seed).score - r.score))
    ok &= scale_gap <= 1e-12
    report(5, ok, f"max score(z)={hi_z:.2e} (<1e-6), min score(z')={lo_zp:.3f} (>1e-2), seeds 0-9, "
                  f"symbolic oracle z={'decomposable' if sym_z else 'not'}, z'={'decomposable' if sym_zp else 'not'}, "
                  f"max |score(3f)-score(f)|={scale_gap:.1e}")


def test_criterion_6_staged_oracle():
    res = E.staged_fit(seed=0)
    report(6, res["w"] < 0.05, f"staged fit val rmse_norm u={res['u']:.4f} v={res['v']:.4f} w={res['w']:.4f} (<0.05)")


def _run_twice(tmp_path, capsys, name, argv_fn, files):
    outputs = []
    for i in range(2):
        out = tmp_path / f"{name}{i}"
        code = main(argv_fn(str(out)))
        stdout = capsys.readouterr().out
        blobs = [stdout] if not files else [(out / f).read_bytes() for f in files]
        outputs.append((code, blobs))
    return outputs[0] == outputs[1] and outputs[0][0] == 0


def test_criterion_7_cli_determinism(tmp_path, capsys):
    topo = tmp_path / "three.json"
    T.dump(T.three_model_topology(), topo)
    small = ["--n-train", "400", "--n-val", "100"]
    cases = {
        "validate": (lambda o: ["validate", str(topo)], None),
        "analyze": (lambda o: ["analyze", str(topo), "--k", "inf", "--k-prime", "3", "--n-prime", "1",
                               "--n", "4", "--out", o], ["counting.csv", "summary.json"]),
        "train": (lambda o: ["train", str(topo), "--target", Z_TEXT, "--rounds", "10", "--seed", "3",
                             *small, "--out", o], ["trace.csv", "model.json"]),
        "experiment fig1": (lambda o: ["experiment", "fig1", "--seed", "2", "--rounds", "5", *small,
                                       "--out", o],
                            ["trace_z.csv", "trace_zprime.csv", "summary.json", "fig1.svg"]),
        "decompose": (lambda o: ["decompose", "--expr", ZPRIME_TEXT, "--partition", "x1,x2|y1,y2"], None),
    }
    results = {name: _run_twice(tmp_path, capsys, name.replace(" ", "_"), fn, files)
               for name, (fn, files) in cases.items()}
    report(7, all(results.values()),
           ", ".join(f"{k}={'identical' if v else 'DIFFERENT'}" for k, v in results.items()))


def test_criterion_8_normalized_rmse_exact():
    rng = np.random.default_rng(8)
    ok = True
    for _ in range(200):
        n = int(rng.integers(2, 500))
        y = rng.normal(rng.normal() * 10, rng.uniform(0.01, 100), n)
        ok &= normalized_rmse(np.full(n, y.mean()), y) == 1.0
        ok &= normalized_rmse(y.copy(), y) == 0.0
    report(8, ok, "mean predictor == 1.0 and perfect predictor == 0.0 exactly on 200 random datasets")
