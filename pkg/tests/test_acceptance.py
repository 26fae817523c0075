"""One test per acceptance criterion, at full desk-scale settings.

Each experiment runs once per module (through the same code path as the
CLI) and the individual tests read its summary.  Every test prints a single
PASS/FAIL line.  The whole module takes tens of minutes on one core.
"""
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from synsamp import cli
from synsamp.experiments import EXPERIMENTS
from synsamp.harness import InputSchedule
from synsamp.priors import RBM_BIMODAL_PRIOR, WTA_PRIOR, PriorSpec, log_prior_density, log_prior_grad
from synsamp.rbm import (RbmParams, cd_gradient, exact_log_likelihood, exact_log_likelihood_grad)
from synsamp.wta import WtaConfig, build_network, simulate

from conftest import SMALL

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def _run(name, out_dir, overrides=(), seed=0):
    cfg = cli.build_config(name, None, seed, list(overrides))
    exp = EXPERIMENTS[name](cfg.sections, cfg.seed)
    chunk_seconds = []
    while not exp.done:
        t = time.perf_counter()
        exp.step()
        chunk_seconds.append(time.perf_counter() - t)
    cli.execute(exp, cfg, str(out_dir), checkpoint=False, quiet=True)  # writes the outputs
    return exp, chunk_seconds


@pytest.fixture(scope="module")
def posterior(tmp_path_factory):
    exp, secs = _run("validate-posterior", tmp_path_factory.mktemp("posterior"))
    rows = {(r["check"], r["temperature"]): r for r in exp.log.rows("stationary")}
    return exp, rows, dict(zip(exp.plan, secs))


@pytest.fixture(scope="module")
def rbm_runs(tmp_path_factory):
    out = {}
    for prior in ("uniform", "bimodal"):
        exp, secs = _run("rbm-generalization", tmp_path_factory.mktemp(prior),
                         [f"sampler.prior={prior}"])
        out[prior] = (exp.summary, sum(secs))
    return out


def _stationary_ok(r):
    return (r["mean_rel_error"] < 0.02 and r["variance_rel_error"] < 0.05
            and r["ks"] < r["ks_critical"])


def _fmt(r):
    return (f"mean err {r['mean_rel_error']:.4f} (<0.02), var err {r['variance_rel_error']:.4f} "
            f"(<0.05), KS {r['ks']:.5f} (crit {r['ks_critical']:.5f})")


def test_c01_stationary_distribution(posterior, report):
    exp, rows, secs = posterior
    r = rows[("constant_speed", 1.0)]
    ok = _stationary_ok(r) and secs["chain:1.0"] < 60
    report(1, ok, f"{_fmt(r)}, chain runtime {secs['chain:1.0']:.1f} s (<60)")
    assert ok


def test_c02_temperature_law(posterior, report):
    exp, rows, _ = posterior
    errs = {T: rows[("constant_speed", T)]["variance_rel_error"] for T in (0.5, 2.0)}
    for T in errs:
        r = rows[("constant_speed", T)]
        assert r["analytic_variance"] == pytest.approx(T * exp.model.posterior(1.0)[1])
    ok = all(e < 0.05 for e in errs.values())
    report(2, ok, ", ".join(f"T={T}: var err {e:.4f}" for T, e in errs.items()) + " (<0.05)")
    assert ok


def test_c03_map_limit(posterior, report):
    m = posterior[0].log.rows("map")[0]
    ok = m["abs_error"] < 1e-6 and m["steps"] <= 100_000
    report(3, ok, f"|MAP - analytic| = {m['abs_error']:.2e} (<1e-6) after {m['steps']} steps (<=1e5)")
    assert ok


def test_c04_speed_invariance(posterior, report):
    r = posterior[1][("tanh_speed", 1.0)]
    ok = _stationary_ok(r)
    report(4, ok, f"b(theta) = 1e-3 (1 + 0.5 tanh theta): {_fmt(r)}")
    assert ok


def test_c05_online_matches_batch(posterior, report):
    r = posterior[0].log.rows("online_vs_batch")[0]
    ok = r["n_dt_b"] == pytest.approx(1e-3) and r["z"] < 3
    report(5, ok, f"N dt b = {r['n_dt_b']:.0e}, |online - batch| = {r['z']:.2f} SE (<3)")
    assert ok


def _central(f, v, h=1e-5):
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (f(v + e) - f(v - e)) / (2 * h)
    return g


def _rel(a, n):
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(n), 1e-6)))


def test_c06_gradient_oracles(report):
    rng = np.random.default_rng(2024)
    worst_prior = 0.0
    specs = [WTA_PRIOR, RBM_BIMODAL_PRIOR, PriorSpec.gaussian(-1.0, 0.4),
             PriorSpec.mixture(0.3, -0.5, 0.2, 1.5, 0.6)]
    for spec in specs:
        for theta in rng.uniform(-2, 3, 10):
            num = _central(lambda t: float(log_prior_density(t[0], spec)), np.array([theta]))
            worst_prior = max(worst_prior, _rel(np.array([log_prior_grad(theta, spec)]), num))
    nv, nh = 6, 3
    data = (rng.random((8, nv)) < 0.5).astype(float)
    worst_rbm = 0.0
    for _ in range(10):
        v = rng.normal(0, 1, nv * nh + nh + nv)
        num = _central(lambda u: exact_log_likelihood(RbmParams.from_flat(u, nv, nh), data), v)
        ana = exact_log_likelihood_grad(RbmParams.from_flat(v, nv, nh), data).flat()
        worst_rbm = max(worst_rbm, _rel(ana, num))
    p = RbmParams.from_flat(rng.normal(0, 0.5, nv * nh + nh + nv), nv, nh)
    batch = data[rng.integers(0, len(data), 100_000)]
    dw, dbh, dbv = cd_gradient(p, batch, 5, rng)
    cd = np.concatenate([dw.ravel(), dbh, dbv])
    exact = exact_log_likelihood_grad(p, batch).flat()
    cos = float(cd @ exact / np.linalg.norm(cd) / np.linalg.norm(exact))
    ok = worst_prior < 1e-4 and worst_rbm < 1e-4 and cos > 0.5
    report(6, ok, f"prior grad rel err {worst_prior:.1e}, RBM grad rel err {worst_rbm:.1e} (<1e-4); "
                  f"CD-5 cosine {cos:.3f} (>0.5)")
    assert ok


def test_c07_rbm_generalization(rbm_runs, report):
    (u, tu), (b, tb) = rbm_runs["uniform"], rbm_runs["bimodal"]
    ok = u["relative_drop"] >= 0.05 and b["relative_drop"] <= 0.05 and tu < 300 and tb < 300
    report(7, ok, f"uniform prior: drop {u['relative_drop']:.1%} from peak (>=5%); bimodal prior: "
                  f"end within {b['relative_drop']:.1%} of peak (<=5%); runtimes {tu:.0f} s, {tb:.0f} s (<300)")
    assert ok


def test_c08_rate_normalization(report):
    cfg = WtaConfig(b=1e-3, noise_interval_ms=10.0)
    rng = np.random.default_rng(8)
    net = build_network(64, [10, 10], rng, cfg, lateral=True)
    rates = rng.uniform(1, 50, size=(400, 64))
    sched = InputSchedule.from_segments(np.full(400, 250.0), rates)
    res = simulate(net, sched, 100_000, cfg, rng)
    ok = res.max_rate_error < 1e-9
    report(8, ok, f"max |sum rho - rho_net| / rho_net over 100 s = {res.max_rate_error:.1e} (<1e-9)")
    assert ok


def test_c09_fixed_point(tmp_path_factory, report):
    exp, _ = _run("wta-fixed-point", tmp_path_factory.mktemp("fp"))
    s = exp.summary
    gaps = exp.log.column("fixed_point", "rel_gap")
    ok = s["n_stable"] > 0 and max(gaps) < 0.2
    report(9, ok, f"{s['n_stable']} stable synapses, max |<x> - alpha e^w| / alpha e^w = "
                  f"{max(gaps):.3f} (<0.2), median {s['median_rel_gap']:.3f}")
    assert ok


def test_c10_survival_statistics(tmp_path_factory, report):
    exp, _ = _run("survival-stats", tmp_path_factory.mktemp("survival"))
    runs = {r["b_per_s"]: r for r in exp.summary["runs"]}
    fast, slow = runs[1e-4], runs[1e-6]
    ratio = exp.summary.get("time_scale_ratio", float("nan"))
    ok = fast["r2"] >= 0.9 and fast["fit_decades"] >= 1.0 and ratio >= 10
    report(10, ok, f"b=1e-4: r2 {fast['r2']:.3f} (>=0.9) over {fast['fit_decades']:.2f} decades (>=1), "
                   f"exponent {fast['exponent']:.2f}; median lifetime ratio b=1e-6 vs 1e-4 = {ratio:.1f} (>=10)"
                   f"{' (lower bound)' if slow['median_is_lower_bound'] else ''}")
    assert ok


def test_c11_adaptation(tmp_path_factory, report):
    exp, _ = _run("wta-adapt", tmp_path_factory.mktemp("adapt"))
    s = exp.summary
    n_test = exp.params["task"]["probes_per_type"]  # class-2 plus blank probes in the test half
    chance_hi = 0.5 + 1.96 * math.sqrt(0.25 / n_test)
    counts = exp.log.column("active_synapses", "count")
    ok = (s["pre_switch_accuracy"] <= chance_hi and s["max_phase2_accuracy"] >= 0.8
          and max(counts) < s["sparsity_bound"])
    report(11, ok, f"class-2 readout {s['pre_switch_accuracy']:.2f} before switch (chance band <= "
                   f"{chance_hi:.2f}), max {s['max_phase2_accuracy']:.2f} in phase 2 (>=0.8); "
                   f"active synapses <= {max(counts)} (bound {s['sparsity_bound']:.0f})")
    assert ok


def test_c12_lesion_compensation(tmp_path_factory, report):
    exp, secs = _run("wta-lesion", tmp_path_factory.mktemp("lesion"))
    stages = exp.summary["lesions"]
    parts, ok = [], sum(secs) < 900
    for st in stages:
        good = st["drop"] >= 0.15 and st["recovered_accuracy"] >= 0.75 * st["pre_accuracy"]
        ok = ok and good
        parts.append(f"lesion {st['lesion']}: {st['pre_accuracy']:.2f} -> {st['post_lesion_accuracy']:.2f} "
                     f"(drop >= 0.15), recovered {st['recovered_accuracy']:.2f} (>= 0.75 x pre)")
    report(12, ok, "; ".join(parts) + f"; runtime {sum(secs):.0f} s (<900)")
    assert ok


def _csvs(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f.endswith(".csv")}


def test_c13_determinism(tmp_path_factory, report):
    bad = []
    for name in sorted(EXPERIMENTS):
        a, b = tmp_path_factory.mktemp(name), tmp_path_factory.mktemp(name)
        _run(name, a, SMALL[name], seed=3)
        _run(name, b, SMALL[name], seed=3)
        ca, cb = _csvs(a), _csvs(b)
        if not ca or ca != cb:
            bad.append(name)
    ok = not bad
    report(13, ok, f"{len(EXPERIMENTS)} experiments rerun with the same config and seed; "
                   f"byte-identical metric CSVs" + (f" except {bad}" if bad else ""))
    assert ok
