"""Acceptance criteria with pinned tolerances.

Each check prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the pytest terminal summary.  Run standalone with
``python3 tests/test_acceptance.py`` to print only the criterion lines.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).resolve().parent))

from oracles import naive_covariance, naive_fs, naive_scores, normal_cdf, random_dataset  # noqa: E402
from progfs.groupseq import GsDesign, simulate_group_sequential  # noqa: E402
from progfs.mvn import symmetric_rectangle_probability  # noqa: E402
from progfs.profs import ExaminationSchedule, profs_statistics, profs_test, quantile_schedule  # noqa: E402
from progfs.simulation import (  # noqa: E402
    CopulaSpec,
    PiecewiseHazard,
    constant_effect_scenario,
    estimate_operating_characteristics,
    generate_trial,
    sample_copula_pairs,
    short_term_scenario,
)
from progfs.winstat import TrialDataset, fs_statistic  # noqa: E402

RESULTS: list[str] = []

pytestmark = pytest.mark.acceptance


def report(number: int, ok: bool, text: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


def within(value: float, target: float, tol: float) -> bool:
    return abs(value - target) <= tol


# 1 ---------------------------------------------------------------------------

def check_type1_error() -> bool:
    cfg = constant_effect_scenario(0.0, 0.0, 0.0, 1000.0, replicates=1000)
    started = time.perf_counter()
    tab = estimate_operating_characteristics(cfg, "profs4")
    elapsed = time.perf_counter() - started
    rate = tab.rate("profs4")
    ok = 0.032 <= rate <= 0.069
    return report(
        1, ok,
        f"null W=0 S=1000 ProFS-4, 1000 replicates: rejection {100 * rate:.2f}% "
        f"(band [3.2%, 6.9%]); measured {elapsed:.1f}s on 1 core",
    )


# 2 ---------------------------------------------------------------------------

def check_power_ordering() -> bool:
    hosp = estimate_operating_characteristics(constant_effect_scenario(0.0, 0.3, 0.0, 1500.0), "profs2,profs4")
    death = estimate_operating_characteristics(constant_effect_scenario(0.3, 0.0, 0.0, 500.0), "profs2,profs10")
    p2, p4 = 100 * hosp.rate("profs2"), 100 * hosp.rate("profs4")
    d2, d10 = 100 * death.rate("profs2"), 100 * death.rate("profs10")
    parts = {
        "ProFS-4 58.30±3.5": within(p4, 58.30, 3.5),
        "ProFS-2 31.50±3.5": within(p2, 31.50, 3.5),
        "ProFS-4 - ProFS-2 >= 15": p4 - p2 >= 15,
        "aD=0.3 S=500 ProFS-2 79.55±3.5": within(d2, 79.55, 3.5),
        "aD=0.3 S=500 ProFS-10 70.55±3.5": within(d10, 70.55, 3.5),
    }
    failed = [k for k, v in parts.items() if not v]
    return report(
        2, not failed,
        f"2000 replicates: aH=0.3 S=1500 ProFS-4 {p4:.2f}%, ProFS-2 {p2:.2f}% (diff {p4 - p2:.2f}); "
        f"aD=0.3 S=500 ProFS-2 {d2:.2f}%, ProFS-10 {d10:.2f}%"
        + (f"; failed: {', '.join(failed)}" if failed else ""),
    )


# 3 ---------------------------------------------------------------------------

def nested_schedule_pvalues(datasets: int = 500):
    """Per dataset: p(500,1000), p(250,...,1000), their MVN errors and the fixed-threshold p."""
    cfg = constant_effect_scenario(0.0, 0.0, 0.0, 1000.0)
    small_sched = ExaminationSchedule((500.0, 1000.0), 1000.0)
    big_sched = quantile_schedule(1000.0, 4)
    rows = []
    for rep in range(datasets):
        data = generate_trial(cfg, rep)
        small = profs_test(data, small_sched, seed=rep)
        big = profs_test(data, big_sched, seed=rep)
        fixed = symmetric_rectangle_probability(big.omega, small.z_max, seed=rep)
        rows.append(
            (small.p_value, big.p_value, small.mvn.error_estimate, big.mvn.error_estimate,
             1.0 - fixed.value, fixed.error_estimate)
        )
    return np.array(rows)


def check_nested_penalty(rows: np.ndarray | None = None) -> bool:
    if rows is None:
        rows = nested_schedule_pvalues()
    p_small, p_big, e_small, e_big, p_fixed, e_fixed = rows.T
    violations = p_big < p_small - (e_small + e_big)
    fixed_ok = p_fixed >= p_small - (e_small + e_fixed)
    worst = float(np.max(p_small - p_big))
    report(
        3, not violations.any(),
        f"{len(rows)} null datasets: p(250,500,750,1000) >= p(500,1000) - errors held on "
        f"{int((~violations).sum())}/{len(rows)} (largest drop {worst:.3f}); "
        f"at the smaller schedule's observed max the penalty holds on {int(fixed_ok.sum())}/{len(rows)}",
    )
    return bool(not violations.any()), bool(fixed_ok.all())


# 4 ---------------------------------------------------------------------------

def _plain_mc(omega, z, draws, seed):
    rng = np.random.default_rng(seed)
    root = np.linalg.cholesky(omega)
    hits, done = 0, 0
    while done < draws:
        n = min(1_000_000, draws - done)
        x = rng.standard_normal((n, omega.shape[0])) @ root.T
        hits += int((np.abs(x) <= z).all(axis=1).sum())
        done += n
    est = hits / draws
    return est, math.sqrt(est * (1 - est) / draws)


def check_mvn_accuracy() -> bool:
    started = time.perf_counter()
    uni = max(
        abs(symmetric_rectangle_probability(np.eye(1), z).value - (2 * normal_cdf(z) - 1))
        for z in (0.5, 1.0, 1.96, 3.0)
    )
    ident = max(
        abs(symmetric_rectangle_probability(np.eye(p), z, seed=p).value - (2 * normal_cdf(z) - 1) ** p)
        for p in (2, 4, 10)
        for z in (0.5, 1.0, 1.96, 3.0)
    )
    omega = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
    est = symmetric_rectangle_probability(omega, 2.0, seed=1)
    mc, se = _plain_mc(omega, 2.0, 10_000_000, seed=99)
    combined = math.hypot(se, est.error_estimate / 3)
    gap = abs(est.value - mc)
    ok = uni <= 1e-6 and ident <= 1e-5 and gap <= 3 * combined
    return report(
        4, ok,
        f"p=1 max error {uni:.1e} (<=1e-6); identity p in {{2,4,10}} max error {ident:.1e} (<=1e-5); "
        f"rho=0.5 p=4 z=2: {est.value:.6f} vs MC {mc:.6f}, gap {gap / combined:.2f} combined SE (<=3); "
        f"{time.perf_counter() - started:.1f}s",
    )


# 5 ---------------------------------------------------------------------------

def _rel_close(a: float, b: float, rel: float = 1e-12) -> bool:
    return abs(a - b) <= rel * abs(b)


def check_oracle_equivalence(datasets: int = 1000) -> bool:
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(datasets):
        arm, times, cens = random_dataset(rng, n_max=15, layers_max=3, tie_grid=bool(rng.integers(2)))
        data = TrialDataset(arm, times, cens)
        h_full = float(times.max()) + 1.0
        horizons = sorted(rng.uniform(1.0, h_full, size=2).tolist()) + [h_full]
        fs = fs_statistic(data, h_full)
        scores, pairs = naive_scores(times, cens, h_full)
        z_ref, var_ref = naive_fs(times, cens, arm, h_full)
        z_vec, sigma = profs_statistics(data, horizons)
        z_vec_ref, cov_ref = naive_covariance(times, cens, arm, horizons)
        ok = (
            fs.score_table.scores.tolist() == scores
            and fs.score_table.pair_count == pairs
            and fs.z == z_ref
            and _rel_close(fs.variance, var_ref)
            and np.array_equal(z_vec, z_vec_ref)
            and all(_rel_close(a, b) for a, b in zip(sigma.ravel(), cov_ref.ravel()))
        )
        bad += not ok
    return report(
        5, bad == 0,
        f"{datasets} random datasets (N<=15, 1-3 layers, mixed censoring): {datasets - bad} match the "
        "brute-force oracle (exact scores, variances to 1e-12 relative)",
    )


# 6 ---------------------------------------------------------------------------

def check_copula() -> bool:
    death = PiecewiseHazard((300.0, 700.0), (0.0008, 0.0003, 0.0008))
    hosp = PiecewiseHazard((150.0,), (0.0013, 0.0022))
    notes, ok = [], True
    for beta, target in ((1.0, 0.0), (2.0, 0.5)):
        spec = CopulaSpec(beta, death, hosp)
        d, h = sample_copula_pairs(spec, np.random.default_rng(int(10 * beta)), 100_000)
        tau = stats.kendalltau(d, h).statistic
        ks_d = stats.kstest(d, lambda t: 1 - death.survival(t)).statistic
        ks_h = stats.kstest(h, lambda t: 1 - hosp.survival(t)).statistic
        ok &= abs(tau - target) <= 0.01 and ks_d <= 0.01 and ks_h <= 0.01
        notes.append(f"beta={beta:g}: tau {tau:.4f} (target {target}), KS {ks_d:.4f}/{ks_h:.4f}")
    return report(6, ok, "1e5 pairs, piecewise marginals; " + "; ".join(notes) + " (tol 0.01)")


# 7 ---------------------------------------------------------------------------

def check_schedules() -> bool:
    s = 1704.0
    cases = [
        (quantile_schedule(1000, 4), (250, 500, 750, 1000)),
        (quantile_schedule(s, 4, 0.58 * s), tuple(np.array([0.58, 0.72, 0.86, 1.0]) * s)),
        (quantile_schedule(1000, 4, 300), (300, 300 + 700 / 3, 300 + 1400 / 3, 1000)),
        (quantile_schedule(1000, 2), (500, 1000)),
        (quantile_schedule(1500, 10), tuple(150.0 * k for k in range(1, 11))),
        (quantile_schedule(1000, 1, 500), (1000,)),
        (quantile_schedule(1000, 5, 200), (200, 400, 600, 800, 1000)),
    ]
    worst = 0.0
    for sched, expected in cases:
        got, exp = np.array(sched.times), np.array(expected, dtype=float)
        if got.shape != exp.shape:
            worst = math.inf
            continue
        worst = max(worst, float(np.max(np.abs(got - exp) / exp)))
    return report(7, worst <= 1e-9, f"{len(cases)} schedule cases incl. S=1704, S_inf=0.58S; max relative error {worst:.1e} (<=1e-9)")


# 8 ---------------------------------------------------------------------------

def check_group_sequential(trials: int = 1000) -> bool:
    design = GsDesign(2, 250, (0.01, 0.05), quantile_schedule(1000.0, 2), draws=500, seed=2024)
    null = constant_effect_scenario(0.0, 0.0, 0.0, 1000.0)
    started = time.perf_counter()
    first = simulate_group_sequential(design, null, trials)
    elapsed = time.perf_counter() - started
    again = simulate_group_sequential(design, null, trials)
    lo, hi = (int(x) for x in stats.binom.ppf([0.005, 0.995], trials, 0.05))
    in_band = lo <= first.rejections <= hi
    same = np.array_equal(first.boundaries, again.boundaries, equal_nan=True) and first.rejections == again.rejections
    return report(
        8, in_band and same,
        f"Q=2 tau=(0.01,0.05) V=500 l=250 p=2, {trials} null trials: {first.rejections} rejections "
        f"({100 * first.rate:.1f}%, stops by look {first.stops_by_look}); 99% band [{lo}, {hi}]; "
        f"repeat run identical: {same}; {elapsed:.1f}s per run",
    )


# 9 ---------------------------------------------------------------------------

def check_short_term() -> bool:
    power = {}
    for s in (300.0, 800.0, 1500.0):
        tab = estimate_operating_characteristics(short_term_scenario("hosp", 0.0, s, replicates=500), "fs,profs4")
        power[s] = (tab.rate("fs"), tab.rate("profs4"))
    dominates = all(p4 > fs for fs, p4 in power.values())
    fades = power[1500.0][0] < power[300.0][0]
    text = ", ".join(f"S={s:g}: FS {100 * fs:.1f}% / ProFS-4 {100 * p4:.1f}%" for s, (fs, p4) in power.items())
    return report(9, dominates and fades, f"short-term hosp. W=0, 500 replicates: {text}")


# pytest entry points -----------------------------------------------------------

XFAIL_NESTED = (
    "Adding examinations can raise the observed maximum, which lowers the p-value; "
    "the non-decrease only holds at a fixed threshold (checked separately)"
)


def test_criterion_1_type1_error():
    assert check_type1_error()


def test_criterion_2_power_ordering():
    assert check_power_ordering()


@pytest.fixture(scope="module")
def nested_rows():
    return nested_schedule_pvalues()


@pytest.mark.xfail(strict=True, reason=XFAIL_NESTED)
def test_criterion_3_nested_schedule_pvalues(nested_rows):
    literal, _ = check_nested_penalty(nested_rows)
    assert literal


def test_criterion_3_fixed_threshold_penalty(nested_rows):
    p_small, _, e_small, _, p_fixed, e_fixed = nested_rows.T
    assert np.all(p_fixed >= p_small - (e_small + e_fixed))


def test_criterion_4_mvn_accuracy():
    assert check_mvn_accuracy()


def test_criterion_5_oracle_equivalence():
    assert check_oracle_equivalence()


def test_criterion_6_copula():
    assert check_copula()


def test_criterion_7_schedules():
    assert check_schedules()


def test_criterion_8_group_sequential():
    assert check_group_sequential()


def test_criterion_9_short_term():
    assert check_short_term()


if __name__ == "__main__":
    check_type1_error()
    check_power_ordering()
    check_nested_penalty()
    check_mvn_accuracy()
    check_oracle_equivalence()
    check_copula()
    check_schedules()
    check_group_sequential()
    check_short_term()
    print(f"{sum(r.startswith('[PASS]') for r in RESULTS)}/{len(RESULTS)} criteria passed")
