"""Acceptance criteria AC1-AC12.

Each test records a one-line verdict in ``RESULTS``; the terminal summary
hook in ``conftest.py`` prints them after the run. The module can also be
run directly (``python3 tests/test_acceptance.py``).
"""

from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from schedlab.analysis import (
    LengthMix,
    amin_two_point_bound,
    cr_amax_lowerbound_construction,
    cr_amin_closed_form,
    cr_lg,
    cr_two_point,
    estimate_cr,
    fluid_check,
    interior_search,
    merge_periods,
    simulate_periods,
    two_point_workload,
    worstcase_two_point_search,
)
from schedlab.distributions import GeometricTruncated, LinWeightedGeometric, sample_workload
from schedlab.engine import (
    check_corresponding_order,
    check_delayed,
    coupled_run,
    latency_scaling_holds,
    run_simulation,
)
from schedlab.model import Request, ScheduleTrace, SimConfig
from schedlab.policies import POLICY_NAMES, PolicyKind
from schedlab.spectral import (
    b_inverse_closed_form,
    b_matrix,
    fit_log_curve,
    harmonic,
    rayleigh_max,
    simplex_max,
    trace_binv_a,
)
from schedlab.workload import Binned, RawTraceRow, Rough, assign_intervals, synth_workload

RESULTS: dict[str, str] = {}


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[name] = line
    print(line)
    assert ok, line


def example1():
    return [Request(i, 1, 1, 1, 4) for i in range(5)], 10


# --------------------------------------------------------------------------


def test_ac01_worked_example():
    w, M = example1()
    hsf = {run_simulation(SimConfig(M, 1, seed), w, "hsf").tel for seed in range(100)}
    amax = {run_simulation(SimConfig(M, 1, seed), w, "amax").tel for seed in range(100)}
    rep = estimate_cr("amax", w, M, 30, 0)
    ok = hsf == {5} and amax == {9} and rep.mean_ratio == 1.8 and rep.ci95 == 0.0
    verdict("AC1", ok, f"TEL(H-SF)={sorted(hsf)} TEL(A_max)={sorted(amax)} over 100 seeds, ratio={rep.mean_ratio}")


def test_ac02_trace_identity():
    worst_trace = max(abs(trace_binv_a(u) - harmonic(u)) for u in range(1, 201))
    worst_inv = max(np.abs(b_inverse_closed_form(u) - np.linalg.inv(b_matrix(u))).max() for u in range(1, 51))
    ok = worst_trace < 1e-9 and worst_inv < 1e-10
    verdict("AC2", ok, f"max |tr - H_u| (u<=200) = {worst_trace:.2e}; max |closed - inv| (u<=50) = {worst_inv:.2e}")


def test_ac03_rayleigh_vs_closed_form():
    g = np.random.default_rng(2024)
    dominated = True
    worst_gap = 0.0
    for u in range(2, 31):
        r = rayleigh_max(u)
        mixes = g.dirichlet(np.ones(u), size=1000)
        vals = np.array([cr_amin_closed_form(0, 1, u, x) for x in mixes])
        dominated &= bool((vals <= r.rho + 1e-12).all())
        if r.nonnegative:
            best, _ = simplex_max(u)
            worst_gap = max(worst_gap, abs(best - r.rho))
    rho2 = rayleigh_max(2).rho
    ok = dominated and worst_gap < 1e-6 and abs(rho2 - 1.25) < 1e-9
    verdict("AC3", ok, f"rho dominates 29x1000 mixes={dominated}; max |constrained - rho|={worst_gap:.2e}; rho(2)={rho2:.12f}")


def test_ac04_log_fit():
    fit = fit_log_curve(2, 300)
    ok = fit.r2 > 0.999 and abs(fit.c1 / 0.2555 - 1) <= 0.30
    verdict("AC4", ok, f"c1={fit.c1:.6f} c2={fit.c2:.6f} c3={fit.c3:.6f} R2={fit.r2:.7f}")


AC5_CASES = [(1, 10), (1, 4), (1, 2), (9, 10)]


@pytest.mark.slow
def test_ac05_two_point_bound():
    n, M, reps = 10_000, 500, 30
    lines, ok = [], True
    for low, high in AC5_CASES:
        alpha = low / high
        bound = amin_two_point_bound(alpha)
        for t in sorted({0.5, round(1 / alpha, 6), 4.0}):
            n_long = int(round(n / (1 + t)))
            w = two_point_workload(n, low, high, n_long, 0, np.random.default_rng(5))
            rep = estimate_cr("amin", w, M, reps, 11)
            pred = cr_two_point(alpha, (n - n_long) / n_long)
            under = rep.mean_ratio <= bound * 1.05
            match = abs(rep.mean_ratio / pred - 1) <= 0.05
            ok &= under and match
            lines.append(f"a={alpha:g},t={t:g}: sim={rep.mean_ratio:.3f} pred={pred:.3f} bound={bound:.3f}"
                         f"{'' if under and match else ' x'}")
    verdict("AC5", ok, "; ".join(lines))


def test_ac06_amax_construction():
    w, pred = cr_amax_lowerbound_construction(1, 4, 50, 100)
    rep = estimate_cr("amax", w, 4, 30, 0, s=0)
    ok = abs(rep.mean_ratio / pred - 1) <= 0.10
    verdict("AC6", ok, f"sim={rep.mean_ratio:.4f} +/- {rep.ci95:.4f} formula={pred:.4f}")


def _first_period_fraction(M, reps, seed):
    n = 20 * M
    w = two_point_workload(n, 1, 2, n // 2, 0, np.random.default_rng(seed))
    pooled = merge_periods(simulate_periods(w, M, reps, seed))
    rep = fluid_check(pooled, 0, LengthMix.two_point(1, 2, 1.0), n, runs=reps)
    return rep.fraction[(1, 2)][0]


def test_ac07_fluid_limit():
    f1 = _first_period_fraction(1000, 50, 1)
    f4 = _first_period_fraction(4000, 50, 2)
    ok = abs(f1 / 0.5 - 1) <= 0.10 and abs(f4 / 0.5 - 1) <= 0.05
    verdict("AC7", ok, f"c12/b12 at M=1000: {f1:.4f}, at M=4000: {f4:.4f} (target 0.5)")


def test_ac08_lg_closed_form():
    q = np.linspace(0, 1, 100_001)[:-1]
    v = np.array([cr_lg(x) for x in q])
    mono = bool((np.diff(v) >= 0).all())
    capped = bool(v.max() <= 14 / 9 + 1e-12)
    at0 = cr_lg(0.0) == 1.0
    sims, ok_sim = [], True
    for qq in (0.3, 0.6):
        w = synth_workload(20_000, LinWeightedGeometric(1 - qq, 200), 0, 5, Rough(1, 200))
        rep = estimate_cr("amin", w, 1000, 30, 3)
        good = abs(rep.mean_ratio / cr_lg(qq) - 1) <= 0.02
        ok_sim &= good
        sims.append(f"q={qq}: sim={rep.mean_ratio:.4f} formula={cr_lg(qq):.4f}")
    ok = mono and capped and at0 and ok_sim
    verdict("AC8", ok, f"monotone={mono} <=14/9={capped} cr_lg(0)=1:{at0}; " + "; ".join(sims))


def test_ac09_structural_checkers():
    I1 = ScheduleTrace([frozenset({1, 3}), frozenset(), frozenset({2}), frozenset({4})])
    I2 = ScheduleTrace([frozenset({3}), frozenset({1, 2}), frozenset(), frozenset({4})])
    I3 = ScheduleTrace([frozenset({1, 2, 3}), frozenset(), frozenset({4})])
    worked = (
        check_corresponding_order(I1, I2)
        and check_corresponding_order(I1, I3)
        and check_corresponding_order(I2, I3)
        and check_delayed(I3, I1)
        and check_delayed(I3, I2)
        and not check_delayed(I1, I2)
        and not check_delayed(I2, I1)
    )
    g = np.random.default_rng(9)
    M1, n, runs = 200, 40, 0
    order_bad = delay_bad = raw_bad = slack_bad = 0
    dist = GeometricTruncated(0.2, 20)
    for beta in (1.0, 0.9, 0.75, 0.5, 0.25):
        M2 = int(round(beta * M1))
        for _ in range(100):
            o = sample_workload(dist, n, g)
            w = [Request(i, 0, int(x), 1, 20) for i, x in enumerate(o)]
            res = coupled_run(g.permutation(n).tolist(), w, M1, M2)
            raw, slack = latency_scaling_holds(res.tel1, res.tel2, M1, M2, 8)
            raw_bad += not raw
            slack_bad += not slack
            order_bad += not check_corresponding_order(res.trace1, res.trace2)
            delay_bad += not check_delayed(res.trace1, res.trace2)
            runs += 1
    ok = worked and order_bad == 0 and delay_bad == 0 and slack_bad <= 0.05 * runs
    verdict("AC9", ok, f"worked-trace verdicts={worked}; {runs} coupled runs: order={order_bad} delay={delay_bad} "
                       f"raw={raw_bad} slack={slack_bad} violations")


def test_ac10_safety():
    audits = cancels = repeat = 0
    runs = 0
    for seed in range(100):
        g = np.random.default_rng(seed)
        s = int(g.integers(0, 3))
        n = int(g.integers(20, 80))
        lo, hi = 1, int(g.integers(2, 12))
        M = s + hi + int(g.integers(0, 60))
        general = [Request(i, s, int(x), lo, hi) for i, x in enumerate(g.integers(lo, hi + 1, n))]
        longs = g.random(n) < 0.4
        two_point = [Request(i, s, hi if b else lo, lo, hi) for i, b in enumerate(longs)]
        binned = assign_intervals([RawTraceRow(s, int(x)) for x in g.integers(1, 30, n)], Binned(10), s)
        for name in POLICY_NAMES:
            if name == "aell":
                w, kind = two_point, PolicyKind("aell", strict=True)
            elif name == "amin-hetero":
                w, kind = binned, PolicyKind(name, strict=True)
            else:
                w, kind = general, PolicyKind(name)
            m = M if name != "amin-hetero" else s + 30 + int(g.integers(0, 60))
            r = run_simulation(SimConfig(m, s, seed), w, kind)
            runs += 1
            audits += len(r.audit)
            if name in ("hsf", "amax", "arandom"):
                cancels += len(r.cancellations)
            if name == "aell":
                ids = [c[0] for c in r.cancellations]
                repeat += len(ids) - len(set(ids))
    ok = audits == 0 and cancels == 0 and repeat == 0
    verdict("AC10", ok, f"{runs} runs: audit violations={audits}, cancellations by non-evicting policies={cancels}, "
                        f"repeat promote-l evictions={repeat}")


def test_ac11_worst_case_at_extremes():
    lines, ok = [], True
    for name in ("amax", "amin"):
        tp = worstcase_two_point_search(name, 12, 1, 4, 12, 100, 17)
        inner = interior_search(name, 12, 1, 4, 12, 200, 100, 23)
        se = math.hypot(tp.se, inner.se)
        good = inner.ratio <= tp.ratio + 2 * se
        ok &= good
        lines.append(f"{name}: two-point max={tp.ratio:.4f} interior max={inner.ratio:.4f} 2se={2 * se:.4f}")
    verdict("AC11", ok, "; ".join(lines))


def test_ac12_desk_scale_substitutes():
    # Large-scale ratios are suprema as M grows without bound, so they are
    # not simulated. This criterion checks that every desk-scale substitute
    # (AC5-AC8 and AC11) is implemented here; each reports its own verdict.
    subs = {
        "AC5": "test_ac05_two_point_bound",
        "AC6": "test_ac06_amax_construction",
        "AC7": "test_ac07_fluid_limit",
        "AC8": "test_ac08_lg_closed_form",
        "AC11": "test_ac11_worst_case_at_extremes",
    }
    ok = all(callable(globals().get(fn)) for fn in subs.values())
    seen = [f"{k}={RESULTS[k].split()[1].rstrip(':')}" for k in subs if k in RESULTS]
    verdict("AC12", ok, "substitutes implemented for AC5-AC8, AC11" + (f"; this run: {', '.join(seen)}" if seen else ""))


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_ac")]
    for fn in tests:
        try:
            fn()
        except AssertionError:
            pass
