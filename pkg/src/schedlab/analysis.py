"""Competitive-ratio estimation, closed-form ratios and period statistics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import run_simulation
from .model import ModelError, Request, SimConfig
from .policies import PolicyKind

Z95 = 1.959963984540054


@dataclass
class CRReport:
    policy: str
    mean_ratio: float
    ci95: float
    reps: int
    seed: int
    n: int = 0
    M: int = 0
    s: int = 0
    mode: str = ""
    benchmark_tel: int = 0
    tels: list[int] = field(default_factory=list, repr=False)

    @property
    def se(self) -> float:
        return self.ci95 / Z95


@dataclass
class LengthMix:
    """Proportions ``x_l .. x_u`` of each output length."""

    low: int
    proportions: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.proportions, dtype=float)
        if self.low < 1 or x.ndim != 1 or not len(x):
            raise ModelError("mix needs low >= 1 and a nonempty proportion vector")
        if (x < 0).any():
            raise ModelError("mix proportions must be nonnegative")
        total = x.sum()
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ModelError(f"mix proportions sum to {total}, not 1")
        self.proportions = x

    @property
    def high(self) -> int:
        return self.low + len(self.proportions) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.arange(self.low, self.high + 1)

    @property
    def t(self) -> float:
        """``x_l / x_u``; infinite when there are no long jobs."""
        xl, xu = self.proportions[0], self.proportions[-1]
        return math.inf if xu == 0 else float(xl / xu)

    @classmethod
    def two_point(cls, low: int, high: int, t: float) -> "LengthMix":
        x = np.zeros(high - low + 1)
        if high == low:
            x[0] = 1.0
        else:
            x[0], x[-1] = t / (1 + t), 1 / (1 + t)
        return cls(low, x)

    @classmethod
    def from_weights(cls, low: int, weights: Sequence[float]) -> "LengthMix":
        w = np.asarray(weights, dtype=float)
        return cls(low, w / w.sum())


# ---------------------------------------------------------------------------
# Monte-Carlo estimation


def _rep(args):
    config, workload, policy, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    return run_simulation(config, workload, policy, rng=rng).tel


def benchmark_tel(workload: Sequence[Request], M: int, s: int | None = None) -> int:
    s = workload[0].prompt_size if s is None else s
    return run_simulation(SimConfig(M, s), workload, PolicyKind("hsf")).tel


def run_tels(
    policy: PolicyKind | str,
    workload: Sequence[Request],
    M: int,
    reps: int,
    seed: int,
    s: int | None = None,
    jobs: int = 1,
) -> np.ndarray:
    """TELs of ``reps`` independent runs, in replication order."""
    if reps < 1:
        raise ModelError("reps must be >= 1")
    if isinstance(policy, str):
        policy = PolicyKind(policy)
    s = (workload[0].prompt_size if workload else 0) if s is None else s
    config = SimConfig(M, s, seed)
    tasks = [(config, workload, policy, ss) for ss in np.random.SeedSequence(seed).spawn(reps)]
    if jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            tels = list(pool.map(_rep, tasks))
    else:
        tels = [_rep(t) for t in tasks]
    return np.array(tels, dtype=np.int64)


def estimate_cr(
    policy: PolicyKind | str,
    workload: Sequence[Request],
    M: int,
    reps: int,
    seed: int,
    s: int | None = None,
    jobs: int = 1,
    mode: str = "",
) -> CRReport:
    """Mean TEL over ``reps`` seeded runs divided by the hindsight TEL.

    Numerator and denominator use the same workload. The interval is a
    normal-approximation 95% halfwidth on the mean ratio.
    """
    if isinstance(policy, str):
        policy = PolicyKind(policy)
    if not workload:
        raise ModelError("empty workload has no competitive ratio")
    s = workload[0].prompt_size if s is None else s
    tels = run_tels(policy, workload, M, reps, seed, s, jobs)
    base = benchmark_tel(workload, M, s)
    ci = Z95 * tels.std(ddof=1) / math.sqrt(reps) / base if reps > 1 else 0.0
    return CRReport(
        policy=policy.name,
        mean_ratio=float(tels.mean() / base),
        ci95=float(ci),
        reps=reps,
        seed=seed,
        n=len(workload),
        M=M,
        s=s,
        mode=mode,
        benchmark_tel=int(base),
        tels=tels.tolist(),
    )


def two_point_workload(
    n: int, low: int, high: int, n_long: int, s: int = 0, rng: np.random.Generator | None = None
) -> list[Request]:
    """``n_long`` requests of length ``high``, the rest of length ``low``.

    With an RNG the positions of the long requests are shuffled; this only
    matters for order-sensitive policies such as promote-l.
    """
    o = np.full(n, low, dtype=np.int64)
    o[n - n_long :] = high
    if rng is not None:
        rng.shuffle(o)
    return [Request(i, s, int(x), low, high) for i, x in enumerate(o)]


@dataclass
class WorstCase:
    lengths: list[int]
    ratio: float
    se: float
    table: list[tuple[int, float, float]]  # (long count, ratio, standard error)


def worstcase_two_point_search(
    policy: PolicyKind | str,
    n: int,
    low: int,
    high: int,
    M: int,
    budget: int,
    seed: int,
    s: int = 0,
) -> WorstCase:
    """Sweep the number of long requests 0..n; ``budget`` runs per point."""
    rng = np.random.default_rng(seed)
    table = []
    best = None
    for k in range(n + 1):
        w = two_point_workload(n, low, high, k, s, rng)
        rep = estimate_cr(policy, w, M, budget, int(rng.integers(2**31)), s)
        table.append((k, rep.mean_ratio, rep.se))
        if best is None or rep.mean_ratio > best[1].mean_ratio:
            best = (w, rep)
    w, rep = best
    return WorstCase([r.true_output for r in w], rep.mean_ratio, rep.se, table)


def interior_search(
    policy: PolicyKind | str,
    n: int,
    low: int,
    high: int,
    M: int,
    samples: int,
    budget: int,
    seed: int,
    s: int = 0,
) -> WorstCase:
    """Random length vectors over ``{low..high}^n`` that are not two-point.

    Returns the largest estimated ratio seen; ``table`` rows are
    (sample index, ratio, standard error).
    """
    rng = np.random.default_rng(seed)
    table = []
    best = None
    while len(table) < samples:
        o = rng.integers(low, high + 1, size=n)
        if np.isin(o, (low, high)).all():
            continue
        w = [Request(i, s, int(x), low, high) for i, x in enumerate(o)]
        rep = estimate_cr(policy, w, M, budget, int(rng.integers(2**31)), s)
        table.append((len(table), rep.mean_ratio, rep.se))
        if best is None or rep.mean_ratio > best[1].mean_ratio:
            best = (o, rep)
    o, rep = best
    return WorstCase(o.tolist(), rep.mean_ratio, rep.se, table)


# ---------------------------------------------------------------------------
# closed forms


def amax_upper_bound(alpha: float) -> float:
    """Upper bound on the A_max ratio as a function of ``alpha = l/u``."""
    return (1 + 1 / alpha) / (2 * alpha)


def amax_lower_bound_stated(alpha: float) -> float:
    """The simplified lower bound ``(1 + alpha^-1/2) / (2 alpha)``.

    Kept for comparison only: it does not follow from the construction
    formula (see :func:`cr_amax_lowerbound_construction`).
    """
    return (1 + alpha**-0.5) / (2 * alpha)


def cr_amax_lowerbound_construction(low: int, high: int, a: int, b: int) -> tuple[list[Request], float]:
    """Parallel-workers instance: ``a*u`` short and ``b*l`` long requests.

    Run it with ``s = 0`` and ``M = l*u``. Returns the workload and the
    predicted ratio ``(u/l)(au + bl)(a + b) / (u a^2 + 2 l a b + u b^2)``.
    """
    if a < 0 or b < 0 or a + b == 0:
        raise ModelError("need a, b >= 0 and not both zero")
    n_short, n_long = a * high, b * low
    lengths = [low] * n_short + [high] * n_long
    work = [Request(i, 0, o, low, high) for i, o in enumerate(lengths)]
    ratio = (high / low) * (a * high + b * low) * (a + b) / (high * a * a + 2 * low * a * b + high * b * b)
    return work, ratio


def cr_amin_closed_form(s: int, low: int, high: int, mix: LengthMix | Sequence[float]) -> float:
    """Asymptotic A_min ratio for a length mix on ``[low, high]``.

    The first period is weighted by ``s + low``, every later one by 1.
    """
    x = mix.proportions if isinstance(mix, LengthMix) else np.asarray(mix, dtype=float)
    if isinstance(mix, LengthMix) and (mix.low != low or mix.high != high):
        raise ModelError("mix support does not match [low, high]")
    if len(x) != high - low + 1:
        raise ModelError("mix length must equal high - low + 1")
    i = np.arange(low, high + 1, dtype=float)
    # suffix sums from k and from k+1
    suf = lambda v: np.cumsum(v[::-1])[::-1]
    ix_k = suf(i * x)
    x_k = suf(x)
    x_gt = x_k - x
    w = x / (s + i)
    w_k = suf(w)
    iw_k = suf(i * w)
    # sum_{i>k} (i-k)/(s+i) x_i = sum_{i>=k} (i-k) w_i
    lag = iw_k - i * w_k
    delta = np.ones_like(i)
    delta[0] = s + low
    num = float((delta * ix_k * (delta * w_k + 2 * lag)).sum())
    den = float((i * (s + i) * x * (x + 2 * x_gt)).sum())
    if den == 0:
        raise ModelError("empty mix")
    return num / den


def cr_two_point(alpha: float, t: float) -> float:
    a2 = alpha * alpha
    return 1 + alpha * (1 - a2) * t / (a2 * t * t + 2 * a2 * t + 1)


def amin_two_point_bound(alpha: float) -> float:
    """Supremum over mixes of :func:`cr_two_point`, reached at ``alpha * t = 1``."""
    return (3 - alpha) / 2


def cr_aell(alpha: float, t: float) -> float:
    a2 = alpha * alpha
    return 1 + (a2 * t + 2 * a2) / (a2 * t * t + 2 * a2 * t + 1)


def aell_bound(alpha: float) -> float:
    if alpha <= 0.5:
        return 1 + alpha / (2 * (1 - alpha))
    return 1 + 2 * alpha * alpha


def aell_threshold() -> float:
    """Skew below which promote-l has the smaller bound."""
    return (3 - math.sqrt(5)) / 2


def cr_lg(q: float) -> float:
    """A_min ratio under the linearly weighted geometric family, ``q = 1 - p``."""
    if not 0 <= q < 1:
        raise ModelError("q must lie in [0, 1)")
    num = (1 + q) ** 2 * (1 + 3 * q + 6 * q**2 + 3 * q**3 + q**4)
    den = 1 + 2 * q + 11 * q**2 + 8 * q**3 + 11 * q**4 + 2 * q**5 + q**6
    return num / den


# ---------------------------------------------------------------------------
# period statistics for A_min runs


class SegmentationError(ModelError):
    """A run has too few periods to compare against the fluid description."""


@dataclass
class PeriodStats:
    period: int
    b: dict[int, int]
    c: dict[int, int]
    d: dict[int, int]


@dataclass
class FluidReport:
    periods: list[PeriodStats]
    # (i, j) -> (observed c/b, predicted (s+i)/(s+j), relative deviation)
    fraction: dict[tuple[int, int], tuple[float, float, float]]
    # (i, j) -> (observed c, predicted E[c], relative deviation)
    count: dict[tuple[int, int], tuple[float, float, float]]

    def first_period(self) -> PeriodStats:
        return self.periods[0]


def period_stats(result, true_output: np.ndarray) -> list[PeriodStats]:
    """Tally admissions, completions and cancellations per period.

    A step belongs to period ``i`` when the smallest certified bound among
    waiting requests, just before the decision, equals ``i``.
    """
    ev = result.events
    if ev is None:
        raise ModelError("run was not recorded with record_events=True")
    label = ev.min_waiting_bound[ev.time]
    lengths = true_output[ev.index]
    out = []
    for i in np.unique(label).tolist():
        if i < 0:
            continue
        sel = label == i
        b, c, d = {}, {}, {}
        for j in np.unique(lengths[sel]).tolist():
            m = sel & (lengths == j)
            b[j] = int(m.sum())
            d[j] = int((m & ev.evicted).sum())
            c[j] = b[j] - d[j]
        out.append(PeriodStats(i, b, c, d))
    return out


def merge_periods(runs: Sequence[list[PeriodStats]]) -> list[PeriodStats]:
    """Pool counts of several runs, period by period."""
    pooled: dict[int, PeriodStats] = {}
    for run in runs:
        for p in run:
            tgt = pooled.setdefault(p.period, PeriodStats(p.period, {}, {}, {}))
            for name in ("b", "c", "d"):
                acc = getattr(tgt, name)
                for j, v in getattr(p, name).items():
                    acc[j] = acc.get(j, 0) + v
    return [pooled[k] for k in sorted(pooled)]


def _rel(obs: float, exp: float) -> float:
    return abs(obs - exp) / abs(exp) if exp else math.inf


def fluid_check(
    periods: list[PeriodStats],
    s: int,
    mix: LengthMix,
    n: int,
    runs: int = 1,
) -> FluidReport:
    """Compare period tallies (pooled over ``runs``) with the fluid description."""
    if mix.high > mix.low and len(periods) < 2:
        raise SegmentationError(f"only {len(periods)} period(s); need at least 2")
    low = mix.low
    x = dict(zip(mix.lengths.tolist(), mix.proportions.tolist()))
    frac, count = {}, {}
    for p in periods:
        i = p.period
        for j, b in p.b.items():
            if b == 0 or j < i:
                continue
            obs = p.c[j] / b
            exp = (s + i) / (s + j)
            frac[(i, j)] = (obs, exp, _rel(obs, exp))
            factor = (s + low) if i == low else 1
            e_c = factor * x.get(j, 0.0) * n / (s + j)
            c_mean = p.c[j] / runs
            count[(i, j)] = (c_mean, e_c, _rel(c_mean, e_c))
    return FluidReport(periods, frac, count)


def simulate_periods(
    workload: Sequence[Request],
    M: int,
    reps: int,
    seed: int,
    s: int = 0,
    policy: str = "amin",
) -> list[list[PeriodStats]]:
    """Recorded A_min runs, one list of period tallies per replication."""
    config = SimConfig(M, s, seed)
    o = np.array([r.true_output for r in workload], dtype=np.int64)
    out = []
    for ss in np.random.SeedSequence(seed).spawn(reps):
        res = run_simulation(config, workload, PolicyKind(policy), rng=np.random.default_rng(ss), record_events=True)
        out.append(period_stats(res, o))
    return out
