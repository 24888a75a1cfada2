"""Command-line entry point: ``schedlab <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import analysis, spectral
from .distributions import DistributionError, GeometricTruncated, LinWeightedGeometric, parse_distribution, sample_workload
from .engine import InvariantBreach, LivelockError, coupled_run, check_corresponding_order, check_delayed, latency_scaling_holds
from .model import ModelError, Request
from .policies import POLICY_NAMES, PolicyKind
from .workload import (
    Binned,
    RawTraceRow,
    Relative,
    Rough,
    TraceError,
    assign_intervals,
    emit_results,
    ingest,
    synth_workload,
    write_table,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BREACH = 0, 2, 3, 4

log = logging.getLogger("schedlab")


class UsageError(Exception):
    pass


def example1() -> tuple[list[Request], int]:
    """Five unit-length requests, s = 1, interval [1, 4], M = 10."""
    return [Request(i, 1, 1, 1, 4) for i in range(5)], 10


def parse_interval_mode(text: str):
    name, _, arg = text.partition(":")
    try:
        if name == "rough":
            lo, hi = (int(v) for v in arg.split(","))
            return Rough(lo, hi)
        if name == "binned":
            return Binned(int(arg))
        if name == "relative":
            return Relative(float(arg))
    except ValueError:
        pass
    raise UsageError(f"bad interval mode {text!r}; use rough:L,U | binned:W | relative:X")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _seed(args) -> int:
    env = os.environ.get("SCHEDLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SCHEDLAB_SEED must be an integer, got {env!r}") from None
    return args.seed


def _workload(args, seed: int) -> tuple[list[Request], int]:
    sources = sum(bool(x) for x in (args.example1, args.trace, args.n))
    if sources != 1:
        raise UsageError("give exactly one of --example1, --trace, --n")
    if args.example1:
        work, M = example1()
        return work, args.memory or M
    if args.memory is None:
        raise UsageError("--memory is required")
    mode = parse_interval_mode(args.interval_mode) if args.interval_mode else None
    if args.trace:
        rows = ingest(args.trace)
        work = assign_intervals(rows, mode or Rough(1, 1000), args.shared_s)
    else:
        dist = parse_distribution(args.dist)
        work = synth_workload(args.n, dist, args.prompt_size, seed, mode)
    return work, args.memory


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    seed = _seed(args)
    work, M = _workload(args, seed)
    label = args.interval_mode or ("example1" if args.example1 else "rough")
    rep = analysis.estimate_cr(PolicyKind(args.policy), work, M, args.reps, seed, jobs=args.jobs, mode=label)
    emit_results([rep], args.out, args.format)
    return EXIT_OK


def cmd_spectral(args) -> int:
    if args.u_max < 1:
        raise UsageError("--u-max must be >= 1")
    rows = spectral.spectral_table(args.u_max)
    header = ["u", "rho", "H_u"]
    if args.fit:
        lo = max(2, args.fit_min)
        fit = spectral.fit_log_curve(lo, args.u_max)
        header.append("fit_residual")
        rows = [(u, r, h, float(r - fit(u)) if u >= lo else "") for u, r, h in rows]
        r2 = "degenerate" if fit.r2 is None else f"{fit.r2:.7f}"
        print(f"fit over [{lo}, {args.u_max}]: c1={fit.c1:.6f} c2={fit.c2:.6f} c3={fit.c3:.6f} R2={r2}", file=sys.stderr)
    write_table(header, rows, args.out, args.format)
    return EXIT_OK


def cmd_experiment(args) -> int:
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    modes = {1: [Rough(1, args.rough_high)], 2: [Binned(args.bin_width)], 3: [Relative(x) for x in _floats(args.x_list)]}[args.which]
    if args.trace:
        rows = ingest(args.trace)
    else:
        dist = parse_distribution(args.dist)
    out = []
    for n in _ints(args.n_list):
        if args.trace:
            pick = np.sort(rng.choice(len(rows), size=n, replace=False)) if n <= len(rows) else None
            if pick is None:
                raise TraceError(f"trace has {len(rows)} rows, fewer than n={n}")
            base = [rows[k] for k in pick]
        else:
            o = sample_workload(dist, n, rng)
            base = [RawTraceRow(args.prompt_size, int(x)) for x in o]
        for mode in modes:
            work = assign_intervals(base, mode, args.shared_s if args.trace else args.prompt_size)
            hsf = analysis.benchmark_tel(work, args.memory)
            x = mode.x if isinstance(mode, Relative) else ""
            out.append((args.which, x, n, "hsf", hsf / n, 1.0))
            for pol in ("amax", "amin"):
                tels = analysis.run_tels(pol, work, args.memory, args.reps, int(rng.integers(2**31)), jobs=args.jobs)
                avg = float(tels.mean())
                out.append((args.which, x, n, pol, avg / n, avg / hsf))
    write_table(["experiment", "x", "n", "policy", "avg_latency", "ratio_to_hsf"], out, args.out, args.format)
    return EXIT_OK


def cmd_worstcase(args) -> int:
    seed = _seed(args)
    res = analysis.worstcase_two_point_search(args.policy, args.n, args.l, args.u, args.memory, args.budget, seed, args.prompt_size)
    n_long = sum(1 for o in res.lengths if o == args.u) if args.u != args.l else 0
    print(f"worst: {n_long} of {args.n} long, ratio={res.ratio:.6f} se={res.se:.6f}", file=sys.stderr)
    write_table(["n_long", "ratio", "se"], res.table, args.out, args.format)
    return EXIT_OK


def cmd_couple(args) -> int:
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    dist = parse_distribution(args.dist)
    M1 = args.memory
    out = []
    for beta in _floats(args.beta):
        if not 0 < beta <= 1:
            raise UsageError("--beta values must lie in (0, 1]")
        M2 = int(round(beta * M1))
        raw = slack = order_bad = delay_bad = 0
        for _ in range(args.runs):
            o = sample_workload(dist, args.n, rng)
            work = [Request(i, args.prompt_size, int(x), 1, int(x)) for i, x in enumerate(o)]
            if M2 < args.prompt_size + int(o.max()):
                raise UsageError(f"M2={M2} cannot hold the longest request")
            sigma = rng.permutation(args.n).tolist()
            res = coupled_run(sigma, work, M1, M2)
            ok_raw, ok_slack = latency_scaling_holds(res.tel1, res.tel2, M1, M2, args.slack)
            raw += not ok_raw
            slack += not ok_slack
            order_bad += not check_corresponding_order(res.trace1, res.trace2)
            delay_bad += not check_delayed(res.trace1, res.trace2)
        out.append((beta, M2, args.runs, raw, slack, order_bad, delay_bad))
    write_table(["beta", "M2", "runs", "raw_violations", "slack_violations", "order_violations", "delay_violations"],
                out, args.out, args.format)
    return EXIT_OK


def cmd_dist_cr(args) -> int:
    rows = []
    if args.family == "lg":
        for q in _floats(args.q):
            rows.append(("lg", q, analysis.cr_lg(q)))
    elif args.family == "geom":
        for q in _floats(args.q):
            d = GeometricTruncated(1 - q, args.u)
            rows.append(("geom", q, analysis.cr_amin_closed_form(0, 1, args.u, d.masses())))
    elif args.family == "lg-truncated":
        for q in _floats(args.q):
            d = LinWeightedGeometric(1 - q, args.u)
            rows.append(("lg-truncated", q, analysis.cr_amin_closed_form(0, 1, args.u, d.masses())))
    else:
        for a in _floats(args.alpha):
            for t in _floats(args.t):
                rows.append(("two-point", f"alpha={a:g};t={t:g}", analysis.cr_two_point(a, t)))
                rows.append(("promote-l", f"alpha={a:g};t={t:g}", analysis.cr_aell(a, t)))
    write_table(["family", "param", "ratio"], rows, args.out, args.format)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="schedlab", description="Memory-constrained LLM batch scheduling simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", default="-", help="output path, '-' for stdout")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="overridden by SCHEDLAB_SEED")

    s = sub.add_parser("simulate", help="estimate a policy's competitive ratio")
    s.add_argument("--policy", choices=POLICY_NAMES, required=True)
    s.add_argument("--example1", action="store_true", help="built-in five-request example")
    s.add_argument("--trace", help="CSV or JSONL trace with prompt_tokens,output_tokens")
    s.add_argument("--n", type=int, help="synthetic workload size")
    s.add_argument("--dist", default="lg:p=0.1,high=200", help="synthetic length law, e.g. twopoint:low=1,high=4,p_long=0.5")
    s.add_argument("--interval-mode", help="rough:L,U | binned:W | relative:X")
    s.add_argument("--memory", type=int, help="KV cache size M in tokens")
    s.add_argument("--prompt-size", type=int, default=0)
    s.add_argument("--shared-s", default="median", help="prompt size for traces: an integer or 'median'")
    s.add_argument("--reps", type=int, default=30)
    s.add_argument("--jobs", type=int, default=1)
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("spectral", help="rho(u) and H_u table, optional log fit")
    s.add_argument("--u-max", type=int, required=True)
    s.add_argument("--fit", action="store_true")
    s.add_argument("--fit-min", type=int, default=2)
    common(s, seed=False)
    s.set_defaults(func=cmd_spectral)

    s = sub.add_parser("experiment", help="average latency of A_max, A_min and H-SF across n")
    s.add_argument("--which", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--trace")
    s.add_argument("--dist", default="lg:p=0.01,high=1000")
    s.add_argument("--n-list", default="200,400,600,800,1000")
    s.add_argument("--x-list", default="0.1,0.5,0.99")
    s.add_argument("--rough-high", type=int, default=1000)
    s.add_argument("--bin-width", type=int, default=100)
    s.add_argument("--memory", type=int, default=16000)
    s.add_argument("--prompt-size", type=int, default=0)
    s.add_argument("--shared-s", default="median")
    s.add_argument("--reps", type=int, default=30)
    s.add_argument("--jobs", type=int, default=1)
    common(s)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("worstcase", help="sweep two-point compositions for the worst ratio")
    s.add_argument("--policy", choices=POLICY_NAMES, required=True)
    s.add_argument("--n", type=int, default=12)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--u", type=int, required=True)
    s.add_argument("--memory", type=int)
    s.add_argument("--prompt-size", type=int, default=0)
    s.add_argument("--budget", type=int, default=30, help="runs per composition")
    common(s)
    s.set_defaults(func=cmd_worstcase)

    s = sub.add_parser("couple", help="coupled A_random runs under reduced memory")
    s.add_argument("--beta", default="1.0,0.75,0.5,0.25", help="comma list of M2/M1")
    s.add_argument("--memory", type=int, default=200, help="M1")
    s.add_argument("--n", type=int, default=40)
    s.add_argument("--dist", default="geom:p=0.2,high=20")
    s.add_argument("--prompt-size", type=int, default=0)
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--slack", type=float, default=8.0)
    common(s)
    s.set_defaults(func=cmd_couple)

    s = sub.add_parser("dist-cr", help="closed-form ratios for the length families")
    s.add_argument("--family", choices=("lg", "lg-truncated", "geom", "two-point"), required=True)
    s.add_argument("--q", default="0.5")
    s.add_argument("--u", type=int, default=200, help="support bound for truncated families")
    s.add_argument("--alpha", default="0.5")
    s.add_argument("--t", default="1")
    common(s, seed=False)
    s.set_defaults(func=cmd_dist_cr)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "worstcase" and args.memory is None:
        args.memory = args.l * args.u
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"schedlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantBreach, LivelockError) as exc:
        print(f"schedlab: invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except (TraceError, ModelError, DistributionError, ValueError, OSError) as exc:
        print(f"schedlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
