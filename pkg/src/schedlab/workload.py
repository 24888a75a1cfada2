"""Trace ingestion, interval assignment, synthetic workloads and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analysis import CRReport
from .distributions import LengthDistribution, sample_workload
from .model import Request

log = logging.getLogger(__name__)

COLUMNS = ("prompt_tokens", "output_tokens")
RESULT_COLUMNS = ("policy", "n", "M", "s", "mode", "mean_ratio", "ci95", "seed", "reps")


class TraceError(ValueError):
    """Base class for trace problems; carries a location when known."""


class MissingColumnError(TraceError):
    pass


class BadCellError(TraceError):
    pass


class EmptyTraceError(TraceError):
    pass


@dataclass(frozen=True)
class RawTraceRow:
    prompt_tokens: int
    output_tokens: int


def _cell(value, line: int, col: str, minimum: int) -> int:
    if isinstance(value, bool):
        raise BadCellError(f"line {line}: {col} is not an integer: {value!r}")
    if isinstance(value, int):
        v = value
    else:
        text = str(value).strip()
        try:
            v = int(text)
        except ValueError:
            raise BadCellError(f"line {line}: {col} is not an integer: {value!r}") from None
    if v < minimum:
        raise BadCellError(f"line {line}: {col} must be >= {minimum}, got {v}")
    return v


def _row(rec: dict, line: int) -> RawTraceRow:
    return RawTraceRow(
        _cell(rec["prompt_tokens"], line, "prompt_tokens", 0),
        _cell(rec["output_tokens"], line, "output_tokens", 1),
    )


def ingest(path: str | Path, format: str | None = None) -> list[RawTraceRow]:
    """Read a CSV (with header) or JSONL trace; rows come back in file order."""
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    text = path.read_text()
    rows: list[RawTraceRow] = []
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None:
            raise EmptyTraceError(f"{path}: empty file")
        missing = [c for c in COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MissingColumnError(f"{path}: line 1: missing column(s) {', '.join(missing)}")
        for rec in reader:
            rows.append(_row(rec, reader.line_num))
    elif fmt == "jsonl":
        for line, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise BadCellError(f"{path}: line {line}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise BadCellError(f"{path}: line {line}: expected an object")
            missing = [c for c in COLUMNS if c not in rec]
            if missing:
                raise MissingColumnError(f"{path}: line {line}: missing key(s) {', '.join(missing)}")
            rows.append(_row(rec, line))
    else:
        raise TraceError(f"unknown trace format {fmt!r}")
    if not rows:
        raise EmptyTraceError(f"{path}: no data rows")
    log.info("read %d rows from %s", len(rows), path)
    return rows


def write_trace(rows: Sequence[RawTraceRow], path: str | Path, format: str = "csv") -> None:
    with open(path, "w", newline="") as fh:
        if format == "csv":
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in rows:
                w.writerow((r.prompt_tokens, r.output_tokens))
        else:
            for r in rows:
                fh.write(json.dumps(asdict(r)) + "\n")


# ---------------------------------------------------------------------------
# interval modes


@dataclass(frozen=True)
class Rough:
    low: int
    high: int

    def label(self) -> str:
        return f"rough[{self.low},{self.high}]"


@dataclass(frozen=True)
class Binned:
    width: int

    def label(self) -> str:
        return f"binned{self.width}"


@dataclass(frozen=True)
class Relative:
    x: float

    def label(self) -> str:
        return f"relative{self.x:g}"


IntervalMode = Rough | Binned | Relative


def interval_for(o: int, mode: IntervalMode) -> tuple[int, int]:
    if isinstance(mode, Rough):
        lo, hi = mode.low, mode.high
        if lo > o or hi < o:
            log.warning("rough interval [%d, %d] does not cover output %d; clamping", lo, hi, o)
        return min(lo, o), max(hi, o)
    if isinstance(mode, Binned):
        if mode.width <= 0:
            raise ValueError("bin width must be positive")
        lo = (o - 1) // mode.width * mode.width + 1
        return lo, lo + mode.width - 1
    if isinstance(mode, Relative):
        if not 0 < mode.x < 1:
            raise ValueError("relative width x must lie in (0, 1)")
        # exact decimal arithmetic so that 0.9 * 100 is 90, not 90.00000000000001
        x = Fraction(str(mode.x))
        return max(1, math.ceil((1 - x) * o)), math.ceil((1 + x) * o)
    raise TypeError(f"unknown interval mode {mode!r}")


def shared_prompt_size(rows: Sequence[RawTraceRow], policy: int | str) -> int:
    """The single prompt size the model uses: a constant or ``"median"``.

    The median is a modelling shortcut for real traces whose prompts vary.
    """
    if policy == "median":
        med = float(np.median([r.prompt_tokens for r in rows]))
        return int(math.floor(med + 0.5))
    s = int(policy)
    if s < 0:
        raise ValueError("prompt size must be non-negative")
    return s


def assign_intervals(rows: Sequence[RawTraceRow], mode: IntervalMode, shared_s: int | str = 0) -> list[Request]:
    if not rows:
        raise ValueError("no rows to assign intervals to")
    s = shared_prompt_size(rows, shared_s)
    out = []
    for i, r in enumerate(rows):
        lo, hi = interval_for(r.output_tokens, mode)
        out.append(Request(i, s, r.output_tokens, lo, hi))
    return out


def synth_workload(
    n: int,
    dist: LengthDistribution,
    s: int,
    seed: int | np.random.Generator,
    mode: IntervalMode | None = None,
) -> list[Request]:
    """Sample ``n`` lengths and attach intervals.

    Without a mode every request gets the distribution's support (or the
    sampled range for an unbounded law) as a rough interval.
    """
    o = sample_workload(dist, n, seed)
    if mode is None:
        hi = getattr(dist, "high", None)
        mode = Rough(getattr(dist, "low", 1), int(o.max()) if hi is None else hi)
    rows = [RawTraceRow(s, int(x)) for x in o]
    return assign_intervals(rows, mode, s)


# ---------------------------------------------------------------------------
# results


def _report_row(r: CRReport) -> dict:
    return {
        "policy": r.policy,
        "n": r.n,
        "M": r.M,
        "s": r.s,
        "mode": r.mode,
        "mean_ratio": repr(float(r.mean_ratio)),
        "ci95": repr(float(r.ci95)),
        "seed": r.seed,
        "reps": r.reps,
    }


def _open_out(path: str | Path):
    if str(path) == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def emit_results(reports: Iterable[CRReport], path: str | Path, format: str = "csv") -> None:
    """Write reports with a fixed column order; ``-`` means standard output."""
    rows = [_report_row(r) for r in reports]
    fh, close = _open_out(path)
    try:
        if format == "csv":
            w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        elif format == "json":
            data = [{k: (float(v) if k in ("mean_ratio", "ci95") else v) for k, v in row.items()} for row in rows]
            fh.write(json.dumps(data, indent=2) + "\n")
        else:
            raise ValueError(f"unknown result format {format!r}")
    finally:
        if close:
            fh.close()


def read_results(path: str | Path, format: str = "csv") -> list[CRReport]:
    if format == "json":
        data = json.loads(Path(path).read_text())
    else:
        with open(path, newline="") as fh:
            data = list(csv.DictReader(fh))
    out = []
    for d in data:
        out.append(
            CRReport(
                policy=d["policy"],
                mean_ratio=float(d["mean_ratio"]),
                ci95=float(d["ci95"]),
                reps=int(d["reps"]),
                seed=int(d["seed"]),
                n=int(d["n"]),
                M=int(d["M"]),
                s=int(d["s"]),
                mode=d["mode"],
            )
        )
    return out


def write_table(header: Sequence[str], rows: Iterable[Sequence], path: str | Path, format: str = "csv") -> None:
    """Plain table output for the spectral, experiment and sweep commands."""
    rows = [list(r) for r in rows]
    fh, close = _open_out(path)
    try:
        if format == "json":
            fh.write(json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n")
        else:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    finally:
        if close:
            fh.close()
