"""Domain types plus memory and latency accounting.

Time is discrete. At step ``t`` a job that last started at ``p`` has generated
``t - p`` tokens and holds ``s + (t - p)`` tokens of KV cache. A job of true
length ``o`` finishes at ``p + o``; it is still counted in memory at that
instant and leaves the cache afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

WAITING, ACTIVE, DONE = 0, 1, 2


class ModelError(ValueError):
    """Malformed request, workload or configuration."""


class CandidateStateError(ModelError):
    """A feasibility query named a request that is already active or done."""


@dataclass
class Request:
    id: int
    prompt_size: int
    true_output: int
    interval_low: int
    interval_high: int
    certified_low: int | None = None

    def __post_init__(self):
        if self.prompt_size < 0:
            raise ModelError(f"request {self.id}: negative prompt size")
        if self.true_output < 1:
            raise ModelError(f"request {self.id}: output length must be >= 1")
        if not 1 <= self.interval_low <= self.true_output <= self.interval_high:
            raise ModelError(
                f"request {self.id}: need 1 <= low <= output <= high, got "
                f"[{self.interval_low}, {self.interval_high}] with output {self.true_output}"
            )
        if self.certified_low is None:
            self.certified_low = self.interval_low
        if not self.interval_low <= self.certified_low <= self.true_output:
            raise ModelError(f"request {self.id}: certified bound out of range")


@dataclass(frozen=True)
class ActiveJob:
    request_id: int
    last_start: int
    age: int
    done: bool = False


@dataclass(frozen=True)
class LinearBatchTime:
    """Wall-clock model for reporting: ``beta0 + beta1 * tokens`` per step."""

    beta0: float
    beta1: float

    def __call__(self, tokens: int) -> float:
        return self.beta0 + self.beta1 * tokens


@dataclass
class SimConfig:
    memory_capacity: int
    prompt_size: int = 0
    seed: int = 0
    batch_time_model: LinearBatchTime | None = None  # None means unit steps

    def __post_init__(self):
        if self.memory_capacity <= 0:
            raise ModelError("memory capacity must be positive")
        if self.prompt_size < 0:
            raise ModelError("prompt size must be non-negative")

    def validate(self, workload: Sequence[Request]) -> None:
        if not workload:
            return
        need = self.prompt_size + max(r.interval_low for r in workload)
        if self.memory_capacity < need:
            raise ModelError(
                f"memory {self.memory_capacity} below s + max interval_low = {need}"
            )
        # Without room for s + o a request can never finish, whatever the policy.
        longest = self.prompt_size + max(r.true_output for r in workload)
        if self.memory_capacity < longest:
            raise ModelError(
                f"memory {self.memory_capacity} below s + max output = {longest}"
            )
        bad = [r.id for r in workload if r.prompt_size != self.prompt_size]
        if bad:
            raise ModelError(f"requests {bad[:5]} disagree with shared prompt size")


class SystemState:
    """Mutable simulation state, stored column-wise over the workload.

    ``true_output`` is hidden information: only the engine and hindsight
    policies may read it. Everything else is observable, including
    ``finished`` (a job that emitted its last token at this step).
    """

    def __init__(self, workload: Sequence[Request], prompt_size: int):
        ids = [r.id for r in workload]
        if len(set(ids)) != len(ids):
            raise ModelError("request ids must be unique")
        self.prompt_size = int(prompt_size)
        self.clock = 0
        self.ids = np.asarray(ids, dtype=np.int64)
        self.index = {rid: k for k, rid in enumerate(ids)}
        n = len(ids)
        self.true_output = np.array([r.true_output for r in workload], dtype=np.int64)
        self.interval_low = np.array([r.interval_low for r in workload], dtype=np.int64)
        self.interval_high = np.array([r.interval_high for r in workload], dtype=np.int64)
        self.certified_low = np.array([r.certified_low for r in workload], dtype=np.int64)
        self.status = np.full(n, WAITING, dtype=np.int8)
        self.last_start = np.full(n, -1, dtype=np.int64)
        self.age = np.zeros(n, dtype=np.int64)
        self.finished = np.zeros(n, dtype=bool)
        # FIFO key; evicted jobs get a fresh, larger key when they rejoin.
        self.queue_pos = np.arange(n, dtype=np.int64)
        self._next_pos = n
        self.completed: dict[int, int] = {}

    def __len__(self):
        return len(self.ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    def active_idx(self) -> np.ndarray:
        return np.flatnonzero(self.status == ACTIVE)

    def running_idx(self) -> np.ndarray:
        """Active jobs that still have tokens to generate."""
        return np.flatnonzero((self.status == ACTIVE) & ~self.finished)

    def waiting_idx(self) -> np.ndarray:
        """Waiting jobs in queue (FIFO) order."""
        idx = np.flatnonzero(self.status == WAITING)
        return idx[np.argsort(self.queue_pos[idx], kind="stable")]

    @property
    def waiting(self) -> list[int]:
        return self.ids[self.waiting_idx()].tolist()

    @property
    def active(self) -> list[ActiveJob]:
        return [
            ActiveJob(int(self.ids[k]), int(self.last_start[k]), int(self.age[k]), bool(self.finished[k]))
            for k in self.active_idx()
        ]

    def to_idx(self, ids: Iterable[int]) -> np.ndarray:
        return np.fromiter((self.index[i] for i in ids), dtype=np.int64)

    def request(self, rid: int) -> Request:
        k = self.index[rid]
        return Request(
            rid,
            self.prompt_size,
            int(self.true_output[k]),
            int(self.interval_low[k]),
            int(self.interval_high[k]),
            int(self.certified_low[k]),
        )

    def requeue(self, idx: np.ndarray) -> None:
        self.status[idx] = WAITING
        self.age[idx] = 0
        self.finished[idx] = False
        self.queue_pos[idx] = np.arange(self._next_pos, self._next_pos + len(idx))
        self._next_pos += len(idx)

    @classmethod
    def from_jobs(
        cls,
        workload: Sequence[Request],
        prompt_size: int,
        clock: int,
        active: Iterable[ActiveJob] = (),
        completed: Mapping[int, int] | None = None,
    ) -> "SystemState":
        """Hand-build a state, mostly for tests and worked examples."""
        st = cls(workload, prompt_size)
        st.clock = clock
        for job in active:
            k = st.index[job.request_id]
            st.status[k] = ACTIVE
            st.last_start[k] = job.last_start
            st.age[k] = job.age
            st.finished[k] = job.done
        for rid, lat in (completed or {}).items():
            st.status[st.index[rid]] = DONE
            st.completed[rid] = lat
        return st


@dataclass
class Violation:
    kind: str  # "memory" or "age"
    request_id: int
    amount: int


@dataclass
class ScheduleTrace:
    """Final (uncancelled) start sets ``I_0..I_T`` plus the cancellation log."""

    final_starts: list[frozenset[int]]
    cancellations: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.final_starts = [frozenset(b) for b in self.final_starts]
        seen: set[int] = set()
        for batch in self.final_starts:
            if seen & batch:
                raise ModelError(f"requests {sorted(seen & batch)} start twice")
            seen |= batch
        starts = self.start_times()
        for rid, t_cancel, _ in self.cancellations:
            if rid in starts and starts[rid] <= t_cancel:
                raise ModelError(f"request {rid} cancelled at {t_cancel} after its final start")

    @classmethod
    def from_start_times(cls, starts: Mapping[int, int], cancellations=()) -> "ScheduleTrace":
        T = max(starts.values(), default=-1)
        batches: list[set[int]] = [set() for _ in range(T + 1)]
        for rid, t in starts.items():
            batches[t].add(rid)
        return cls(batches, list(cancellations))

    def start_times(self) -> dict[int, int]:
        return {rid: t for t, batch in enumerate(self.final_starts) for rid in batch}

    @property
    def request_ids(self) -> frozenset[int]:
        return frozenset().union(*self.final_starts) if self.final_starts else frozenset()

    def __len__(self):
        return len(self.final_starts)


def active_memory(state: SystemState) -> int:
    """KV-cache tokens held by the active set."""
    idx = state.active_idx()
    return int(len(idx) * state.prompt_size + state.age[idx].sum())


class HorizonProfile:
    """Projected memory at offsets ``d = 0, 1, ...`` from the current step.

    Built from the active set and each job's remaining (assumed) tokens; a job
    with ``r`` remaining tokens is counted at offsets ``0..r`` inclusive.
    Candidates are added with their assumed total length.
    """

    def __init__(self, s: int, memory: int, ages: np.ndarray, remaining: np.ndarray):
        self.s = s
        self.memory = memory
        remaining = np.asarray(remaining, dtype=np.int64)
        H = int(remaining.max()) + 1 if len(remaining) else 1
        alive = np.bincount(remaining, minlength=H)[::-1].cumsum()[::-1]
        agesum = np.bincount(remaining, weights=ages, minlength=H)[::-1].cumsum()[::-1]
        d = np.arange(H)
        self.load = (alive * (s + d) + agesum).astype(np.int64)

    def _grow(self, L: int) -> None:
        if len(self.load) < L + 1:
            self.load = np.concatenate([self.load, np.zeros(L + 1 - len(self.load), np.int64)])

    def max_copies(self, L: int) -> int:
        """Largest k such that k extra jobs of assumed length L still fit."""
        self._grow(L)
        d = np.arange(L + 1)
        per = self.s + d
        slack = self.memory - self.load[: L + 1]
        if (slack < 0).any():
            return 0
        pos = per > 0
        if not pos.any():
            return np.iinfo(np.int64).max
        return int((slack[pos] // per[pos]).min())

    def fits(self, L: int) -> bool:
        return self.max_copies(L) >= 1

    def add(self, L: int, copies: int = 1) -> None:
        self._grow(L)
        self.load[: L + 1] += copies * (self.s + np.arange(L + 1))

    def admit_prefix(self, lengths: np.ndarray) -> int:
        """Admit candidates in order until the first one that does not fit.

        Runs of equal length are admitted as a block, which is equivalent to
        adding them one at a time.
        """
        lengths = np.asarray(lengths, dtype=np.int64)
        n = len(lengths)
        if n == 0:
            return 0
        bounds = np.concatenate([[0], np.flatnonzero(np.diff(lengths)) + 1, [n]])
        admitted = 0
        for i, j in zip(bounds[:-1].tolist(), bounds[1:].tolist()):
            L = int(lengths[i])
            k = min(j - i, self.max_copies(L))
            if k:
                self.add(L, k)
            admitted += k
            if k < j - i:
                break
        return admitted


def remaining_under(state: SystemState, idx: np.ndarray, assumed_total: np.ndarray) -> np.ndarray:
    """Remaining assumed tokens for active jobs.

    Unfinished jobs always need at least one more step; finished ones need none.
    """
    rem = np.maximum(assumed_total - state.age[idx], 1)
    rem[state.finished[idx]] = 0
    return rem


def profile_for(state: SystemState, memory: int, assumed_total: np.ndarray, idx=None) -> HorizonProfile:
    """Profile of the active set (or ``idx``) under per-request assumed totals."""
    if idx is None:
        idx = state.active_idx()
    rem = remaining_under(state, idx, assumed_total[idx])
    return HorizonProfile(state.prompt_size, memory, state.age[idx], rem)


def horizon_feasible(
    state: SystemState,
    candidates: Iterable[int],
    assumed_length: Mapping[int, int],
    M: int,
) -> bool:
    """Check the look-ahead memory constraint for starting ``candidates`` now.

    ``assumed_length`` maps each candidate to its assumed total output length
    and each active job to its remaining assumed tokens (0 for a job that
    finishes at this step).
    """
    cands = list(candidates)
    for rid in cands:
        st = state.status[state.index[rid]]
        if st != WAITING:
            raise CandidateStateError(f"request {rid} is not waiting")
    if not cands:
        return True
    act = state.active_idx()
    try:
        rem = np.array([assumed_length[int(state.ids[k])] for k in act], dtype=np.int64)
        lens = np.array([assumed_length[rid] for rid in cands], dtype=np.int64)
    except KeyError as exc:
        raise ModelError(f"no assumed length for request {exc.args[0]}") from None
    prof = HorizonProfile(state.prompt_size, M, state.age[act], rem)
    L = int(lens.max())
    prof._grow(L)
    for x in lens:
        prof.add(int(x))
    return bool((prof.load[: L + 1] <= M).all())


def tel_of_trace(trace: ScheduleTrace, outputs: Mapping[int, int]) -> tuple[int, dict[int, int]]:
    """Total end-to-end latency and per-request latency ``L_i = start + o_i``."""
    starts = trace.start_times()
    missing = set(outputs) - set(starts)
    if missing:
        raise ModelError(f"requests {sorted(missing)[:5]} missing from trace")
    extra = set(starts) - set(outputs)
    if extra:
        raise ModelError(f"trace has unknown requests {sorted(extra)[:5]}")
    lat = {rid: starts[rid] + outputs[rid] for rid in outputs}
    total = sum(t * len(b) for t, b in enumerate(trace.final_starts)) + sum(outputs.values())
    return total, lat


def audit_step(state: SystemState, M: int) -> list[Violation]:
    """Memory-limit and age checks for the current step; never raises."""
    out: list[Violation] = []
    try:
        idx = state.active_idx()
        over = active_memory(state) - M
        if over > 0:
            # Blame the most recent start: it is the admission that broke the budget.
            k = idx[np.lexsort((state.ids[idx], state.last_start[idx]))[-1]]
            out.append(Violation("memory", int(state.ids[k]), int(over)))
        bad = idx[state.age[idx] > state.true_output[idx]]
        for k in bad:
            out.append(Violation("age", int(state.ids[k]), int(state.age[k] - state.true_output[k])))
    except Exception as exc:  # auditor must not take the run down
        out.append(Violation(f"audit-error: {exc}", -1, 0))
    return out
