"""Discrete-time simulation loop and structural checks on schedules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .model import (
    ACTIVE,
    DONE,
    WAITING,
    ModelError,
    Request,
    ScheduleTrace,
    SimConfig,
    SystemState,
    Violation,
    active_memory,
    audit_step,
    tel_of_trace,
)
from .policies import (
    PolicyDecision,
    PolicyKind,
    aell_decide,
    amax_decide,
    amin_decide,
    amin_hetero_init,
    arandom_decide,
    check_disjoint,
    check_two_point,
    hsf_decide,
)


class LivelockError(RuntimeError):
    """The policy let two consecutive steps pass without any token generated."""


class InvariantBreach(RuntimeError):
    """A policy produced an illegal decision or broke a state invariant."""


@dataclass
class AdmissionLog:
    """One row per admission, for period analysis of A_min runs."""

    time: np.ndarray
    index: np.ndarray
    bound: np.ndarray  # certified bound at admission
    evicted: np.ndarray  # True if this admission was later cancelled
    min_waiting_bound: np.ndarray  # per step, before the decision (-1 if queue empty)


@dataclass
class SimResult:
    trace: ScheduleTrace
    tel: int
    latencies: dict[int, int]
    audit: list[tuple[int, Violation]]
    memory: np.ndarray  # occupancy per step after admissions
    steps: int
    wallclock: float | None = None
    events: AdmissionLog | None = None
    certified_low: np.ndarray | None = None  # final bounds, workload order

    @property
    def cancellations(self) -> list[tuple[int, int, int]]:
        return self.trace.cancellations

    def write_jsonl(self, fh: IO[str]) -> None:
        """Per-step memory occupancy and final starts, one JSON object per line."""
        for t, mem in enumerate(self.memory.tolist()):
            batch = sorted(self.trace.final_starts[t]) if t < len(self.trace) else []
            fh.write(json.dumps({"t": t, "memory": mem, "starts": batch}) + "\n")


def _sigma_rank(policy: PolicyKind, state: SystemState, rng) -> np.ndarray:
    if policy.sigma is None:
        perm = rng.permutation(state.n)
    else:
        if sorted(policy.sigma) != sorted(state.ids.tolist()):
            raise ModelError("sigma must be a permutation of the workload ids")
        perm = state.to_idx(policy.sigma)
    rank = np.empty(state.n, dtype=np.int64)
    rank[perm] = np.arange(state.n)
    return rank


def _validate(state: SystemState, d: PolicyDecision, policy: PolicyKind) -> tuple[np.ndarray, np.ndarray]:
    try:
        ev = state.to_idx(d.evictions) if d.evictions else np.zeros(0, np.int64)
        ad = state.to_idx(d.admissions) if d.admissions else np.zeros(0, np.int64)
    except KeyError as exc:
        raise InvariantBreach(f"{policy.name}: unknown request {exc.args[0]}") from None
    if len(np.unique(ev)) != len(ev) or len(np.unique(ad)) != len(ad):
        raise InvariantBreach(f"{policy.name}: duplicate ids in decision")
    if len(ev) and ((state.status[ev] != ACTIVE) | state.finished[ev]).any():
        raise InvariantBreach(f"{policy.name}: evicting a job that is not running")
    if len(ad) and (state.status[ad] != WAITING).any():
        raise InvariantBreach(f"{policy.name}: admitting a job that is not waiting")
    if policy.name in ("hsf", "amax", "arandom") and len(ev):
        raise InvariantBreach(f"{policy.name}: non-evicting policy emitted evictions")
    return ev, ad


def run_simulation(
    config: SimConfig,
    workload: Sequence[Request],
    policy: PolicyKind | str,
    *,
    rng: np.random.Generator | None = None,
    record_events: bool = False,
    max_steps: int | None = None,
    raise_on_violation: bool = False,
) -> SimResult:
    """Simulate ``policy`` on ``workload`` until every request completes.

    At each integer time the policy's evictions are applied, then its
    admissions, then every active job generates one token. The RNG defaults
    to one seeded from ``config.seed``.
    """
    if isinstance(policy, str):
        policy = PolicyKind(policy)
    config.validate(workload)
    if policy.strict and policy.name == "aell":
        check_two_point(workload)
    if policy.strict and policy.name == "amin-hetero":
        check_disjoint(workload)
    if rng is None:
        rng = np.random.default_rng(config.seed)

    state = SystemState(workload, config.prompt_size)
    if policy.name == "amin-hetero":
        state.certified_low = amin_hetero_init(workload)
    else:
        state.certified_low = state.interval_low.copy()
    n = state.n
    true = state.true_output
    rank = _sigma_rank(policy, state, rng) if policy.name == "arandom" else None
    M = config.memory_capacity
    if max_steps is None:
        max_steps = 20 * (int(true.sum()) + n) + 100

    final_start = np.full(n, -1, dtype=np.int64)
    cancels: list[tuple[int, int, int]] = []
    audit: list[tuple[int, Violation]] = []
    memory: list[int] = []
    ev_t: list[np.ndarray] = []
    ev_i: list[np.ndarray] = []
    ev_b: list[np.ndarray] = []
    min_wait: list[int] = []
    open_event = np.full(n, -1, dtype=np.int64)
    evicted_events: list[int] = []
    n_events = 0
    idle = 0
    wall = 0.0 if config.batch_time_model is not None else None
    t = 0

    while (state.status == WAITING).any() or len(state.running_idx()):
        if t >= max_steps:
            raise LivelockError(f"{policy.name}: exceeded {max_steps} steps")
        state.clock = t
        if record_events:
            w = state.status == WAITING
            min_wait.append(int(state.certified_low[w].min()) if w.any() else -1)

        if policy.name == "hsf":
            d = hsf_decide(state, config, true)
        elif policy.name == "amax":
            d = amax_decide(state, config, rng)
        elif policy.name in ("amin", "amin-hetero"):
            d = amin_decide(state, config, rng, policy.bound_update)
        elif policy.name == "arandom":
            d = arandom_decide(state, config, rank, true)
        else:
            d = aell_decide(state, config)
        ev, ad = _validate(state, d, policy)

        if len(ev):
            for k in ev:
                cancels.append((int(state.ids[k]), t, int(state.age[k])))
            # A_min bounds are certified; promote-l may raise a bound to u.
            cap = state.interval_high if policy.name == "aell" else true
            for rid, b in d.bound_updates.items():
                k = state.index[rid]
                if b < state.certified_low[k] or b > cap[k]:
                    raise InvariantBreach(f"{policy.name}: bad bound {b} for request {rid}")
                state.certified_low[k] = b
            if record_events:
                evicted_events.extend(open_event[ev].tolist())
            state.requeue(ev)
        if len(ad):
            state.status[ad] = ACTIVE
            state.last_start[ad] = t
            state.age[ad] = 0
            final_start[ad] = t
            if record_events:
                ev_t.append(np.full(len(ad), t))
                ev_i.append(ad)
                ev_b.append(state.certified_low[ad].copy())
                open_event[ad] = np.arange(n_events, n_events + len(ad))
                n_events += len(ad)

        for v in audit_step(state, M):
            if raise_on_violation:
                raise InvariantBreach(f"t={t}: {v}")
            audit.append((t, v))
        mem = active_memory(state)
        memory.append(mem)

        run = state.running_idx()
        if wall is not None:
            wall += config.batch_time_model(mem)
        if len(run) == 0 and (state.status == WAITING).any():
            idle += 1
            if idle >= 2:
                raise LivelockError(f"{policy.name}: no progress at t={t} with {int((state.status == WAITING).sum())} waiting")
        else:
            idle = 0

        # advance: completed jobs leave, the rest generate one token
        fin = state.active_idx()[state.finished[state.active_idx()]]
        state.status[fin] = DONE
        state.age[run] += 1
        now_done = run[state.age[run] == true[run]]
        state.finished[now_done] = True
        for k in now_done:
            state.completed[int(state.ids[k])] = t + 1
        t += 1

    rest = state.active_idx()
    state.status[rest] = DONE
    state.clock = t

    if (final_start < 0).any():
        raise InvariantBreach("run ended with unstarted requests")
    starts = {int(state.ids[k]): int(final_start[k]) for k in range(n)}
    trace = ScheduleTrace.from_start_times(starts, cancels)
    outputs = {int(state.ids[k]): int(true[k]) for k in range(n)}
    tel, lat = tel_of_trace(trace, outputs) if n else (0, {})
    if lat != state.completed:
        raise InvariantBreach("completion log disagrees with final starts")

    events = None
    if record_events:
        cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0, np.int64))
        evicted = np.zeros(n_events, dtype=bool)
        evicted[evicted_events] = True
        events = AdmissionLog(cat(ev_t), cat(ev_i), cat(ev_b), evicted, np.array(min_wait, dtype=np.int64))
    return SimResult(
        trace=trace,
        tel=int(tel),
        latencies=lat,
        audit=audit,
        memory=np.array(memory, dtype=np.int64),
        steps=t,
        wallclock=wall,
        events=events,
        certified_low=state.certified_low.copy(),
    )


# --------------------------------------------------------------------------
# structural checks


def _paired_starts(traceA: ScheduleTrace, traceB: ScheduleTrace):
    a, b = traceA.start_times(), traceB.start_times()
    if set(a) != set(b):
        raise ModelError("traces cover different request sets")
    ids = sorted(a)
    return np.array([a[i] for i in ids]), np.array([b[i] for i in ids])


def check_corresponding_order(traceA: ScheduleTrace, traceB: ScheduleTrace) -> bool:
    """True iff no pair of jobs starts in strictly opposite order in the two traces."""
    sa, sb = _paired_starts(traceA, traceB)
    if len(sa) < 2:
        return True
    order = np.lexsort((sb, sa))
    sa, sb = sa[order], sb[order]
    # Sorted by (a, b), any pair with a_i < a_j must have b_i <= b_j.
    # Within a block of equal a the order of b is irrelevant.
    run_max = -np.inf
    i = 0
    while i < len(sa):
        j = i
        while j < len(sa) and sa[j] == sa[i]:
            j += 1
        if sb[i:j].min() < run_max:
            return False
        run_max = max(run_max, sb[i:j].max())
        i = j
    return True


def check_delayed(traceA: ScheduleTrace, traceB: ScheduleTrace) -> bool:
    """True iff every job starts no earlier in ``traceB`` than in ``traceA``."""
    sa, sb = _paired_starts(traceA, traceB)
    return bool((sb >= sa).all())


def _load_profile(starts: np.ndarray, lengths: np.ndarray, s: int, T: int) -> np.ndarray:
    """Memory at each time 0..T-1 for jobs started at ``starts`` and never cancelled."""
    load = np.zeros(T + 1, dtype=np.int64)
    for p, o in zip(starts.tolist(), lengths.tolist()):
        load[p : p + o + 1] += s + np.arange(o + 1)
    return load


def check_optimally_packed(
    trace: ScheduleTrace, workload: Sequence[Request], M: int
) -> tuple[bool, tuple[int, int] | None]:
    """Can any single job move into an earlier slot without breaking memory?

    For a job starting in batch ``i >= 1`` the candidate slots are
    ``j .. i-1`` where ``j`` is the latest earlier nonempty batch (or 0 if
    there is none). All other starts stay fixed and true lengths are used.
    Returns ``(True, None)`` or ``(False, (request_id, slot))``.
    """
    if not workload:
        return True, None
    s = workload[0].prompt_size
    starts_map = trace.start_times()
    ids = [r.id for r in workload]
    starts = np.array([starts_map[i] for i in ids], dtype=np.int64)
    lengths = np.array([r.true_output for r in workload], dtype=np.int64)
    T = int((starts + lengths).max()) + 1
    load = _load_profile(starts, lengths, s, T)
    nonempty = sorted({int(p) for p in starts})
    for k, rid in enumerate(ids):
        i, o = int(starts[k]), int(lengths[k])
        if i == 0:
            continue
        earlier = [b for b in nonempty if b < i]
        j = earlier[-1] if earlier else 0
        base = load.copy()
        base[i : i + o + 1] -= s + np.arange(o + 1)
        for slot in range(j, i):
            trial = base[slot : slot + o + 1] + s + np.arange(o + 1)
            if (trial <= M).all():
                return False, (rid, slot)
    return True, None


@dataclass
class CoupledResult:
    tel1: int
    tel2: int
    trace1: ScheduleTrace = field(repr=False)
    trace2: ScheduleTrace = field(repr=False)


def coupled_run(
    sigma: Sequence[int],
    workload: Sequence[Request],
    M1: int,
    M2: int,
    config: SimConfig | None = None,
) -> CoupledResult:
    """Run A_random with the same permutation under capacities ``M1 >= M2``."""
    if M2 > M1:
        raise ModelError("coupled run needs M2 <= M1")
    s = config.prompt_size if config else (workload[0].prompt_size if workload else 0)
    seed = config.seed if config else 0
    kind = PolicyKind("arandom", sigma=list(sigma))
    r1 = run_simulation(SimConfig(M1, s, seed), workload, kind)
    r2 = r1 if M2 == M1 else run_simulation(SimConfig(M2, s, seed), workload, kind)
    return CoupledResult(r1.tel, r2.tel, r1.trace, r2.trace)


def latency_scaling_holds(tel1: int, tel2: int, M1: int, M2: int, c: float = 8.0) -> tuple[bool, bool]:
    """(raw, slackened) checks of ``TEL2 <= (M1/M2) * TEL1``, slack ``1 + c/M2``."""
    bound = M1 / M2 * tel1
    return tel2 <= bound, tel2 <= bound * (1 + c / M2)
