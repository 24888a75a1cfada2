"""Scheduling policies behind a uniform per-step decision contract.

Each ``*_decide`` function looks at the observable part of a
:class:`SystemState` and returns a :class:`PolicyDecision`. Only the
hindsight policies (``hsf`` and ``arandom``) are handed true lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    ModelError,
    Request,
    SimConfig,
    SystemState,
    profile_for,
)

POLICY_NAMES = ("hsf", "amax", "amin", "arandom", "aell", "amin-hetero")
HINDSIGHT = {"hsf", "arandom"}


@dataclass
class PolicyDecision:
    evictions: list[int] = field(default_factory=list)
    admissions: list[int] = field(default_factory=list)
    # new certified lower bounds for evicted jobs, by request id
    bound_updates: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.evictions) & set(self.admissions):
            raise ModelError("a request cannot be evicted and admitted in the same step")


@dataclass
class PolicyKind:
    """Which policy to run and its knobs.

    ``sigma`` is the fixed permutation for ``arandom`` (drawn from the run
    seed when omitted). ``bound_update`` selects the certified bound written
    on eviction under A_min: ``"age+1"`` (default) or ``"age"``.
    """

    name: str
    sigma: Sequence[int] | None = None
    strict: bool = False
    bound_update: str = "age+1"

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ModelError(f"unknown policy {self.name!r}; choose from {', '.join(POLICY_NAMES)}")
        if self.bound_update not in ("age+1", "age"):
            raise ModelError("bound_update must be 'age+1' or 'age'")

    @property
    def hindsight(self) -> bool:
        return self.name in HINDSIGHT


def _shuffled_sort(idx: np.ndarray, key: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sort ``idx`` by ``key[idx]`` ascending, breaking ties uniformly at random."""
    idx = idx[rng.permutation(len(idx))]
    return idx[np.argsort(key[idx], kind="stable")]


def _admit_by_level(
    state: SystemState,
    config: SimConfig,
    w: np.ndarray,
    assumed: np.ndarray,
    rng: np.random.Generator,
    keep: np.ndarray | None = None,
) -> list[int]:
    """Sorted-prefix admission with uniformly random ties.

    Equivalent to shuffling, sorting by assumed length and admitting the
    longest feasible prefix, but only draws the jobs that actually get in.
    """
    prof = profile_for(state, config.memory_capacity, assumed, idx=keep)
    lens = assumed[w]
    out: list[np.ndarray] = []
    for L in np.unique(lens).tolist():
        level = w[lens == L]
        k = min(len(level), prof.max_copies(L))
        if k:
            prof.add(L, k)
            out.append(rng.choice(level, size=k, replace=False))
        if k < len(level):
            break
    return state.ids[np.concatenate(out)].tolist() if out else []


def _admit(state: SystemState, config: SimConfig, order: np.ndarray, assumed: np.ndarray) -> list[int]:
    prof = profile_for(state, config.memory_capacity, assumed)
    k = prof.admit_prefix(assumed[order])
    return state.ids[order[:k]].tolist()


def hsf_decide(state: SystemState, config: SimConfig, true_lengths: np.ndarray) -> PolicyDecision:
    """Hindsight shortest-first; ties on length go to the smaller id."""
    w = state.waiting_idx()
    if not len(w):
        return PolicyDecision()
    order = w[np.lexsort((state.ids[w], true_lengths[w]))]
    return PolicyDecision(admissions=_admit(state, config, order, true_lengths))


def amax_decide(state: SystemState, config: SimConfig, rng: np.random.Generator) -> PolicyDecision:
    """Plan every job at its upper bound and start as many as fit.

    With a common upper bound any subset of the maximal size is equally good,
    so a uniformly random one is taken. With per-request upper bounds the
    shortest bounds go first, which is what maximizes the count.
    """
    w = state.waiting_idx()
    if not len(w):
        return PolicyDecision()
    return PolicyDecision(admissions=_admit_by_level(state, config, w, state.interval_high, rng))


def _amin_evictions(state, config, rng, mode):
    run = state.running_idx()
    s, M = state.prompt_size, config.memory_capacity
    foot = s + state.age[run] + 1
    excess = int(foot.sum()) - M
    if excess <= 0:
        return [], {}
    order = _shuffled_sort(run, state.certified_low, rng)
    freed = np.cumsum(s + state.age[order] + 1)
    k = int(np.searchsorted(freed, excess)) + 1
    gone = order[:k]
    bump = state.age[gone] + (1 if mode == "age+1" else 0)
    new = np.maximum(state.certified_low[gone], bump)
    ids = state.ids[gone].tolist()
    return ids, dict(zip(ids, new.tolist()))


def amin_decide(
    state: SystemState,
    config: SimConfig,
    rng: np.random.Generator,
    bound_update: str = "age+1",
) -> PolicyDecision:
    """Lower-bound policy with eviction and certified-bound refinement."""
    evict, updates = _amin_evictions(state, config, rng, bound_update)
    w = state.waiting_idx()
    if not len(w):
        return PolicyDecision(evict, [], updates)
    # Plan against the post-eviction active set; evicted jobs rejoin the
    # queue only after this step, so they are not candidates yet.
    keep = state.active_idx()
    if evict:
        keep = np.setdiff1d(keep, state.to_idx(evict))
    return PolicyDecision(evict, _admit_by_level(state, config, w, state.certified_low, rng, keep), updates)


def arandom_decide(
    state: SystemState,
    config: SimConfig,
    sigma_rank: np.ndarray,
    true_lengths: np.ndarray,
) -> PolicyDecision:
    """Start the longest prefix of the remaining jobs in permutation order.

    ``sigma_rank[k]`` is the position of workload index ``k`` in the permutation.
    """
    w = state.waiting_idx()
    if not len(w):
        return PolicyDecision()
    order = w[np.argsort(sigma_rank[w], kind="stable")]
    return PolicyDecision(admissions=_admit(state, config, order, true_lengths))


def aell_decide(state: SystemState, config: SimConfig) -> PolicyDecision:
    """Promote-l: a job that has generated its bound's worth of tokens without
    finishing is known to be long.

    It is cancelled, its bound is raised to the upper end of its interval and
    it goes to the back of the queue. A job already on its second pass has
    bound ``u`` and is never cancelled again.
    """
    run = state.running_idx()
    over = run[(state.age[run] >= state.certified_low[run]) & (state.certified_low[run] < state.interval_high[run])]
    evict = state.ids[over].tolist()
    updates = dict(zip(evict, state.interval_high[over].tolist()))
    w = state.waiting_idx()
    if not len(w):
        return PolicyDecision(evict, [], updates)
    keep = np.setdiff1d(state.active_idx(), over)
    prof = profile_for(state, config.memory_capacity, state.certified_low, idx=keep)
    k = prof.admit_prefix(state.certified_low[w])
    return PolicyDecision(evict, state.ids[w[:k]].tolist(), updates)


def amin_hetero_init(workload: Sequence[Request]) -> np.ndarray:
    """Starting certified bounds when each request carries its own interval."""
    return np.array([r.interval_low for r in workload], dtype=np.int64)


def check_two_point(workload: Sequence[Request]) -> None:
    """Strict-mode guard for promote-l: one shared interval, outputs at its ends."""
    if not workload:
        return
    ends = {(r.interval_low, r.interval_high) for r in workload}
    if len(ends) != 1:
        raise ModelError("promote-l strict mode needs a single shared interval")
    lo, hi = ends.pop()
    bad = [r.id for r in workload if r.true_output not in (lo, hi)]
    if bad:
        raise ModelError(f"requests {bad[:5]} have outputs strictly inside [{lo}, {hi}]")


def check_disjoint(workload: Sequence[Request]) -> None:
    """Strict-mode guard for the heterogeneous variant: distinct intervals must not overlap."""
    spans = sorted({(r.interval_low, r.interval_high) for r in workload})
    for (a_lo, a_hi), (b_lo, b_hi) in zip(spans, spans[1:]):
        if b_lo <= a_hi:
            raise ModelError(f"intervals [{a_lo}, {a_hi}] and [{b_lo}, {b_hi}] overlap")
