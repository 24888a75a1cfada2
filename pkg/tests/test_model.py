from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schedlab.model import (
    ActiveJob,
    CandidateStateError,
    HorizonProfile,
    ModelError,
    Request,
    ScheduleTrace,
    SimConfig,
    SystemState,
    active_memory,
    audit_step,
    horizon_feasible,
    tel_of_trace,
)

from conftest import make_workload


def brute_horizon(t, s, M, active, rem, cand_lengths):
    """Literal evaluation over absolute times t' in [t, t + max candidate length]."""
    if not cand_lengths:
        return True
    for tp in range(t, t + max(cand_lengths) + 1):
        load = sum(s + tp - p for rid, p in active if t + rem[rid] >= tp)
        load += sum(s + tp - t for L in cand_lengths if L >= tp - t)
        if load > M:
            return False
    return True


class TestRequest:
    def test_rejects_output_outside_interval(self):
        with pytest.raises(ModelError):
            Request(0, 0, 5, 1, 4)

    def test_certified_defaults_to_low(self):
        assert Request(0, 0, 3, 2, 4).certified_low == 2

    def test_rejects_certified_above_output(self):
        with pytest.raises(ModelError):
            Request(0, 0, 3, 1, 4, certified_low=4)


class TestActiveMemory:
    def test_empty(self):
        st_ = SystemState(make_workload([1, 2]), 0)
        assert active_memory(st_) == 0

    def test_single_job(self):
        w = make_workload([3], s=1)
        st_ = SystemState.from_jobs(w, 1, clock=2, active=[ActiveJob(0, 0, 2)])
        assert active_memory(st_) == 3

    def test_example1_start(self, example1):
        w, _ = example1
        st_ = SystemState.from_jobs(w, 1, 0, [ActiveJob(i, 0, 0) for i in range(5)])
        assert active_memory(st_) == 5


class TestHorizonFeasible:
    def test_example1_all_unit(self, example1):
        w, M = example1
        st_ = SystemState(w, 1)
        assert horizon_feasible(st_, range(5), {i: 1 for i in range(5)}, M)

    def test_example1_three_long(self, example1):
        w, M = example1
        st_ = SystemState(w, 1)
        assert not horizon_feasible(st_, [0, 1, 2], {i: 4 for i in range(3)}, M)
        assert horizon_feasible(st_, [0, 1], {i: 4 for i in range(2)}, M)

    def test_empty_candidates(self, example1):
        w, M = example1
        assert horizon_feasible(SystemState(w, 1), [], {}, M)

    def test_rejects_active_candidate(self, example1):
        w, M = example1
        st_ = SystemState.from_jobs(w, 1, 1, [ActiveJob(0, 0, 1)])
        with pytest.raises(CandidateStateError):
            horizon_feasible(st_, [0], {0: 1}, M)

    def test_rejects_completed_candidate(self, example1):
        w, M = example1
        st_ = SystemState.from_jobs(w, 1, 2, completed={0: 1})
        with pytest.raises(CandidateStateError):
            horizon_feasible(st_, [0], {0: 1}, M)

    @settings(max_examples=300, deadline=None)
    @given(
        s=st.integers(0, 3),
        M=st.integers(1, 40),
        ages=st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=5),
        cands=st.lists(st.integers(1, 7), max_size=5),
    )
    def test_matches_brute_force(self, s, M, ages, cands):
        n_act = len(ages)
        outputs = [a + r + 1 for a, r in ages] + [8] * len(cands)
        w = make_workload(outputs, s=s, low=1, high=20)
        t = 6
        active = [ActiveJob(i, t - a, a) for i, (a, _) in enumerate(ages)]
        st_ = SystemState.from_jobs(w, s, t, active)
        rem = {i: r for i, (_, r) in enumerate(ages)}
        assumed = dict(rem)
        cid = list(range(n_act, n_act + len(cands)))
        assumed.update(zip(cid, cands))
        got = horizon_feasible(st_, cid, assumed, M)
        want = brute_horizon(t, s, M, [(i, t - a) for i, (a, _) in enumerate(ages)], rem, cands)
        assert got == want


class TestHorizonProfile:
    @settings(max_examples=200, deadline=None)
    @given(
        s=st.integers(0, 3),
        M=st.integers(5, 60),
        lengths=st.lists(st.integers(1, 6), min_size=1, max_size=10),
    )
    def test_prefix_matches_one_at_a_time(self, s, M, lengths):
        lengths = sorted(lengths)
        block = HorizonProfile(s, M, np.zeros(0, np.int64), np.zeros(0, np.int64))
        k = block.admit_prefix(np.array(lengths))
        single = HorizonProfile(s, M, np.zeros(0, np.int64), np.zeros(0, np.int64))
        j = 0
        for L in lengths:
            if not single.fits(L):
                break
            single.add(L)
            j += 1
        assert k == j


class TestTel:
    def test_example1_hsf(self):
        trace = ScheduleTrace([set(range(5))])
        assert tel_of_trace(trace, {i: 1 for i in range(5)})[0] == 5

    def test_example1_amax(self):
        trace = ScheduleTrace([{0, 1}, {2, 3}, {4}])
        assert tel_of_trace(trace, {i: 1 for i in range(5)})[0] == 9

    def test_single(self):
        total, lat = tel_of_trace(ScheduleTrace([{7}]), {7: 3})
        assert total == 3 and lat == {7: 3}

    def test_missing_request(self):
        with pytest.raises(ModelError):
            tel_of_trace(ScheduleTrace([{0}]), {0: 1, 1: 1})

    @given(st.dictionaries(st.integers(0, 50), st.tuples(st.integers(0, 20), st.integers(1, 9)), min_size=1))
    def test_equals_sum_of_latencies(self, plan):
        trace = ScheduleTrace.from_start_times({k: v[0] for k, v in plan.items()})
        total, lat = tel_of_trace(trace, {k: v[1] for k, v in plan.items()})
        assert total == sum(v[0] + v[1] for v in plan.values()) == sum(lat.values())


class TestTraceInvariants:
    def test_duplicate_start_rejected(self):
        with pytest.raises(ModelError):
            ScheduleTrace([{1}, {1}])

    def test_cancel_after_final_start_rejected(self):
        with pytest.raises(ModelError):
            ScheduleTrace([{1}, set()], cancellations=[(1, 1, 1)])


class TestAudit:
    def test_overrun_by_one(self):
        w = make_workload([5, 5], s=1)
        st_ = SystemState.from_jobs(w, 1, 3, [ActiveJob(0, 0, 3), ActiveJob(1, 1, 2)])
        v = audit_step(st_, 6)  # memory 4 + 3 = 7
        assert len(v) == 1 and v[0].amount == 1 and v[0].kind == "memory" and v[0].request_id == 1

    def test_empty_state(self):
        assert audit_step(SystemState(make_workload([1]), 0), 1) == []

    def test_age_overrun(self):
        w = make_workload([2])
        st_ = SystemState.from_jobs(w, 0, 3, [ActiveJob(0, 0, 3)])
        v = audit_step(st_, 100)
        assert [x.kind for x in v] == ["age"]

    def test_never_raises(self):
        st_ = SystemState.from_jobs(make_workload([1]), 0, 0, [ActiveJob(0, 0, 0)])
        st_.age = None  # corrupt on purpose
        v = audit_step(st_, 1)
        assert v and v[0].kind.startswith("audit-error")


class TestSimConfig:
    def test_memory_below_low(self):
        with pytest.raises(ModelError):
            SimConfig(3, 1).validate(make_workload([3], s=1, low=3, high=3))

    def test_positive_memory(self):
        with pytest.raises(ModelError):
            SimConfig(0)
