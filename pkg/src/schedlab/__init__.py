"""Simulator and analysis toolkit for memory-constrained LLM batch scheduling."""

from .model import Request, SimConfig, ScheduleTrace, SystemState, active_memory, audit_step, horizon_feasible, tel_of_trace
from .policies import PolicyDecision, PolicyKind
from .engine import run_simulation

__all__ = [
    "Request",
    "SimConfig",
    "ScheduleTrace",
    "SystemState",
    "PolicyDecision",
    "PolicyKind",
    "active_memory",
    "audit_step",
    "horizon_feasible",
    "tel_of_trace",
    "run_simulation",
]
