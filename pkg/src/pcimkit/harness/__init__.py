"""Deterministic scenario simulator, adversary families and the allocation report."""

from __future__ import annotations

from .adversary import AdversarySummary, run_adversary_suite
from .report import AllocationMatrix, emit_allocation_report
from .runner import RunResult, Simulation, run_scenario
from .scenario import Scenario, load_scenario, merge_scenarios, parse_scenario

__all__ = [
    "AdversarySummary",
    "AllocationMatrix",
    "RunResult",
    "Scenario",
    "Simulation",
    "emit_allocation_report",
    "load_scenario",
    "merge_scenarios",
    "parse_scenario",
    "run_adversary_suite",
    "run_scenario",
]
