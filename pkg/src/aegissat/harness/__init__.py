"""Scenario harness: load, run, measure and export reproducible experiments."""

from .metrics import MetricsSummary, RegionStats, collect_metrics, summarize
from .runner import (
    EXIT_EXPECTATION,
    EXIT_MALFORMED,
    EXIT_OK,
    ExpectationResult,
    ScenarioResult,
    export_results,
    read_events,
    run_scenario,
)
from .scenario import Scenario, load_scenario, parse_scenario, shipped_scenario, shipped_scenarios
from .testbed import KeySet, Testbed, generate_keyset, read_keyset, write_keyset

__all__ = [
    "EXIT_EXPECTATION",
    "EXIT_MALFORMED",
    "EXIT_OK",
    "ExpectationResult",
    "KeySet",
    "MetricsSummary",
    "RegionStats",
    "Scenario",
    "ScenarioResult",
    "Testbed",
    "collect_metrics",
    "export_results",
    "generate_keyset",
    "load_scenario",
    "parse_scenario",
    "read_events",
    "read_keyset",
    "run_scenario",
    "shipped_scenario",
    "shipped_scenarios",
    "summarize",
    "write_keyset",
]
