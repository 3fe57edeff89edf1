"""Deterministic discrete-event harness: clock, links, world, reports, CLI."""

from __future__ import annotations

from dataclasses import dataclass

from .report import build_report
from .scenario import Scenario
from .world import World


@dataclass
class RunResult:
    header: dict
    records: list
    report: dict
    world: World


def run_scenario(scenario: Scenario) -> RunResult:
    """Run a scenario to its horizon and derive the report from the trace."""
    world = World(scenario)
    world.run()
    header = world.header()
    report = build_report(header, world.records)
    return RunResult(header=header, records=world.records, report=report, world=world)
