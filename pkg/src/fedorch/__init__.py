"""Deterministic simulator and library for federated data, compute and network
co-orchestration across managed clusters."""

from .harness import RunResult, Simulation, run
from .model import Scenario, ValidationError, validate_scenario
from .scenario import ScenarioParseError, load, load_fixture

__all__ = [
    "RunResult", "Scenario", "ScenarioParseError", "Simulation", "ValidationError",
    "load", "load_fixture", "run", "validate_scenario",
]
__version__ = "0.1.0"
