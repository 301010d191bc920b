"""Scenario format, importers and result writers."""

from .scenario import (
    ScenarioDescription,
    ScenarioError,
    bundled_scenario,
    load_scenario,
    parse_scenario,
    save_scenario,
    serialize_scenario,
)

__all__ = [
    "ScenarioDescription",
    "ScenarioError",
    "bundled_scenario",
    "load_scenario",
    "parse_scenario",
    "save_scenario",
    "serialize_scenario",
]
