"""Larval-tank simulator: population dynamics, frame capture, rendering."""

from spawnwatch.simtank.config import (
    Scenario,
    ScenarioError,
    TankConfig,
    load_scenario,
    parse_scenario,
    scenario_text,
)
from spawnwatch.simtank.render import read_pgm, render_frame, write_pgm
from spawnwatch.simtank.tank import Distractor, FrameTruth, Tank

__all__ = [
    "Distractor",
    "FrameTruth",
    "Scenario",
    "ScenarioError",
    "Tank",
    "TankConfig",
    "load_scenario",
    "parse_scenario",
    "read_pgm",
    "render_frame",
    "scenario_text",
    "write_pgm",
]
