"""Fleet topology configuration: tanks, units per tank, detector bindings.

JSON file schema (see docs/api.md for the full reference):

    {
      "seed": 1,
      "units_per_tank": 3,
      "capture_interval_s": 10.0,
      "detector": "oracle",
      "noise": {"miss_rate": 0.1, "false_positive_rate": 1.0,
                "confusion_diagonal": 0.95, "box_jitter_sigma": 0.004},
      "tank_defaults": {"volume_liters": 1.0, "time_compression": 36.0},
      "tanks": [{"tank_id": "tank-01"},
                {"tank_id": "tank-02", "overrides": {"fertilized_fraction": 0.2}}],
      "auto_switch_mode": true,
      "reorder_window_s": 60.0,
      "api_token": null
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from spawnwatch.detect import DetectorNoise, uniform_confusion
from spawnwatch.simtank.config import ScenarioError, TankConfig


@dataclass(frozen=True)
class TankSpec:
    tank_id: str
    config: TankConfig


@dataclass(frozen=True)
class FleetTopology:
    tanks: tuple[TankSpec, ...]
    units_per_tank: int = 3
    capture_interval_s: float = 10.0
    detector: str = "oracle"
    noise: DetectorNoise = field(default_factory=DetectorNoise)
    seed: int = 0
    auto_switch_mode: bool = True
    reorder_window_s: float = 60.0
    api_token: str | None = None

    def __post_init__(self) -> None:
        if not self.tanks:
            raise ScenarioError("topology needs at least one tank")
        ids = [t.tank_id for t in self.tanks]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate tank_id in topology")
        if self.units_per_tank < 1:
            raise ScenarioError("units_per_tank must be >= 1")


def _noise_from_dict(obj: dict) -> DetectorNoise:
    kwargs = dict(obj)
    diagonal = kwargs.pop("confusion_diagonal", None)
    if diagonal is not None:
        kwargs["confusion"] = uniform_confusion(float(diagonal))
    return DetectorNoise(**kwargs)


def topology_from_dict(obj: dict) -> FleetTopology:
    tank_field_names = {f.name for f in fields(TankConfig)}
    defaults = obj.get("tank_defaults", {})
    unknown = set(defaults) - tank_field_names
    tanks = []
    base_seed = int(obj.get("seed", 0))
    for i, tank_obj in enumerate(obj.get("tanks", [])):
        overrides = tank_obj.get("overrides", {})
        unknown |= set(overrides) - tank_field_names
        merged = {**defaults, **overrides}
        merged.setdefault("seed", base_seed * 100003 + i)
        tanks.append(TankSpec(tank_id=tank_obj["tank_id"], config=TankConfig(**merged)))
    if unknown:
        raise ScenarioError("unknown tank config fields: " + ", ".join(sorted(unknown)))
    return FleetTopology(
        tanks=tuple(tanks),
        units_per_tank=int(obj.get("units_per_tank", 3)),
        capture_interval_s=float(obj.get("capture_interval_s", 10.0)),
        detector=obj.get("detector", "oracle"),
        noise=_noise_from_dict(obj.get("noise", {})),
        seed=base_seed,
        auto_switch_mode=bool(obj.get("auto_switch_mode", True)),
        reorder_window_s=float(obj.get("reorder_window_s", 60.0)),
        api_token=obj.get("api_token"),
    )


def load_topology(path: str | Path) -> FleetTopology:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON: {exc}") from exc
    return topology_from_dict(obj)
