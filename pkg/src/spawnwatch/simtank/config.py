"""Tank configuration and the declarative key = value scenario format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from spawnwatch.model import PhaseTimeline

HOUR = 3600.0
DAY = 86400.0


class ScenarioError(ValueError):
    """Invalid scenario text; message names every offending field."""


@dataclass(frozen=True)
class TankConfig:
    """Static parameters of one simulated larval rearing tank.

    Biological time constants (dwell means, damage rate, phase bounds) are
    given in biological hours/days and divided by ``time_compression`` to
    get simulated seconds, so a compressed run plays the same biology fast.
    """

    volume_liters: float = 500.0
    stocking_density_per_ml: float = 1.0
    fertilized_fraction: float = 0.9
    damage_rate_per_hour: float = 0.01
    dissolution_chain_factor: float = 0.0
    damaged_persistence_hours: float = 6.0
    fov_volume_fraction: float = 0.01
    surface_fov_area_fraction: float = 0.01
    time_compression: float = 1.0
    seed: int = 0
    depth_m: float = 1.0
    focus_depth_min_m: float = 0.3
    focus_depth_max_m: float = 0.5
    t1_hours: float = 12.0
    t2_days: float = 6.0
    dwell_egg_hours: float = 1.5
    dwell_first_cleavage_hours: float = 0.75
    dwell_two_cell_hours: float = 1.0
    dwell_four_eight_hours: float = 2.0
    frame_width_mm: float = 6.0
    organism_diameter_min_um: float = 150.0
    organism_diameter_max_um: float = 500.0

    def __post_init__(self) -> None:
        problems = []
        if self.volume_liters <= 0:
            problems.append("volume_liters must be > 0")
        if self.stocking_density_per_ml <= 0:
            problems.append("stocking_density_per_ml must be > 0")
        if not (0.0 <= self.fertilized_fraction <= 1.0):
            problems.append("fertilized_fraction must be in [0, 1]")
        if self.damage_rate_per_hour < 0:
            problems.append("damage_rate_per_hour must be >= 0")
        if self.dissolution_chain_factor < 0:
            problems.append("dissolution_chain_factor must be >= 0")
        if self.damaged_persistence_hours <= 0:
            problems.append("damaged_persistence_hours must be > 0")
        if not (0.0 < self.fov_volume_fraction <= 1.0):
            problems.append("fov_volume_fraction must be in (0, 1]")
        if not (0.0 < self.surface_fov_area_fraction <= 1.0):
            problems.append("surface_fov_area_fraction must be in (0, 1]")
        if self.time_compression < 1.0:
            problems.append("time_compression must be >= 1")
        if self.depth_m <= 0:
            problems.append("depth_m must be > 0")
        if not (0.0 <= self.focus_depth_min_m < self.focus_depth_max_m <= self.depth_m):
            problems.append("focus band must satisfy 0 <= min < max <= depth_m")
        if not (0.0 < self.t1_hours * HOUR < self.t2_days * DAY):
            problems.append("phase bounds must satisfy 0 < t1 < t2")
        for name in (
            "dwell_egg_hours",
            "dwell_first_cleavage_hours",
            "dwell_two_cell_hours",
            "dwell_four_eight_hours",
        ):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if self.frame_width_mm <= 0:
            problems.append("frame_width_mm must be > 0")
        if not (0 < self.organism_diameter_min_um < self.organism_diameter_max_um):
            problems.append("organism diameter range must be ordered and positive")
        if problems:
            raise ScenarioError("; ".join(problems))

    def initial_population(self) -> int:
        return round(self.volume_liters * 1000.0 * self.stocking_density_per_ml)

    def timeline(self) -> PhaseTimeline:
        """Phase bounds in simulated seconds (compressed)."""
        return PhaseTimeline(
            t0=0.0,
            t1=self.t1_hours * HOUR / self.time_compression,
            t2=self.t2_days * DAY / self.time_compression,
        )

    def bio_hours_to_sim_s(self, hours: float) -> float:
        return hours * HOUR / self.time_compression

    def diameter_range_normalized(self) -> tuple[float, float]:
        """Organism diameter range as a fraction of the frame width."""
        scale = 1.0 / (self.frame_width_mm * 1000.0)
        return (self.organism_diameter_min_um * scale, self.organism_diameter_max_um * scale)


@dataclass(frozen=True)
class Scenario:
    """A tank config plus the capture schedule and render options."""

    tank: TankConfig = field(default_factory=TankConfig)
    label: str = "run"
    duration_s: float = 3600.0
    capture_interval_s: float = 10.0
    render: bool = False
    # Square frames keep normalized shapes isotropic in pixel space, which
    # is what the shape-based reference detector classifies best.
    frame_width_px: int = 640
    frame_height_px: int = 640
    render_noise_sigma: float = 6.0

    def __post_init__(self) -> None:
        problems = []
        if self.duration_s < 0:
            problems.append("duration_s must be >= 0")
        if self.capture_interval_s < 1.0:
            problems.append("capture_interval_s must be >= 1")
        if self.frame_width_px <= 0 or self.frame_height_px <= 0:
            problems.append("frame dimensions must be positive")
        if self.render_noise_sigma < 0:
            problems.append("render_noise_sigma must be >= 0")
        if problems:
            raise ScenarioError("; ".join(problems))


_TANK_FIELDS = {f.name: f.type for f in fields(TankConfig)}
_SCENARIO_FIELDS = {f.name: f.type for f in fields(Scenario) if f.name != "tank"}


def _convert(name: str, typ: str, raw: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ScenarioError(f"field {name!r}: {exc}") from exc


def parse_scenario(text: str) -> Scenario:
    """Parse the key = value scenario format (``#`` starts a comment)."""
    tank_kwargs: dict = {}
    scen_kwargs: dict = {}
    unknown = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected key = value, got {raw_line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in _TANK_FIELDS:
            tank_kwargs[key] = _convert(key, _TANK_FIELDS[key], raw)
        elif key in _SCENARIO_FIELDS:
            scen_kwargs[key] = _convert(key, _SCENARIO_FIELDS[key], raw)
        else:
            unknown.append(key)
    if unknown:
        raise ScenarioError("unknown scenario fields: " + ", ".join(sorted(unknown)))
    return Scenario(tank=TankConfig(**tank_kwargs), **scen_kwargs)


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def scenario_text(scenario: Scenario) -> str:
    """Serialize a scenario back to the key = value format (round-trips)."""
    lines = [f"# scenario: {scenario.label}"]
    for name in _SCENARIO_FIELDS:
        value = getattr(scenario, name)
        lines.append(f"{name} = {str(value).lower() if isinstance(value, bool) else value}")
    for name in _TANK_FIELDS:
        lines.append(f"{name} = {getattr(scenario.tank, name)}")
    return "\n".join(lines) + "\n"
