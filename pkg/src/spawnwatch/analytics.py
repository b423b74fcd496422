"""Culture-health analytics over per-tank telemetry series.

Fertilization success per frame, rolling statistics with gap skipping,
scaling-factor tank counts calibrated from manual samples, RMSE against
reference series, health classification with alerting, and the harvest
and labor reports operators act on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from spawnwatch.model import OperationalMode, StageCounts

Optionals = Sequence[float | None]


def fertilization_success(counts: StageCounts) -> float | None:
    """Fertilized fraction of viable spawn; None when nothing viable was seen.

    Damaged spawn are nonviable and excluded from both sides of the ratio.
    """
    viable = counts.viable_total
    return None if viable == 0 else counts.fertilized_total / viable


def _window_bounds(i: int, n: int, window: int, centered: bool) -> tuple[int, int]:
    if centered:
        lo = i - (window - 1) // 2
        hi = i + window // 2
    else:
        lo, hi = i - window + 1, i
    return max(0, lo), min(n - 1, hi)


def rolling_mean(values: Optionals, window: int, centered: bool = False) -> list[float | None]:
    """Windowed mean; None inputs are skipped (the window shrinks rather
    than fabricating values) and all-None windows stay None."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(values) == 0:
        raise ValueError("empty series")
    out: list[float | None] = []
    n = len(values)
    for i in range(n):
        lo, hi = _window_bounds(i, n, window, centered)
        defined = [v for v in values[lo : hi + 1] if v is not None]
        out.append(math.fsum(defined) / len(defined) if defined else None)
    return out


def rolling_std(values: Optionals, window: int, centered: bool = False) -> list[float | None]:
    """Windowed population standard deviation over the same windows as
    rolling_mean."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(values) == 0:
        raise ValueError("empty series")
    out: list[float | None] = []
    n = len(values)
    for i in range(n):
        lo, hi = _window_bounds(i, n, window, centered)
        defined = [v for v in values[lo : hi + 1] if v is not None]
        if not defined:
            out.append(None)
            continue
        mean = math.fsum(defined) / len(defined)
        out.append(math.sqrt(math.fsum((v - mean) ** 2 for v in defined) / len(defined)))
    return out


def calibrate_scaling(manual_total: int, image_counts: Sequence[float]) -> float:
    """Scaling factor converting per-image counts to whole-tank counts."""
    if not image_counts:
        raise ValueError("no image counts inside the calibration window")
    mean = math.fsum(image_counts) / len(image_counts)
    if mean <= 0:
        raise ValueError("mean image count is zero; cannot calibrate")
    return manual_total / mean


def rmse(
    estimates: Sequence[tuple[float, float]],
    references: Sequence[tuple[float, float]],
    pair_tolerance_s: float = 600.0,
) -> float:
    """Root-mean-square error between two (time, value) series.

    Each reference point pairs with the nearest-in-time estimate within
    the tolerance; unpairable references are skipped. Raises if nothing
    pairs.
    """
    if not estimates or not references:
        raise ValueError("need at least one point on each side")
    est = sorted(estimates)
    times = [t for t, _ in est]
    total, n = 0.0, 0
    import bisect

    for t_ref, v_ref in references:
        k = bisect.bisect_left(times, t_ref)
        best, best_dt = None, pair_tolerance_s
        for j in (k - 1, k):
            if 0 <= j < len(est):
                dt = abs(est[j][0] - t_ref)
                if dt <= best_dt:
                    best, best_dt = est[j][1], dt
        if best is not None:
            total += (best - v_ref) ** 2
            n += 1
    if n == 0:
        raise ValueError("no pairable points within tolerance")
    return math.sqrt(total / n)


class CultureHealth(str, Enum):
    SUCCESSFUL = "successful"
    DETERIORATING = "deteriorating"
    INDETERMINATE = "indeterminate"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class HealthConfig:
    """Operational thresholds for culture classification (site-tunable)."""

    threshold_high: float = 0.7
    threshold_low: float = 0.4
    grace_points: int = 30
    trend_horizon: int = 20
    # Slope is least-squares per point; the tolerance absorbs sign noise
    # on plateaus, and strong_decline flags a collapsing curve early.
    trend_tolerance: float = 0.005
    strong_decline: float = 0.01
    min_points: int = 10


def _lsq_slope(values: Sequence[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    xbar = (n - 1) / 2.0
    ybar = math.fsum(values) / n
    num = math.fsum((i - xbar) * (v - ybar) for i, v in enumerate(values))
    den = math.fsum((i - xbar) ** 2 for i in range(n))
    return num / den


def classify_culture(rolling_f: Optionals, config: HealthConfig | None = None) -> CultureHealth:
    """Classify a culture from its rolling fertilization curve.

    Successful: high fertilization with a non-declining trend.
    Deteriorating: persistently low fertilization past the grace period,
    or a strongly negative trend below the success band.
    """
    cfg = config or HealthConfig()
    defined = [v for v in rolling_f if v is not None]
    if len(defined) < cfg.min_points:
        return CultureHealth.INDETERMINATE
    latest = defined[-1]
    slope = _lsq_slope(defined[-cfg.trend_horizon :])
    if latest >= cfg.threshold_high and slope >= -cfg.trend_tolerance:
        return CultureHealth.SUCCESSFUL
    if latest < cfg.threshold_low and len(defined) >= cfg.grace_points:
        return CultureHealth.DETERIORATING
    if slope <= -cfg.strong_decline and latest < cfg.threshold_high:
        return CultureHealth.DETERIORATING
    return CultureHealth.INDETERMINATE


class HealthTracker:
    """Stateful classifier that reports transitions into deterioration."""

    def __init__(self, config: HealthConfig | None = None):
        self.config = config or HealthConfig()
        self.status = CultureHealth.INDETERMINATE

    def update(self, rolling_f: Optionals) -> tuple[CultureHealth, bool]:
        """Returns (status, alert) where alert fires on the transition
        into DETERIORATING."""
        new = classify_culture(rolling_f, self.config)
        alert = new == CultureHealth.DETERIORATING and self.status != CultureHealth.DETERIORATING
        self.status = new
        return new, alert


@dataclass(frozen=True)
class HarvestPlan:
    required_larvae: float
    proportion: float
    shortfall: bool


def harvest_plan(
    tank_estimate: float,
    substrate_units: int,
    target_density_per_liter: float,
    settlement_tank_liters: float,
) -> HarvestPlan:
    """Fraction of the culture tank to harvest for the settlement target."""
    if tank_estimate <= 0:
        raise ValueError("tank_estimate must be > 0")
    if substrate_units <= 0 or target_density_per_liter <= 0 or settlement_tank_liters <= 0:
        raise ValueError("substrate_units, density and volume must be > 0")
    required = substrate_units * target_density_per_liter * settlement_tank_liters
    return HarvestPlan(
        required_larvae=required,
        proportion=min(1.0, required / tank_estimate),
        shortfall=required > tank_estimate,
    )


@dataclass(frozen=True)
class LaborReport:
    n_tanks: int
    samples_per_tank: float
    total_samples: float
    manual_hours: float
    operator_hours: float
    hours_saved: float

    def as_dict(self) -> dict[str, float]:
        return {
            "n_tanks": self.n_tanks,
            "samples_per_tank": self.samples_per_tank,
            "total_samples": self.total_samples,
            "manual_hours": self.manual_hours,
            "operator_hours": self.operator_hours,
            "hours_saved": self.hours_saved,
        }


def labor_report(
    n_tanks: int = 60,
    surface_hours: float = 12.0,
    surface_samples_per_hour: float = 12.0,
    subsurface_days: float = 6.0,
    minutes_per_sample: float = 20.0,
    operator_hours: float = 40.0,
) -> LaborReport:
    """Hours of manual sampling labor replaced by automated monitoring.

    Manual effort at the same frequency: hourly-equivalent surface
    samples plus one sample per hour sub-surface, per tank, minus the
    hours one operator spends running the camera fleet.
    """
    if min(n_tanks, surface_hours, surface_samples_per_hour, subsurface_days) < 0:
        raise ValueError("inputs must be non-negative")
    if minutes_per_sample < 0 or operator_hours < 0:
        raise ValueError("inputs must be non-negative")
    samples_per_tank = surface_hours * surface_samples_per_hour + subsurface_days * 24.0
    total = n_tanks * samples_per_tank
    manual_hours = total * minutes_per_sample / 60.0
    return LaborReport(
        n_tanks=n_tanks,
        samples_per_tank=samples_per_tank,
        total_samples=total,
        manual_hours=manual_hours,
        operator_hours=operator_hours,
        hours_saved=manual_hours - operator_hours,
    )


@dataclass(frozen=True)
class FertilizationPoint:
    time: float
    f: float | None
    counts: StageCounts


@dataclass(frozen=True)
class TankCountPoint:
    time: float
    image_count: int


@dataclass(frozen=True)
class ManualCount:
    time: float
    tank_total: int
    method: str = ""

    def __post_init__(self) -> None:
        if self.tank_total < 0:
            raise ValueError("tank_total must be >= 0")

    def to_payload(self) -> dict[str, Any]:
        return {"time": self.time, "tank_total": self.tank_total, "method": self.method}

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "ManualCount":
        return cls(
            time=float(payload["time"]),
            tank_total=int(payload["tank_total"]),
            method=payload.get("method", ""),
        )


@dataclass(frozen=True)
class AnalyticsConfig:
    surface_window: int = 20
    subsurface_window: int = 40
    calibration_window_s: float = 1800.0
    pair_tolerance_s: float = 600.0
    health: HealthConfig = field(default_factory=HealthConfig)


@dataclass(frozen=True)
class Curve:
    """A (time, value) series with rolling mean and one-sigma bounds."""

    times: tuple[float, ...]
    values: tuple[float | None, ...]
    rolling: tuple[float | None, ...]
    sigma: tuple[float | None, ...]

    def to_table(self, value_name: str = "value") -> str:
        """Plain-text table (TSV) consumable by any plotting tool."""
        lines = [f"time\t{value_name}\trolling_mean\trolling_std"]
        for t, v, r, s in zip(self.times, self.values, self.rolling, self.sigma):
            cells = [repr(float(t))] + [("" if x is None else repr(float(x))) for x in (v, r, s)]
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def defined_rolling(self) -> list[tuple[float, float]]:
        return [(t, r) for t, r in zip(self.times, self.rolling) if r is not None]


class TankSeries:
    """Time-ordered per-tank analytics state.

    Single-writer: the coordinator appends points in timestamp order;
    readers consume derived curves. The scaling factor is calibrated
    once, from the first manual count inside the sub-surface segment.
    """

    def __init__(self, tank_id: str, config: AnalyticsConfig | None = None):
        self.tank_id = tank_id
        self.config = config or AnalyticsConfig()
        self.fert_points: list[FertilizationPoint] = []
        self.count_points: list[TankCountPoint] = []
        self.manual_counts: list[ManualCount] = []
        self.scaling_factor: float | None = None
        self.calibration_time: float | None = None
        self.mode_segments: list[tuple[float, OperationalMode]] = []

    def note_mode(self, time: float, mode: OperationalMode) -> None:
        if not self.mode_segments or self.mode_segments[-1][1] != mode:
            self.mode_segments.append((time, mode))

    def subsurface_start(self) -> float | None:
        for t, mode in self.mode_segments:
            if mode == OperationalMode.SUBSURFACE:
                return t
        return None

    def add_surface_counts(self, time: float, counts: StageCounts) -> None:
        self.note_mode(time, OperationalMode.SURFACE)
        self.fert_points.append(
            FertilizationPoint(time=time, f=fertilization_success(counts), counts=counts)
        )

    def add_subsurface_count(self, time: float, image_count: int) -> None:
        self.note_mode(time, OperationalMode.SUBSURFACE)
        self.count_points.append(TankCountPoint(time=time, image_count=image_count))
        if self.scaling_factor is None:
            self._try_calibrate()

    def add_manual_count(self, manual: ManualCount) -> bool:
        """Ingest a manual count; returns True if it calibrated the series."""
        self.manual_counts.append(manual)
        self.manual_counts.sort(key=lambda m: m.time)
        if self.scaling_factor is None:
            return self._try_calibrate()
        return False

    def _calibration_manual(self) -> ManualCount | None:
        start = self.subsurface_start()
        if start is None:
            return None
        for m in self.manual_counts:
            if m.time >= start:
                return m
        return None

    def _try_calibrate(self, force: bool = False) -> bool:
        """Calibrate k from image counts within the window around the
        first sub-surface manual count.

        Waits until a count beyond the window exists (or ``force``), so
        the factor depends only on series timestamps, never on message
        arrival order; this keeps log replay byte-identical.
        """
        manual = self._calibration_manual()
        if manual is None:
            return False
        window = self.config.calibration_window_s
        if not force and not any(p.time > manual.time + window for p in self.count_points):
            return False
        nearby = [
            p.image_count for p in self.count_points if abs(p.time - manual.time) <= window
        ]
        if not nearby:
            return False
        try:
            k = calibrate_scaling(manual.tank_total, nearby)
        except ValueError:
            return False
        self.scaling_factor = k
        self.calibration_time = manual.time
        return True

    def finalize(self) -> bool:
        """End-of-run hook: calibrate from a still-open window if possible."""
        if self.scaling_factor is None:
            return self._try_calibrate(force=True)
        return False

    def fertilization_curve(self) -> Curve:
        times = tuple(p.time for p in self.fert_points)
        values = tuple(p.f for p in self.fert_points)
        if not values:
            return Curve((), (), (), ())
        w = self.config.surface_window
        return Curve(
            times=times,
            values=values,
            rolling=tuple(rolling_mean(values, w)),
            sigma=tuple(rolling_std(values, w)),
        )

    def tank_count_curve(self) -> Curve:
        """Tank-count estimates (scaling factor applied); raw counts only
        when uncalibrated."""
        times = tuple(p.time for p in self.count_points)
        k = self.scaling_factor
        values: tuple[float | None, ...] = tuple(
            (p.image_count * k) if k is not None else None for p in self.count_points
        )
        if not times:
            return Curve((), (), (), ())
        w = self.config.subsurface_window
        if k is None:
            empty = tuple(None for _ in times)
            return Curve(times=times, values=values, rolling=empty, sigma=empty)
        return Curve(
            times=times,
            values=values,
            rolling=tuple(rolling_mean(values, w, centered=True)),
            sigma=tuple(rolling_std(values, w, centered=True)),
        )

    def image_count_series(self) -> list[tuple[float, int]]:
        return [(p.time, p.image_count) for p in self.count_points]

    def health(self) -> CultureHealth:
        return classify_culture(self.fertilization_curve().rolling, self.config.health)


def requirement_first_estimate(series: TankSeries, deadline_s: float = 7200.0) -> bool:
    """A fertilization estimate exists within the deadline after stocking."""
    defined = [p.time for p in series.fert_points if p.f is not None]
    return bool(defined) and min(defined) <= deadline_s


def requirement_hourly_counts(
    series: TankSeries, start: float, end: float, interval_s: float = 3600.0
) -> bool:
    """At least one tank-count point in every full interval of [start, end)."""
    times = sorted(p.time for p in series.count_points)
    n_buckets = int((end - start) // interval_s)
    for k in range(n_buckets):
        lo, hi = start + k * interval_s, start + (k + 1) * interval_s
        if not any(lo <= t < hi for t in times):
            return False
    if n_buckets == 0 and end > start:
        return bool(times)
    return True
