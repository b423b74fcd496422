"""Discrete-time population simulator for one larval rearing tank.

Individuals are held in parallel numpy arrays and advanced with a fixed
step. Fertilized spawn progress egg -> first cleavage -> two-cell ->
four-to-eight -> advanced with exponential dwell times; unfertilized eggs
dissolve into the damaged state at a hazard that escalates with every
dissolution event (the chain-reaction collapse of a failing culture);
damaged spawn persist for a while and are then removed.

A Tank is single-owner: one driver advances it. Captured frames are
immutable snapshots and safe to hand to other components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from spawnwatch import _kernels
from spawnwatch.model import (
    BoundingBox,
    GroundTruthBox,
    OperationalMode,
    PhaseTimeline,
    StageCounts,
    StageLabel,
)
from spawnwatch.simtank.config import HOUR, TankConfig

# Stage codes used in the state arrays (surface taxonomy order).
EGG, FIRST_CLEAVAGE, TWO_CELL, FOUR_EIGHT, ADVANCED, DAMAGED = range(6)

STAGE_LABELS: tuple[StageLabel, ...] = (
    StageLabel.EGG,
    StageLabel.FIRST_CLEAVAGE,
    StageLabel.TWO_CELL,
    StageLabel.FOUR_EIGHT_CELL,
    StageLabel.ADVANCED,
    StageLabel.DAMAGED,
)

# Box width/height for each rendered shape; the renderer's blob layouts
# fill these exactly, so truth boxes hug the drawn geometry.
# Two-cell disc separation is 1.6 radii: wide enough for two distinct
# distance-transform lobes, narrow enough that the blob's moment
# elongation stays clear of the damaged-ellipse range.
ASPECT_FIRST_CLEAVAGE = 1.225
ASPECT_TWO_CELL = 1.8
ASPECT_FOUR_CLUSTER = 1.0
ASPECT_SIX_CLUSTER = 5.8 / 3.9

# Cap on the escalated dissolution hazard; beyond this the step
# probability is already indistinguishable from 1.
_MAX_RATE_PER_HOUR = 1e9


@dataclass(frozen=True)
class Distractor:
    """A visible but out-of-focus individual: box plus defocus blur (px)."""

    box: BoundingBox
    blur_px: float


@dataclass(frozen=True)
class FrameTruth:
    """Ground truth for one captured frame.

    tank_counts is the whole tank's true stage composition at capture
    time (not just the sampled field of view), the reference for
    fertilization-recovery checks.
    """

    frame_id: int
    time: float
    mode: OperationalMode
    boxes: tuple[GroundTruthBox, ...]
    visible_count: int
    tank_population: int
    in_focus_count: int | None = None
    distractors: tuple[Distractor, ...] = ()
    tank_counts: StageCounts | None = None

    def __post_init__(self) -> None:
        if self.in_focus_count is not None:
            if not (self.in_focus_count <= self.visible_count <= self.tank_population):
                raise ValueError("require in_focus <= visible <= population")
        elif not (self.visible_count <= self.tank_population):
            raise ValueError("require visible <= population")

    def to_payload(self) -> dict[str, Any]:
        payload = {
            "frame_id": self.frame_id,
            "time": self.time,
            "mode": self.mode.value,
            "boxes": [
                {"label": gt.label.value, "box": list(gt.box.as_tuple())} for gt in self.boxes
            ],
            "distractors": [list(d.box.as_tuple()) + [d.blur_px] for d in self.distractors],
            "visible": self.visible_count,
            "in_focus": self.in_focus_count,
            "population": self.tank_population,
        }
        if self.tank_counts is not None:
            payload["tank_counts"] = self.tank_counts.as_dict()
        return payload

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "FrameTruth":
        return cls(
            frame_id=int(payload["frame_id"]),
            time=float(payload["time"]),
            mode=OperationalMode(payload["mode"]),
            boxes=tuple(
                GroundTruthBox(box=BoundingBox(*b["box"]), label=StageLabel(b["label"]))
                for b in payload["boxes"]
            ),
            distractors=tuple(
                Distractor(box=BoundingBox(*d[:4]), blur_px=float(d[4]))
                for d in payload.get("distractors", [])
            ),
            visible_count=int(payload["visible"]),
            in_focus_count=None if payload.get("in_focus") is None else int(payload["in_focus"]),
            tank_population=int(payload["population"]),
            tank_counts=StageCounts.from_dict(payload["tank_counts"])
            if "tank_counts" in payload
            else None,
        )


class Tank:
    """Simulated tank population, advanced by a single driver."""

    def __init__(self, config: TankConfig, timeline: PhaseTimeline | None = None):
        self.config = config
        self.timeline = timeline if timeline is not None else config.timeline()
        self.rng = np.random.default_rng(config.seed)

        n = config.initial_population()
        self.stage = np.full(n, EGG, dtype=np.int8)
        self.fertilized = self.rng.random(n) < config.fertilized_fraction
        self.entry_time = np.zeros(n)
        self.exit_time = np.full(n, np.inf)
        n_fert = int(self.fertilized.sum())
        if n_fert:
            self.exit_time[self.fertilized] = self.timeline.t0 + self.rng.exponential(
                self._dwell_s[EGG], size=n_fert
            )
        self.depth = np.zeros(n)
        self.time = self.timeline.t0
        self.dissolution_events = 0
        self.removed_total = 0
        self._frame_counter = 0
        self._dispersed = False

    @property
    def _dwell_s(self) -> np.ndarray:
        c = self.config
        return (
            np.array(
                [
                    c.dwell_egg_hours,
                    c.dwell_first_cleavage_hours,
                    c.dwell_two_cell_hours,
                    c.dwell_four_eight_hours,
                ]
            )
            * HOUR
            / c.time_compression
        )

    @property
    def population(self) -> int:
        return int(self.stage.shape[0])

    @property
    def mode(self) -> OperationalMode:
        return self.timeline.mode_at(self.time)

    def stage_counts(self) -> StageCounts:
        tally = np.bincount(self.stage, minlength=6)
        return StageCounts(*(int(v) for v in tally))

    def true_fertilization(self) -> float | None:
        """Fertilization ratio of the whole tank (ground truth)."""
        counts = self.stage_counts()
        return None if counts.viable_total == 0 else counts.fertilized_total / counts.viable_total

    def _effective_damage_rate(self) -> float:
        """Dissolution hazard per biological hour, escalated per event."""
        c = self.config
        if c.damage_rate_per_hour <= 0:
            return 0.0
        log_rate = math.log(c.damage_rate_per_hour) + self.dissolution_events * math.log1p(
            c.dissolution_chain_factor
        )
        return min(math.exp(min(log_rate, 700.0)), _MAX_RATE_PER_HOUR)

    def step(self, dt: float) -> None:
        """Advance the population by dt simulated seconds."""
        if dt < 0:
            raise ValueError(f"dt must be >= 0, got {dt}")
        if dt == 0:
            return
        c = self.config
        now = self.time + dt
        dwell = self._dwell_s

        # Stage transitions; loop so a large dt can cross several stages.
        remove_mask = None
        while True:
            actions = _kernels.step_actions(
                self.stage, self.fertilized, self.exit_time, now, ADVANCED, DAMAGED
            )
            adv = np.flatnonzero(actions == _kernels.ACTION_ADVANCE)
            if adv.size == 0:
                remove_mask = actions == _kernels.ACTION_REMOVE
                break
            entered_at = self.exit_time[adv]
            self.stage[adv] += 1
            self.entry_time[adv] = entered_at
            new_stage = self.stage[adv]
            moving = new_stage < ADVANCED
            next_exit = np.full(adv.size, np.inf)
            if moving.any():
                next_exit[moving] = self.rng.exponential(dwell[new_stage[moving]])
            self.exit_time[adv] = np.where(np.isfinite(next_exit), entered_at + next_exit, np.inf)

        # Dissolution of unfertilized eggs (hazard frozen over the step).
        rate = self._effective_damage_rate()
        if rate > 0:
            candidates = np.flatnonzero(~self.fertilized & (self.stage == EGG))
            if candidates.size:
                bio_hours = dt * c.time_compression / HOUR
                p = -math.expm1(-rate * bio_hours)
                hit = candidates[self.rng.random(candidates.size) < p]
                if hit.size:
                    self.stage[hit] = DAMAGED
                    self.entry_time[hit] = now
                    self.exit_time[hit] = now + c.bio_hours_to_sim_s(
                        c.damaged_persistence_hours
                    )
                    self.dissolution_events += int(hit.size)

        if remove_mask is not None and remove_mask.any():
            keep = ~remove_mask
            self.removed_total += int(remove_mask.sum())
            self.stage = self.stage[keep]
            self.fertilized = self.fertilized[keep]
            self.entry_time = self.entry_time[keep]
            self.exit_time = self.exit_time[keep]
            self.depth = self.depth[keep]

        # One-time dispersal into the water column at the mode switch.
        if not self._dispersed and now >= self.timeline.t1:
            self.depth = self.rng.uniform(0.0, c.depth_m, size=self.population)
            self._dispersed = True

        self.time = now

    def _draw_box(self, label: StageLabel) -> BoundingBox:
        """Uniformly placed box sized from the organism diameter range."""
        c = self.config
        d_lo, d_hi = c.diameter_range_normalized()
        size = float(self.rng.uniform(d_lo, d_hi))
        if label == StageLabel.FIRST_CLEAVAGE:
            aspect = ASPECT_FIRST_CLEAVAGE
        elif label == StageLabel.TWO_CELL:
            aspect = ASPECT_TWO_CELL
        elif label == StageLabel.FOUR_EIGHT_CELL:
            aspect = ASPECT_FOUR_CLUSTER if self.rng.random() < 0.5 else ASPECT_SIX_CLUSTER
        elif label == StageLabel.DAMAGED:
            aspect = float(self.rng.uniform(2.5, 3.5))
        elif label == StageLabel.CORAL:
            aspect = float(self.rng.uniform(1.25, 1.5))
        else:
            aspect = 1.0
        h = min(size, 0.9)
        w = min(size * aspect, 0.9)
        cx = float(self.rng.uniform(w / 2.0, 1.0 - w / 2.0))
        cy = float(self.rng.uniform(h / 2.0, 1.0 - h / 2.0))
        return BoundingBox.from_center(cx, cy, w, h)

    def capture_frame(self, focus_band: tuple[float, float] | None = None) -> FrameTruth:
        """Sample the camera field of view and emit ground truth.

        Surface mode thins the surface population by area fraction and
        labels every sampled individual with its stage. Sub-surface mode
        thins the column by volume fraction; only individuals inside the
        focus band get (single-class) boxes, the rest are visible-only.
        """
        c = self.config
        mode = self.mode
        frame_id = self._frame_counter
        self._frame_counter += 1
        n = self.population

        if mode == OperationalMode.SURFACE:
            sampled = np.flatnonzero(self.rng.random(n) < c.surface_fov_area_fraction)
            boxes = tuple(
                GroundTruthBox(box=self._draw_box(STAGE_LABELS[s]), label=STAGE_LABELS[s])
                for s in self.stage[sampled]
            )
            return FrameTruth(
                frame_id=frame_id,
                time=self.time,
                mode=mode,
                boxes=boxes,
                visible_count=int(sampled.size),
                tank_population=n,
                tank_counts=self.stage_counts(),
            )

        lo, hi = focus_band if focus_band is not None else (c.focus_depth_min_m, c.focus_depth_max_m)
        if lo >= hi:
            raise ValueError(f"focus band must be ordered, got ({lo}, {hi})")
        sampled = np.flatnonzero(self.rng.random(n) < c.fov_volume_fraction)
        depths = self.depth[sampled]
        in_band = (depths >= lo) & (depths <= hi)
        boxes = tuple(
            GroundTruthBox(box=self._draw_box(StageLabel.CORAL), label=StageLabel.CORAL)
            for _ in range(int(in_band.sum()))
        )
        band_width = hi - lo
        distractors = []
        for d in depths[~in_band]:
            defocus = (lo - d) / band_width if d < lo else (d - hi) / band_width
            blur = 3.0 + min(5.0 * float(defocus), 9.0)
            distractors.append(Distractor(box=self._draw_box(StageLabel.CORAL), blur_px=blur))
        return FrameTruth(
            frame_id=frame_id,
            time=self.time,
            mode=mode,
            boxes=boxes,
            visible_count=int(sampled.size),
            in_focus_count=int(in_band.sum()),
            tank_population=n,
            distractors=tuple(distractors),
            tank_counts=self.stage_counts(),
        )
