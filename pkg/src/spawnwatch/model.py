"""Shared domain vocabulary: stage taxonomy, box geometry, counts, timeline.

Everything here is an immutable value object and safe to share across
threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from typing import Iterable


class StageLabel(str, Enum):
    """Developmental-stage taxonomy.

    The first six values form the surface taxonomy; CORAL is the single
    sub-surface class. A frame's labels come from exactly one taxonomy.
    """

    EGG = "egg"
    FIRST_CLEAVAGE = "first_cleavage"
    TWO_CELL = "two_cell"
    FOUR_EIGHT_CELL = "four_eight_cell"
    ADVANCED = "advanced"
    DAMAGED = "damaged"
    CORAL = "coral"

    def __str__(self) -> str:
        return self.value


SURFACE_STAGES: tuple[StageLabel, ...] = (
    StageLabel.EGG,
    StageLabel.FIRST_CLEAVAGE,
    StageLabel.TWO_CELL,
    StageLabel.FOUR_EIGHT_CELL,
    StageLabel.ADVANCED,
    StageLabel.DAMAGED,
)

SUBSURFACE_STAGES: tuple[StageLabel, ...] = (StageLabel.CORAL,)

# Stages that confirm fertilization (a cleaved or further-developed embryo).
FERTILIZED_STAGES: frozenset[StageLabel] = frozenset(
    {
        StageLabel.FIRST_CLEAVAGE,
        StageLabel.TWO_CELL,
        StageLabel.FOUR_EIGHT_CELL,
        StageLabel.ADVANCED,
    }
)

# Class index used by label files and confusion matrices: enumeration order.
STAGE_INDEX: dict[StageLabel, int] = {s: i for i, s in enumerate(StageLabel)}


class OperationalMode(str, Enum):
    """Camera operating mode; a run only ever moves SURFACE -> SUBSURFACE."""

    SURFACE = "surface"
    SUBSURFACE = "subsurface"

    def __str__(self) -> str:
        return self.value


def taxonomy_for_mode(mode: OperationalMode) -> tuple[StageLabel, ...]:
    return SURFACE_STAGES if mode == OperationalMode.SURFACE else SUBSURFACE_STAGES


class TaxonomyError(ValueError):
    """A label from the wrong taxonomy for the operation at hand."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized image coordinates, x/y in [0, 1]."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x_min < self.x_max <= 1.0):
            raise ValueError(f"invalid x extent: [{self.x_min}, {self.x_max}]")
        if not (0.0 <= self.y_min < self.y_max <= 1.0):
            raise ValueError(f"invalid y extent: [{self.y_min}, {self.y_max}]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """Detector output: a box, its label, and a confidence in [0, 1]."""

    box: BoundingBox
    label: StageLabel
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated box: geometry plus stage label, no confidence."""

    box: BoundingBox
    label: StageLabel


@dataclass(frozen=True)
class StageCounts:
    """Per-image counts for each surface stage.

    ``damaged`` is carried for reporting even though the fertilization
    ratio excludes it as nonviable.
    """

    eggs: int = 0
    first_cleavage: int = 0
    two_cell: int = 0
    four_eight_cell: int = 0
    advanced: int = 0
    damaged: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"negative count for {f.name}: {v}")

    @property
    def fertilized_total(self) -> int:
        return self.first_cleavage + self.two_cell + self.four_eight_cell + self.advanced

    @property
    def viable_total(self) -> int:
        """All counted spawn except damaged (nonviable)."""
        return self.eggs + self.fertilized_total

    @property
    def total(self) -> int:
        return self.viable_total + self.damaged

    def as_dict(self) -> dict[str, int]:
        return {
            "egg": self.eggs,
            "first_cleavage": self.first_cleavage,
            "two_cell": self.two_cell,
            "four_eight_cell": self.four_eight_cell,
            "advanced": self.advanced,
            "damaged": self.damaged,
        }

    @classmethod
    def from_dict(cls, d: dict[str, int]) -> "StageCounts":
        return cls(
            eggs=int(d.get("egg", 0)),
            first_cleavage=int(d.get("first_cleavage", 0)),
            two_cell=int(d.get("two_cell", 0)),
            four_eight_cell=int(d.get("four_eight_cell", 0)),
            advanced=int(d.get("advanced", 0)),
            damaged=int(d.get("damaged", 0)),
        )

    def __add__(self, other: "StageCounts") -> "StageCounts":
        return StageCounts(
            self.eggs + other.eggs,
            self.first_cleavage + other.first_cleavage,
            self.two_cell + other.two_cell,
            self.four_eight_cell + other.four_eight_cell,
            self.advanced + other.advanced,
            self.damaged + other.damaged,
        )


@dataclass(frozen=True)
class PhaseTimeline:
    """Run phase boundaries in seconds since run start.

    t0: stocking, t1: switch to sub-surface operation, t2: harvest.
    """

    t0: float
    t1: float
    t2: float

    def __post_init__(self) -> None:
        if not (self.t0 < self.t1 < self.t2):
            raise ValueError(f"timeline must be ordered: {self.t0} < {self.t1} < {self.t2}")

    def mode_at(self, time: float) -> OperationalMode:
        return OperationalMode.SURFACE if time < self.t1 else OperationalMode.SUBSURFACE


_COUNT_FIELD: dict[StageLabel, str] = {
    StageLabel.EGG: "eggs",
    StageLabel.FIRST_CLEAVAGE: "first_cleavage",
    StageLabel.TWO_CELL: "two_cell",
    StageLabel.FOUR_EIGHT_CELL: "four_eight_cell",
    StageLabel.ADVANCED: "advanced",
    StageLabel.DAMAGED: "damaged",
}


def stage_is_fertilized(label: StageLabel) -> bool:
    """Whether a surface-stage label confirms fertilization.

    Eggs are ambiguous (counted as unfertilized) and damaged spawn are
    nonviable. Raises TaxonomyError for the sub-surface class.
    """
    if label not in _COUNT_FIELD:
        raise TaxonomyError(f"{label!r} is not a surface-taxonomy stage")
    return label in FERTILIZED_STAGES


def counts_from_labels(labels: Iterable[StageLabel]) -> StageCounts:
    """Tally a frame's surface labels into per-stage counts."""
    tally = dict.fromkeys(_COUNT_FIELD.values(), 0)
    for label in labels:
        field = _COUNT_FIELD.get(label)
        if field is None:
            raise TaxonomyError(f"{label!r} is not a surface-taxonomy stage")
        tally[field] += 1
    return StageCounts(**tally)
