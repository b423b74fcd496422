"""Noise-configurable oracle detector.

Perturbs ground truth with misses, label confusion, box jitter, and
spurious detections; with zero noise it echoes the truth exactly. Stands
in for a trained neural detector so the rest of the pipeline can be
exercised with a known error model.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from spawnwatch.model import (
    SURFACE_STAGES,
    BoundingBox,
    Detection,
    OperationalMode,
    StageLabel,
)
from spawnwatch.simtank.tank import FrameTruth


class DetectorError(Exception):
    """Detector could not process the frame (e.g. taxonomy mismatch)."""


def uniform_confusion(diagonal: float) -> np.ndarray:
    """6x6 surface confusion matrix: ``diagonal`` right, rest spread evenly."""
    if not (0.0 < diagonal <= 1.0):
        raise ValueError(f"diagonal must be in (0, 1], got {diagonal}")
    n = len(SURFACE_STAGES)
    m = np.full((n, n), (1.0 - diagonal) / (n - 1))
    np.fill_diagonal(m, diagonal)
    return m


@dataclass(frozen=True)
class DetectorNoise:
    """Error model applied to ground truth boxes.

    confusion is a row-stochastic matrix over the six surface stages;
    None means identity. Sub-surface frames are single-class, so only
    miss/false-positive/jitter apply there.
    """

    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    confusion: np.ndarray | None = None
    box_jitter_sigma: float = 0.0
    true_confidence: tuple[float, float] = (0.88, 0.06)
    false_confidence: tuple[float, float] = (0.55, 0.15)
    false_positive_size: tuple[float, float] = (0.02, 0.08)

    def __post_init__(self) -> None:
        if not (0.0 <= self.miss_rate <= 1.0):
            raise ValueError(f"miss_rate must be in [0, 1], got {self.miss_rate}")
        if self.false_positive_rate < 0:
            raise ValueError("false_positive_rate must be >= 0")
        if self.box_jitter_sigma < 0:
            raise ValueError("box_jitter_sigma must be >= 0")
        if self.confusion is not None:
            m = np.asarray(self.confusion, dtype=float)
            if m.shape != (len(SURFACE_STAGES), len(SURFACE_STAGES)):
                raise ValueError(f"confusion must be 6x6, got {m.shape}")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9) or np.any(m < 0):
                raise ValueError("confusion rows must be non-negative and sum to 1")
            object.__setattr__(self, "confusion", m)


@dataclass(frozen=True)
class DetectionResult:
    """Detector output for one frame."""

    frame_id: int
    detections: tuple[Detection, ...]
    inference_time: float = 0.0

    def __post_init__(self) -> None:
        if self.inference_time < 0:
            raise ValueError("inference_time must be >= 0")

    def to_payload(self, source: str) -> dict[str, Any]:
        return {
            "frame_id": self.frame_id,
            "source": source,
            "detections": [
                {
                    "label": d.label.value,
                    "box": list(d.box.as_tuple()),
                    "confidence": d.confidence,
                }
                for d in self.detections
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "DetectionResult":
        return cls(
            frame_id=int(payload["frame_id"]),
            detections=tuple(
                Detection(
                    box=BoundingBox(*d["box"]),
                    label=StageLabel(d["label"]),
                    confidence=float(d["confidence"]),
                )
                for d in payload["detections"]
            ),
        )


def _frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    # Mix the frame id so per-frame streams are independent but replayable.
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(str(frame_id).encode())])


def _clamp_center(cx: float, w: float) -> float:
    return min(max(cx, w / 2.0), 1.0 - w / 2.0)


def oracle_detect(truth: FrameTruth, noise: DetectorNoise, seed: int = 0) -> DetectionResult:
    """Apply the noise model to a frame's ground truth.

    Deterministic for a given (truth, noise, seed). Reported inference
    time is zero: the oracle consumes no real frame budget.
    """
    surface = truth.mode == OperationalMode.SURFACE
    labels = [gt.label for gt in truth.boxes]
    if surface and any(lab not in SURFACE_STAGES for lab in labels):
        raise DetectorError(f"frame {truth.frame_id}: sub-surface label in surface frame")
    if not surface and any(lab != StageLabel.CORAL for lab in labels):
        raise DetectorError(f"frame {truth.frame_id}: surface label in sub-surface frame")

    rng = _frame_rng(seed, truth.frame_id)
    detections: list[Detection] = []

    keep = rng.random(len(truth.boxes)) >= noise.miss_rate if truth.boxes else np.array([])
    kept = [gt for gt, k in zip(truth.boxes, keep) if k]

    if kept:
        if surface and noise.confusion is not None:
            cum = np.cumsum(noise.confusion, axis=1)
            draws = rng.random(len(kept))
            out_labels = [
                SURFACE_STAGES[int(np.searchsorted(cum[SURFACE_STAGES.index(gt.label)], u))]
                for gt, u in zip(kept, draws)
            ]
        else:
            out_labels = [gt.label for gt in kept]

        offsets = (
            rng.normal(0.0, noise.box_jitter_sigma, size=(len(kept), 2))
            if noise.box_jitter_sigma > 0
            else np.zeros((len(kept), 2))
        )
        mu, sd = noise.true_confidence
        confs = np.clip(rng.normal(mu, sd, size=len(kept)), 0.0, 1.0)
        for gt, lab, (dx, dy), conf in zip(kept, out_labels, offsets, confs):
            if dx == 0.0 and dy == 0.0:
                box = gt.box  # exact echo when unjittered
            else:
                w, h = gt.box.width, gt.box.height
                cx, cy = gt.box.center()
                box = BoundingBox.from_center(
                    _clamp_center(cx + float(dx), w), _clamp_center(cy + float(dy), h), w, h
                )
            detections.append(Detection(box=box, label=lab, confidence=float(conf)))

    n_fp = int(rng.poisson(noise.false_positive_rate)) if noise.false_positive_rate > 0 else 0
    if n_fp:
        mu, sd = noise.false_confidence
        lo, hi = noise.false_positive_size
        for _ in range(n_fp):
            w = float(rng.uniform(lo, hi))
            h = float(rng.uniform(lo, hi))
            cx = float(rng.uniform(w / 2.0, 1.0 - w / 2.0))
            cy = float(rng.uniform(h / 2.0, 1.0 - h / 2.0))
            label = SURFACE_STAGES[int(rng.integers(len(SURFACE_STAGES)))] if surface else StageLabel.CORAL
            conf = float(np.clip(rng.normal(mu, sd), 0.0, 1.0))
            detections.append(
                Detection(box=BoundingBox.from_center(cx, cy, w, h), label=label, confidence=conf)
            )

    return DetectionResult(frame_id=truth.frame_id, detections=tuple(detections))
