"""Detection evaluation: IoU, greedy matching, P/R/F1, AP@0.5, report aggregation.

Protocol: P/R/F1 are computed at a fixed confidence threshold; AP sweeps
the full confidence range (all-points area under the monotone precision
envelope). Matching is same-label only, one truth per detection, greedy
in descending confidence with IoU >= threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from spawnwatch import _kernels
from spawnwatch.model import (
    SURFACE_STAGES,
    BoundingBox,
    Detection,
    GroundTruthBox,
    StageLabel,
)


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    confidence_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if not (0.0 < self.confidence_threshold <= 1.0):
            raise ValueError(
                f"confidence_threshold must be in (0, 1], got {self.confidence_threshold}"
            )


@dataclass(frozen=True)
class EvalFrame:
    """One frame's detections and ground truth, keyed for deterministic ties."""

    frame_id: int
    detections: tuple[Detection, ...]
    truths: tuple[GroundTruthBox, ...]


@dataclass(frozen=True)
class ClassMetrics:
    label: StageLabel
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    ap: float
    truth_count: int


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassMetrics, ...]
    macro_f1: float
    macro_f1_excluding_damaged: float
    map_50: float
    absent_classes: tuple[StageLabel, ...] = ()

    def as_dict(self) -> dict:
        return {
            "per_class": [
                {
                    "label": m.label.value,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "ap": m.ap,
                    "truth_count": m.truth_count,
                }
                for m in self.per_class
            ],
            "macro_f1": self.macro_f1,
            "macro_f1_excluding_damaged": self.macro_f1_excluding_damaged,
            "map_50": self.map_50,
            "absent_classes": [c.value for c in self.absent_classes],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [
            f"{'class':<18} {'P':>7} {'R':>7} {'F1':>7} {'AP@0.5':>7} {'TP':>6} {'FP':>6} {'FN':>6}",
        ]
        for m in self.per_class:
            lines.append(
                f"{m.label.value:<18} {100 * m.precision:>7.1f} {100 * m.recall:>7.1f} "
                f"{100 * m.f1:>7.1f} {100 * m.ap:>7.1f} {m.tp:>6} {m.fp:>6} {m.fn:>6}"
            )
        lines.append("")
        lines.append(f"macro F1:                {100 * self.macro_f1:.1f}")
        lines.append(f"macro F1 (excl damaged): {100 * self.macro_f1_excluding_damaged:.1f}")
        lines.append(f"mAP@0.5:                 {100 * self.map_50:.1f}")
        if self.absent_classes:
            lines.append("absent classes: " + ", ".join(c.value for c in self.absent_classes))
        return "\n".join(lines) + "\n"


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0.

    Scale-invariant, so fractions and percentage points both work as
    long as the two arguments share a scale.
    """
    for name, v in (("precision", precision), ("recall", recall)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"{name} out of range: {v}")
    if precision == 0.0 and recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _iou_matrix(dets: Sequence[Detection], truths: Sequence[GroundTruthBox]) -> np.ndarray:
    m = np.zeros((len(dets), len(truths)))
    for i, d in enumerate(dets):
        for j, t in enumerate(truths):
            m[i, j] = iou(d.box, t.box)
    return m


def _label_codes(labels: Iterable[StageLabel]) -> np.ndarray:
    order = list(StageLabel)
    return np.array([order.index(lab) for lab in labels], dtype=np.int64)


def _match(
    dets: Sequence[Detection], truths: Sequence[GroundTruthBox], iou_threshold: float
) -> np.ndarray:
    """Matched truth index per detection (-1 if unmatched), greedy by
    descending confidence with deterministic index tie-break."""
    if not dets:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(dets)), [-d.confidence for d in dets]))
    return _kernels.greedy_match(
        _iou_matrix(dets, truths),
        order.astype(np.int64),
        _label_codes(d.label for d in dets),
        _label_codes(t.label for t in truths),
        iou_threshold,
    )


@dataclass
class MatchResult:
    detection_tp: list[bool]
    matched_truth: list[int]
    truth_matched: list[bool]
    kept_indices: list[int] = field(default_factory=list)


def match_frame(
    dets: Sequence[Detection], truths: Sequence[GroundTruthBox], cfg: MatchConfig | None = None
) -> MatchResult:
    """TP/FP flags for one frame at the configured confidence threshold.

    Detections under the confidence threshold are discarded here (the AP
    sweep considers them separately); the rest match greedily.
    """
    cfg = cfg or MatchConfig()
    det_tax = {d.label in SURFACE_STAGES for d in dets}
    truth_tax = {t.label in SURFACE_STAGES for t in truths}
    if len(det_tax | truth_tax) > 1:
        raise ValueError("mixed surface/sub-surface taxonomies in one frame")

    kept = [i for i, d in enumerate(dets) if d.confidence >= cfg.confidence_threshold]
    kept_dets = [dets[i] for i in kept]
    matched = _match(kept_dets, truths, cfg.iou_threshold)
    truth_matched = [False] * len(truths)
    for t_idx in matched:
        if t_idx >= 0:
            truth_matched[t_idx] = True
    return MatchResult(
        detection_tp=[int(t) >= 0 for t in matched],
        matched_truth=[int(t) for t in matched],
        truth_matched=truth_matched,
        kept_indices=kept,
    )


def average_precision(
    frames: Sequence[EvalFrame], label: StageLabel, iou_threshold: float = 0.5
) -> float:
    """All-points AP@iou for one class over a pooled set of frames.

    Detections are ranked globally by confidence (ties broken by frame
    id then detection index) and matched greedily per frame in that
    order; the PR curve's monotone envelope is integrated exactly.
    """
    n_truth = sum(1 for fr in frames for t in fr.truths if t.label == label)
    if n_truth == 0:
        raise ValueError(f"no truth instances of {label.value}: AP undefined")

    ranked: list[tuple[float, int, int, int]] = []  # (-conf, frame_pos, det_idx, frame_pos)
    for pos, fr in enumerate(frames):
        for di, d in enumerate(fr.detections):
            if d.label == label:
                ranked.append((-d.confidence, fr.frame_id, di, pos))
    if not ranked:
        return 0.0
    ranked.sort()

    truth_used: dict[int, np.ndarray] = {}
    truth_boxes: dict[int, list[GroundTruthBox]] = {}
    for pos, fr in enumerate(frames):
        tlist = [t for t in fr.truths if t.label == label]
        truth_boxes[pos] = tlist
        truth_used[pos] = np.zeros(len(tlist), dtype=bool)

    tp_flags = np.zeros(len(ranked), dtype=bool)
    for k, (_negconf, _fid, di, pos) in enumerate(ranked):
        det = frames[pos].detections[di]
        best, best_iou = -1, iou_threshold
        for j, t in enumerate(truth_boxes[pos]):
            if truth_used[pos][j]:
                continue
            v = iou(det.box, t.box)
            if v >= iou_threshold and (best == -1 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            truth_used[pos][best] = True
            tp_flags[k] = True

    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(~tp_flags)
    recall = tp_cum / n_truth
    precision = tp_cum / (tp_cum + fp_cum)

    # Monotone envelope, integrated over every recall step.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = 0.0
    area = 0.0
    for r, p in zip(recall, envelope):
        area += (r - prev_recall) * p
        prev_recall = r
    return float(area)


def evaluate(
    frames: Sequence[EvalFrame],
    cfg: MatchConfig | None = None,
    classes: Sequence[StageLabel] | None = None,
) -> EvalReport:
    """Per-class and aggregate metrics over a dataset of frames.

    Classes with zero truth instances are excluded from the macro means
    and listed as absent.
    """
    if not frames:
        raise ValueError("empty dataset")
    cfg = cfg or MatchConfig()
    if classes is None:
        has_surface = any(t.label in SURFACE_STAGES for fr in frames for t in fr.truths)
        classes = SURFACE_STAGES if has_surface else (StageLabel.CORAL,)

    tp = dict.fromkeys(classes, 0)
    fp = dict.fromkeys(classes, 0)
    fn = dict.fromkeys(classes, 0)
    truth_count = dict.fromkeys(classes, 0)
    for fr in frames:
        result = match_frame(fr.detections, fr.truths, cfg)
        kept_dets = [fr.detections[i] for i in result.kept_indices]
        for det, is_tp in zip(kept_dets, result.detection_tp):
            if det.label not in tp:
                continue
            if is_tp:
                tp[det.label] += 1
            else:
                fp[det.label] += 1
        for t, got in zip(fr.truths, result.truth_matched):
            truth_count[t.label] = truth_count.get(t.label, 0) + 1
            if not got and t.label in fn:
                fn[t.label] += 1

    metrics = []
    absent = []
    for label in classes:
        if truth_count.get(label, 0) == 0:
            absent.append(label)
            continue
        p_den = tp[label] + fp[label]
        r_den = tp[label] + fn[label]
        precision = tp[label] / p_den if p_den else 0.0
        recall = tp[label] / r_den if r_den else 0.0
        metrics.append(
            ClassMetrics(
                label=label,
                tp=tp[label],
                fp=fp[label],
                fn=fn[label],
                precision=precision,
                recall=recall,
                f1=f1(precision, recall),
                ap=average_precision(frames, label, cfg.iou_threshold),
                truth_count=truth_count[label],
            )
        )

    present = {m.label: m for m in metrics}
    f1_values = [m.f1 for m in metrics]
    f1_ex_dam = [m.f1 for m in metrics if m.label != StageLabel.DAMAGED]
    ap_values = [m.ap for m in metrics]
    return EvalReport(
        per_class=tuple(metrics),
        macro_f1=float(np.mean(f1_values)) if f1_values else 0.0,
        macro_f1_excluding_damaged=float(np.mean(f1_ex_dam)) if f1_ex_dam else 0.0,
        map_50=float(np.mean(ap_values)) if ap_values else 0.0,
        absent_classes=tuple(absent),
    )
