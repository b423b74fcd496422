"""Human-in-the-loop annotation bookkeeping.

Round planning (manual bootstrap, then pseudo-labeled batches reviewed
before each retrain), the review queue with an append-only audit trail,
dataset splits, and the normalized center/size label-file format that
standard detection tooling consumes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from spawnwatch.model import BoundingBox, Detection, GroundTruthBox, StageLabel

CLASS_ORDER: tuple[StageLabel, ...] = tuple(StageLabel)


class RoundSource(str, Enum):
    MANUAL = "manual"
    PSEUDO_LABELED = "pseudo_labeled"


class ReviewStatus(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    CORRECTED = "corrected"


class ReviewAction(str, Enum):
    ACCEPT = "accept"
    CORRECT = "correct"
    REJECT = "reject"


@dataclass(frozen=True)
class AuditEvent:
    """One reviewer decision; the trail is append-only, so corrections
    never erase the original proposal."""

    image_id: str
    box_index: int
    action: ReviewAction
    proposed: GroundTruthBox | None
    final: GroundTruthBox | None


@dataclass
class AnnotationRound:
    round_index: int
    source: RoundSource
    image_ids: list[str]
    review_status: dict[str, ReviewStatus] = field(default_factory=dict)
    proposals: dict[str, list[GroundTruthBox]] = field(default_factory=dict)
    labels: dict[str, list[GroundTruthBox]] = field(default_factory=dict)
    audit: list[AuditEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        for image_id in self.image_ids:
            self.review_status.setdefault(image_id, ReviewStatus.PENDING)

    @property
    def size(self) -> int:
        return len(self.image_ids)

    @property
    def closed(self) -> bool:
        return all(s != ReviewStatus.PENDING for s in self.review_status.values())


def plan_rounds(total_images: int, bootstrap: int = 100, batch: int = 200) -> list[AnnotationRound]:
    """Round skeletons: a manual bootstrap, then fixed-size pseudo-label
    batches, the last one truncated so sizes sum to the total exactly."""
    if bootstrap < 1 or batch < 1:
        raise ValueError("bootstrap and batch must be >= 1")
    if total_images < bootstrap:
        raise ValueError(f"total_images ({total_images}) < bootstrap ({bootstrap})")
    sizes = [bootstrap]
    remaining = total_images - bootstrap
    while remaining > 0:
        take = min(batch, remaining)
        sizes.append(take)
        remaining -= take
    rounds = []
    start = 0
    for idx, size in enumerate(sizes):
        ids = [f"img-{i:06d}" for i in range(start, start + size)]
        start += size
        rounds.append(
            AnnotationRound(
                round_index=idx,
                source=RoundSource.MANUAL if idx == 0 else RoundSource.PSEUDO_LABELED,
                image_ids=ids,
            )
        )
    return rounds


def pseudo_label(
    rnd: AnnotationRound,
    detector: Callable[[str], Sequence[Detection]],
    confidence_threshold: float = 0.5,
) -> None:
    """Run the bound detector over a pseudo-label round's images; every
    confident detection becomes a pending proposal for review."""
    if rnd.source != RoundSource.PSEUDO_LABELED:
        raise ValueError(f"round {rnd.round_index} is {rnd.source.value}, not pseudo-labeled")
    for image_id in rnd.image_ids:
        try:
            detections = detector(image_id)
        except Exception as exc:
            raise RuntimeError(f"detector failed on {image_id}: round blocked") from exc
        rnd.proposals[image_id] = [
            GroundTruthBox(box=d.box, label=d.label)
            for d in detections
            if d.confidence >= confidence_threshold
        ]
        rnd.review_status[image_id] = ReviewStatus.PENDING


def review_image(
    rnd: AnnotationRound,
    image_id: str,
    decisions: Sequence[tuple[ReviewAction, GroundTruthBox | None]],
) -> None:
    """Apply reviewer decisions for one image, one per proposed box.

    Accept keeps the proposal, correct swaps in the reviewer's box,
    reject drops it. The exported labels hold the final boxes; originals
    live only in the audit trail.
    """
    proposals = rnd.proposals.get(image_id, [])
    if len(decisions) != len(proposals):
        raise ValueError(
            f"{image_id}: {len(decisions)} decisions for {len(proposals)} proposals"
        )
    final: list[GroundTruthBox] = []
    corrected = False
    for i, ((action, replacement), proposal) in enumerate(zip(decisions, proposals)):
        if action == ReviewAction.ACCEPT:
            final.append(proposal)
            outcome = proposal
        elif action == ReviewAction.CORRECT:
            if replacement is None:
                raise ValueError(f"{image_id} box {i}: correction needs a replacement box")
            final.append(replacement)
            outcome = replacement
            corrected = True
        else:
            outcome = None
            corrected = True
        rnd.audit.append(
            AuditEvent(
                image_id=image_id, box_index=i, action=action, proposed=proposal, final=outcome
            )
        )
    rnd.labels[image_id] = final
    rnd.review_status[image_id] = ReviewStatus.CORRECTED if corrected else ReviewStatus.ACCEPTED


def annotate_manually(rnd: AnnotationRound, image_id: str, boxes: Sequence[GroundTruthBox]) -> None:
    """Record hand-drawn labels for a manual-round image."""
    if rnd.source != RoundSource.MANUAL:
        raise ValueError("manual annotation only applies to the bootstrap round")
    rnd.labels[image_id] = list(boxes)
    rnd.review_status[image_id] = ReviewStatus.ACCEPTED


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    ratios: tuple[float, float, float]
    seed: int


def make_split(
    image_ids: Sequence[str],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Seeded shuffle, then contiguous allocation: floor sizes for val and
    test, remainder to train."""
    if not image_ids:
        raise ValueError("no image ids to split")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    ids = list(image_ids)
    random.Random(seed).shuffle(ids)
    n = len(ids)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=tuple(ids[:n_train]),
        val=tuple(ids[n_train : n_train + n_val]),
        test=tuple(ids[n_train + n_val :]),
        ratios=ratios,
        seed=seed,
    )


def format_label_line(box: GroundTruthBox) -> str:
    cx, cy = box.box.center()
    return f"{CLASS_ORDER.index(box.label)} {cx} {cy} {box.box.width} {box.box.height}"


def parse_label_line(line: str) -> GroundTruthBox:
    parts = line.split()
    if len(parts) != 5:
        raise ValueError(f"expected 5 fields, got {len(parts)}: {line!r}")
    idx = int(parts[0])
    if not (0 <= idx < len(CLASS_ORDER)):
        raise ValueError(f"class index out of range: {idx}")
    cx, cy, w, h = (float(v) for v in parts[1:])
    return GroundTruthBox(box=BoundingBox.from_center(cx, cy, w, h), label=CLASS_ORDER[idx])


def export_labels(labels: dict[str, Iterable[GroundTruthBox]], out_dir: str | Path) -> list[Path]:
    """One text file per image, one ``<class> <cx> <cy> <w> <h>`` line per
    box in normalized coordinates. import_labels inverts this exactly."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for image_id, boxes in sorted(labels.items()):
        path = out_dir / f"{image_id}.txt"
        lines = [format_label_line(b) for b in boxes]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        written.append(path)
    return written


def import_labels(label_dir: str | Path) -> dict[str, list[GroundTruthBox]]:
    labels: dict[str, list[GroundTruthBox]] = {}
    for path in sorted(Path(label_dir).glob("*.txt")):
        boxes = [
            parse_label_line(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        labels[path.stem] = boxes
    return labels
