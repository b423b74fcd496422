"""Pure-numpy implementations of the hot kernels.

These are the reference semantics: the compiled extension must produce
bit-identical outputs for the same inputs (both backends consume
pre-drawn randomness, so no RNG lives here).
"""

from __future__ import annotations

import numpy as np

ACTION_NONE = 0
ACTION_ADVANCE = 1
ACTION_REMOVE = 2


def step_actions(
    stage: np.ndarray,
    fertilized: np.ndarray,
    exit_time: np.ndarray,
    now: float,
    advance_below: int,
    removal_code: int,
) -> np.ndarray:
    """Per-individual action codes for one simulation step.

    advance: fertilized, stage < advance_below, dwell expired.
    remove: stage == removal_code, persistence expired.
    """
    due = exit_time <= now
    actions = np.zeros(stage.shape[0], dtype=np.uint8)
    actions[fertilized & (stage < advance_below) & due] = ACTION_ADVANCE
    actions[(stage == removal_code) & due] = ACTION_REMOVE
    return actions


def greedy_match(
    iou: np.ndarray,
    det_order: np.ndarray,
    det_labels: np.ndarray,
    truth_labels: np.ndarray,
    iou_threshold: float,
) -> np.ndarray:
    """Greedy one-to-one assignment of detections to truth boxes.

    Detections claim truths in ``det_order``; each takes the unmatched
    same-label truth with the highest IoU >= threshold (first index wins
    ties). Returns the matched truth index per detection, -1 if none.
    """
    n_det, n_truth = iou.shape
    matched = np.full(n_det, -1, dtype=np.int64)
    if n_truth == 0:
        return matched
    taken = np.zeros(n_truth, dtype=bool)
    for d in det_order:
        row = np.where(taken | (truth_labels != det_labels[d]), -1.0, iou[d])
        t = int(np.argmax(row))
        if row[t] >= iou_threshold:
            matched[d] = t
            taken[t] = True
    return matched
