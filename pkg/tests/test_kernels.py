"""Kernel backends must agree bit for bit; semantics checked against
hand-rolled references."""

import numpy as np
import pytest

from spawnwatch._kernels import available_backends

BACKENDS = available_backends()


def random_step_inputs(rng, n):
    stage = rng.integers(0, 6, size=n).astype(np.int8)
    fertilized = rng.random(n) < 0.6
    exit_time = rng.uniform(0.0, 100.0, size=n)
    exit_time[rng.random(n) < 0.2] = np.inf
    return stage, fertilized, exit_time


def reference_step_actions(stage, fertilized, exit_time, now, advance_below, removal_code):
    out = np.zeros(len(stage), dtype=np.uint8)
    for i in range(len(stage)):
        if exit_time[i] <= now:
            if stage[i] == removal_code:
                out[i] = 2
            elif fertilized[i] and stage[i] < advance_below:
                out[i] = 1
    return out


def reference_greedy_match(iou, det_order, det_labels, truth_labels, threshold):
    matched = np.full(iou.shape[0], -1, dtype=np.int64)
    taken = [False] * iou.shape[1]
    for d in det_order:
        best, best_v = -1, -1.0
        for t in range(iou.shape[1]):
            if taken[t] or truth_labels[t] != det_labels[d]:
                continue
            if iou[d, t] >= threshold and iou[d, t] > best_v:
                best, best_v = t, iou[d, t]
        if best >= 0:
            matched[d] = best
            taken[best] = True
    return matched


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_step_actions_semantics(backend):
    rng = np.random.default_rng(0)
    mod = BACKENDS[backend]
    for _ in range(25):
        stage, fertilized, exit_time = random_step_inputs(rng, 200)
        now = float(rng.uniform(0, 120))
        got = mod.step_actions(stage, fertilized, exit_time, now, 4, 5)
        want = reference_step_actions(stage, fertilized, exit_time, now, 4, 5)
        np.testing.assert_array_equal(got, want)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_greedy_match_semantics(backend):
    rng = np.random.default_rng(1)
    mod = BACKENDS[backend]
    for _ in range(50):
        n_det, n_truth = rng.integers(0, 9), rng.integers(0, 7)
        iou = rng.random((n_det, n_truth))
        det_order = rng.permutation(n_det).astype(np.int64)
        det_labels = rng.integers(0, 3, size=n_det)
        truth_labels = rng.integers(0, 3, size=n_truth)
        got = mod.greedy_match(iou, det_order, det_labels, truth_labels, 0.5)
        want = reference_greedy_match(iou, det_order, det_labels, truth_labels, 0.5)
        np.testing.assert_array_equal(got, want)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
def test_backends_bit_identical():
    rng = np.random.default_rng(2)
    native, python = BACKENDS["native"], BACKENDS["python"]
    for _ in range(30):
        stage, fertilized, exit_time = random_step_inputs(rng, 500)
        now = float(rng.uniform(0, 120))
        np.testing.assert_array_equal(
            native.step_actions(stage, fertilized, exit_time, now, 4, 5),
            python.step_actions(stage, fertilized, exit_time, now, 4, 5),
        )
        n_det, n_truth = rng.integers(1, 12), rng.integers(1, 10)
        iou = rng.random((n_det, n_truth))
        order = rng.permutation(n_det).astype(np.int64)
        dl = rng.integers(0, 4, size=n_det)
        tl = rng.integers(0, 4, size=n_truth)
        np.testing.assert_array_equal(
            native.greedy_match(iou, order, dl, tl, 0.5),
            python.greedy_match(iou, order, dl, tl, 0.5),
        )


def test_first_index_wins_iou_ties():
    iou = np.array([[0.8, 0.8]])
    for mod in BACKENDS.values():
        matched = mod.greedy_match(
            iou,
            np.array([0], dtype=np.int64),
            np.zeros(1, dtype=np.int64),
            np.zeros(2, dtype=np.int64),
            0.5,
        )
        assert matched.tolist() == [0]
