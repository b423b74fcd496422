"""Oracle and reference detectors."""

import time

import numpy as np
import pytest

from spawnwatch.detect import (
    DetectorError,
    DetectorNoise,
    oracle_detect,
    reference_detect,
    ReferenceParams,
    uniform_confusion,
)
from spawnwatch.evalkit import iou
from spawnwatch.model import BoundingBox, GroundTruthBox, OperationalMode, StageLabel
from spawnwatch.simtank import Tank, TankConfig, render_frame
from spawnwatch.simtank.render import BACKGROUND
from spawnwatch.simtank.tank import (
    ASPECT_FIRST_CLEAVAGE,
    ASPECT_SIX_CLUSTER,
    ASPECT_TWO_CELL,
    Distractor,
    FrameTruth,
)

STAGE_ASPECTS = [
    (StageLabel.EGG, 1.0),
    (StageLabel.FIRST_CLEAVAGE, ASPECT_FIRST_CLEAVAGE),
    (StageLabel.TWO_CELL, ASPECT_TWO_CELL),
    (StageLabel.FOUR_EIGHT_CELL, 1.0),
    (StageLabel.FOUR_EIGHT_CELL, ASPECT_SIX_CLUSTER),
    (StageLabel.ADVANCED, 1.0),
    (StageLabel.DAMAGED, 3.0),
]


def surface_frame(n_boxes=20, seed=0, frame_id=0) -> FrameTruth:
    cfg = TankConfig(volume_liters=0.02, seed=seed, surface_fov_area_fraction=1.0)
    tank = Tank(cfg)
    tank.step(30.0)
    frame = tank.capture_frame()
    return frame


def single_blob_frame(label: StageLabel, aspect: float, height=0.12) -> FrameTruth:
    box = BoundingBox.from_center(0.5, 0.5, height * aspect, height)
    mode = OperationalMode.SUBSURFACE if label == StageLabel.CORAL else OperationalMode.SURFACE
    return FrameTruth(
        frame_id=0,
        time=0.0,
        mode=mode,
        boxes=(GroundTruthBox(box=box, label=label),),
        visible_count=1,
        in_focus_count=1 if mode == OperationalMode.SUBSURFACE else None,
        tank_population=10,
    )


class TestOracleDetect:
    def test_zero_noise_echoes_truth(self):
        frame = surface_frame()
        result = oracle_detect(frame, DetectorNoise(), seed=1)
        assert len(result.detections) == len(frame.boxes)
        for det, gt in zip(result.detections, frame.boxes):
            assert det.box == gt.box
            assert det.label == gt.label

    def test_miss_rate_one_leaves_only_false_positives(self):
        frame = surface_frame()
        result = oracle_detect(
            frame, DetectorNoise(miss_rate=1.0, false_positive_rate=3.0), seed=1
        )
        truth_boxes = {gt.box for gt in frame.boxes}
        assert all(det.box not in truth_boxes for det in result.detections)

    def test_deterministic_given_seed(self):
        frame = surface_frame()
        noise = DetectorNoise(miss_rate=0.2, false_positive_rate=2.0, box_jitter_sigma=0.01)
        a = oracle_detect(frame, noise, seed=42)
        b = oracle_detect(frame, noise, seed=42)
        assert a == b
        c = oracle_detect(frame, noise, seed=43)
        assert a != c

    def test_recall_matches_binomial_expectation(self):
        # Over many frames, the survivor fraction is miss-rate binomial.
        noise = DetectorNoise(miss_rate=0.1)
        cfg = TankConfig(volume_liters=0.02, seed=2, surface_fov_area_fraction=1.0)
        tank = Tank(cfg)
        kept = 0
        total = 0
        for _ in range(1000):
            frame = tank.capture_frame()
            result = oracle_detect(frame, noise, seed=7)
            kept += len(result.detections)
            total += len(frame.boxes)
        recall = kept / total
        assert abs(recall - 0.9) < 0.02

    def test_confusion_relabels(self):
        frame = surface_frame()
        # Degenerate confusion: everything becomes damaged.
        confusion = np.zeros((6, 6))
        confusion[:, 5] = 1.0
        result = oracle_detect(frame, DetectorNoise(confusion=confusion), seed=1)
        assert result.detections
        assert all(d.label == StageLabel.DAMAGED for d in result.detections)

    def test_confusion_rows_validated(self):
        bad = np.full((6, 6), 0.1)
        with pytest.raises(ValueError):
            DetectorNoise(confusion=bad)

    def test_uniform_confusion_rows_sum_to_one(self):
        m = uniform_confusion(0.95)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_jitter_moves_but_keeps_size(self):
        frame = surface_frame()
        result = oracle_detect(frame, DetectorNoise(box_jitter_sigma=0.01), seed=3)
        for det, gt in zip(result.detections, frame.boxes):
            assert det.box.width == pytest.approx(gt.box.width)
            assert det.box.height == pytest.approx(gt.box.height)
        assert any(det.box != gt.box for det, gt in zip(result.detections, frame.boxes))

    def test_taxonomy_mismatch_raises(self):
        frame = single_blob_frame(StageLabel.CORAL, 1.3)
        bad = FrameTruth(
            frame_id=frame.frame_id,
            time=frame.time,
            mode=OperationalMode.SURFACE,
            boxes=frame.boxes,
            visible_count=1,
            tank_population=10,
        )
        with pytest.raises(DetectorError):
            oracle_detect(bad, DetectorNoise(), seed=0)


class TestReferenceDetect:
    def test_background_only_no_detections(self):
        img = np.full((240, 240), int(BACKGROUND), dtype=np.uint8)
        result = reference_detect(img, OperationalMode.SURFACE)
        assert result.detections == ()

    @pytest.mark.parametrize("label,aspect", STAGE_ASPECTS)
    def test_stage_classification_on_clean_renders(self, label, aspect):
        frame = single_blob_frame(label, aspect)
        img = render_frame(frame, 640, 640, noise_sigma=0.0)
        result = reference_detect(img, OperationalMode.SURFACE)
        assert len(result.detections) == 1
        det = result.detections[0]
        assert det.label == label
        assert iou(det.box, frame.boxes[0].box) >= 0.5

    def test_single_egg_round_trip(self):
        frame = single_blob_frame(StageLabel.EGG, 1.0)
        img = render_frame(frame, 640, 640, noise_sigma=0.0)
        result = reference_detect(img, OperationalMode.SURFACE)
        assert len(result.detections) == 1
        assert result.detections[0].label == StageLabel.EGG
        assert iou(result.detections[0].box, frame.boxes[0].box) >= 0.5

    def test_damaged_ellipse_by_elongation(self):
        frame = single_blob_frame(StageLabel.DAMAGED, 3.0)
        img = render_frame(frame, 640, 640, noise_sigma=0.0)
        result = reference_detect(img, OperationalMode.SURFACE)
        assert [d.label for d in result.detections] == [StageLabel.DAMAGED]

    def test_deterministic(self):
        frame = surface_frame()
        img = render_frame(frame, 640, 640, noise_sigma=4.0, seed=2)
        a = reference_detect(img, OperationalMode.SURFACE)
        b = reference_detect(img, OperationalMode.SURFACE)
        assert a.detections == b.detections

    def test_out_of_focus_blobs_rejected(self):
        sharp = GroundTruthBox(
            box=BoundingBox.from_center(0.3, 0.3, 0.1, 0.08), label=StageLabel.CORAL
        )
        blurred = Distractor(box=BoundingBox.from_center(0.7, 0.7, 0.1, 0.08), blur_px=6.0)
        frame = FrameTruth(
            frame_id=0,
            time=0.0,
            mode=OperationalMode.SUBSURFACE,
            boxes=(sharp,),
            visible_count=2,
            in_focus_count=1,
            tank_population=10,
            distractors=(blurred,),
        )
        img = render_frame(frame, 640, 640, noise_sigma=0.0)
        result = reference_detect(img, OperationalMode.SUBSURFACE)
        assert len(result.detections) == 1
        assert iou(result.detections[0].box, sharp.box) >= 0.5

    def test_count_matches_truth_for_nonoverlapping_layouts(self):
        # Non-overlapping grid: one detection per truth blob.
        boxes = []
        rng = np.random.default_rng(4)
        for i in range(3):
            for j in range(3):
                label, aspect = STAGE_ASPECTS[(3 * i + j) % len(STAGE_ASPECTS)]
                h = 0.06
                boxes.append(
                    GroundTruthBox(
                        box=BoundingBox.from_center(
                            0.17 + 0.33 * j, 0.17 + 0.33 * i, h * aspect, h
                        ),
                        label=label,
                    )
                )
        frame = FrameTruth(
            frame_id=0,
            time=0.0,
            mode=OperationalMode.SURFACE,
            boxes=tuple(boxes),
            visible_count=len(boxes),
            tank_population=50,
        )
        img = render_frame(frame, 960, 960, noise_sigma=0.0)
        result = reference_detect(img, OperationalMode.SURFACE)
        assert len(result.detections) == len(boxes)

    def test_frame_budget_full_hd(self):
        frame = surface_frame(seed=8)
        img = render_frame(frame, 1920, 1080, noise_sigma=6.0)
        start = time.perf_counter()
        result = reference_detect(img, OperationalMode.SURFACE)
        elapsed = time.perf_counter() - start
        assert elapsed < 2.0
        assert result.inference_time < 2.0

    def test_empty_image_rejected(self):
        with pytest.raises(DetectorError):
            reference_detect(np.zeros((0, 0), dtype=np.uint8), OperationalMode.SURFACE)

    def test_degenerate_threshold_rejected(self):
        with pytest.raises(ValueError):
            ReferenceParams(threshold=0.0)
        with pytest.raises(ValueError):
            ReferenceParams(threshold=255.0)

    def test_color_image_rejected(self):
        with pytest.raises(DetectorError):
            reference_detect(np.zeros((4, 4, 3), dtype=np.uint8), OperationalMode.SURFACE)


class TestDetectionResultPayload:
    def test_round_trip(self):
        frame = surface_frame()
        result = oracle_detect(frame, DetectorNoise(miss_rate=0.1), seed=5)
        from spawnwatch.detect import DetectionResult

        clone = DetectionResult.from_payload(result.to_payload(source="oracle"))
        assert clone.frame_id == result.frame_id
        assert clone.detections == result.detections
