"""Tank simulator: population dynamics, capture sampling, rendering,
scenario parsing."""

import math

import numpy as np
import pytest
from scipy import ndimage

from spawnwatch.model import OperationalMode, StageLabel
from spawnwatch.simtank import (
    Scenario,
    ScenarioError,
    Tank,
    TankConfig,
    parse_scenario,
    read_pgm,
    render_frame,
    scenario_text,
    write_pgm,
)
from spawnwatch.simtank.render import BACKGROUND
from spawnwatch.simtank.tank import ADVANCED, DAMAGED, EGG


def small_config(**overrides) -> TankConfig:
    defaults = dict(volume_liters=1.0, seed=5, time_compression=36.0)
    defaults.update(overrides)
    return TankConfig(**defaults)


class TestInit:
    def test_paper_scale_population(self):
        tank = Tank(TankConfig(volume_liters=500.0, stocking_density_per_ml=1.0))
        assert tank.population == 500_000

    def test_everyone_starts_as_egg_at_surface(self):
        tank = Tank(small_config())
        counts = tank.stage_counts()
        assert counts.eggs == tank.population
        assert tank.mode == OperationalMode.SURFACE
        assert np.all(tank.depth == 0.0)

    def test_fertilized_fraction_draw(self):
        tank = Tank(small_config(volume_liters=20.0, fertilized_fraction=0.7))
        frac = tank.fertilized.mean()
        sigma = math.sqrt(0.7 * 0.3 / tank.population)
        assert abs(frac - 0.7) < 4 * sigma

    def test_same_seed_identical_state(self):
        a, b = Tank(small_config()), Tank(small_config())
        for _ in range(20):
            a.step(10.0)
            b.step(10.0)
        np.testing.assert_array_equal(a.stage, b.stage)
        np.testing.assert_array_equal(a.exit_time, b.exit_time)
        fa, fb = a.capture_frame(), b.capture_frame()
        assert fa == fb


class TestStep:
    def test_zero_dt_is_noop(self):
        tank = Tank(small_config())
        before = tank.stage.copy()
        tank.step(0.0)
        np.testing.assert_array_equal(tank.stage, before)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            Tank(small_config()).step(-1.0)

    def test_unfertilized_never_cleave(self):
        tank = Tank(small_config(fertilized_fraction=0.0, damage_rate_per_hour=0.05))
        for _ in range(100):
            tank.step(30.0)
        assert set(np.unique(tank.stage)) <= {EGG, DAMAGED}

    def test_advanced_is_absorbing(self):
        tank = Tank(small_config(fertilized_fraction=1.0, damage_rate_per_hour=0.0))
        # 12 bio-hours per step at compression 36: far past all dwell means
        for _ in range(10):
            tank.step(1200.0)
        assert set(np.unique(tank.stage)) == {ADVANCED}

    def test_exponential_dwell_expectation(self):
        # After exactly one mean dwell, the fraction still in the egg
        # stage should be e^-1 (binomial bound pooled over seeds).
        remaining = 0
        total = 0
        for seed in range(12):
            cfg = small_config(
                volume_liters=0.5,
                fertilized_fraction=1.0,
                damage_rate_per_hour=0.0,
                seed=seed,
            )
            tank = Tank(cfg)
            mean_dwell_s = cfg.dwell_egg_hours * 3600.0 / cfg.time_compression
            tank.step(mean_dwell_s)
            remaining += int((tank.stage == EGG).sum())
            total += tank.population
        expected = math.exp(-1.0)
        sigma = math.sqrt(expected * (1 - expected) / total)
        assert abs(remaining / total - expected) < 3 * sigma

    def test_population_conservation(self):
        tank = Tank(
            small_config(
                fertilized_fraction=0.3,
                damage_rate_per_hour=0.5,
                damaged_persistence_hours=0.5,
            )
        )
        initial = tank.population
        for _ in range(200):
            tank.step(30.0)
            assert tank.population + tank.removed_total == initial

    def test_dissolution_events_variance_matches_mean(self):
        # With no chain reaction, interval counts are ~Poisson: the
        # variance/mean ratio over Monte-Carlo runs stays near 1.
        counts = []
        for seed in range(250):
            cfg = small_config(
                volume_liters=2.0,
                fertilized_fraction=0.0,
                damage_rate_per_hour=0.02,
                dissolution_chain_factor=0.0,
                seed=seed,
            )
            tank = Tank(cfg)
            tank.step(60.0)
            counts.append(tank.dissolution_events)
        mean = np.mean(counts)
        ratio = np.var(counts) / mean
        assert mean > 5
        assert 0.75 < ratio < 1.25

    def test_chain_reaction_escalates(self):
        base = small_config(
            volume_liters=2.0, fertilized_fraction=0.0, damage_rate_per_hour=0.02, seed=3
        )
        chain = small_config(
            volume_liters=2.0,
            fertilized_fraction=0.0,
            damage_rate_per_hour=0.02,
            dissolution_chain_factor=0.01,
            seed=3,
        )
        tanks = Tank(base), Tank(chain)
        for _ in range(60):
            for t in tanks:
                t.step(60.0)
        assert tanks[1].dissolution_events > tanks[0].dissolution_events

    def test_mode_monotone_and_dispersal(self):
        cfg = small_config()
        tank = Tank(cfg)
        t1 = tank.timeline.t1
        while tank.time < t1:
            assert tank.mode == OperationalMode.SURFACE
            tank.step(60.0)
        assert tank.mode == OperationalMode.SUBSURFACE
        assert tank.depth.max() > 0.0
        for _ in range(20):
            tank.step(60.0)
            assert tank.mode == OperationalMode.SUBSURFACE


class TestCaptureFrame:
    def test_full_fov_full_focus(self):
        cfg = small_config(
            volume_liters=0.1,
            fov_volume_fraction=1.0,
            focus_depth_min_m=0.0,
            focus_depth_max_m=1.0,
        )
        tank = Tank(cfg)
        tank.step(tank.timeline.t1 + 1.0)
        frame = tank.capture_frame(focus_band=(0.0, 1.0))
        assert frame.in_focus_count == frame.visible_count == tank.population

    def test_binomial_thinning_unbiased(self):
        cfg = small_config(volume_liters=5.0, surface_fov_area_fraction=0.05)
        tank = Tank(cfg)
        n = tank.population
        visible = [tank.capture_frame().visible_count for _ in range(250)]
        estimate = np.mean(visible) / cfg.surface_fov_area_fraction
        assert abs(estimate - n) / n < 0.02

    def test_surface_frames_have_no_coral_label(self):
        tank = Tank(small_config(surface_fov_area_fraction=0.2))
        frame = tank.capture_frame()
        assert frame.mode == OperationalMode.SURFACE
        assert all(gt.label != StageLabel.CORAL for gt in frame.boxes)
        assert frame.in_focus_count is None

    def test_subsurface_frames_single_class(self):
        cfg = small_config(fov_volume_fraction=0.3)
        tank = Tank(cfg)
        tank.step(tank.timeline.t1 + 1.0)
        frame = tank.capture_frame()
        assert frame.mode == OperationalMode.SUBSURFACE
        assert all(gt.label == StageLabel.CORAL for gt in frame.boxes)
        assert frame.in_focus_count == len(frame.boxes)
        assert frame.in_focus_count <= frame.visible_count <= frame.tank_population
        assert len(frame.distractors) == frame.visible_count - frame.in_focus_count

    def test_bad_focus_band_rejected(self):
        tank = Tank(small_config())
        tank.step(tank.timeline.t1 + 1.0)
        with pytest.raises(ValueError):
            tank.capture_frame(focus_band=(0.8, 0.2))

    def test_payload_round_trip(self):
        tank = Tank(small_config(surface_fov_area_fraction=0.1))
        from spawnwatch.simtank.tank import FrameTruth

        frame = tank.capture_frame()
        assert FrameTruth.from_payload(frame.to_payload()) == frame


class TestRender:
    def test_empty_truth_is_background_only(self):
        from spawnwatch.simtank.tank import FrameTruth

        frame = FrameTruth(
            frame_id=0,
            time=0.0,
            mode=OperationalMode.SURFACE,
            boxes=(),
            visible_count=0,
            tank_population=10,
        )
        img = render_frame(frame, 64, 64, noise_sigma=0.0)
        assert np.all(img == int(BACKGROUND))

    def test_deterministic_given_truth_and_seed(self):
        tank = Tank(small_config(surface_fov_area_fraction=0.05))
        frame = tank.capture_frame()
        a = render_frame(frame, 320, 320, noise_sigma=5.0, seed=9)
        b = render_frame(frame, 320, 320, noise_sigma=5.0, seed=9)
        np.testing.assert_array_equal(a, b)
        c = render_frame(frame, 320, 320, noise_sigma=5.0, seed=10)
        assert not np.array_equal(a, c)

    def test_connected_component_boxes_overlap_truth(self):
        # Independent oracle: connected components of the noiseless render
        # must produce bounding boxes with IoU >= 0.5 against the truth.
        from spawnwatch.model import BoundingBox, GroundTruthBox
        from spawnwatch.simtank.tank import (
            ASPECT_FIRST_CLEAVAGE,
            ASPECT_SIX_CLUSTER,
            ASPECT_TWO_CELL,
            FrameTruth,
        )

        specs = [
            (StageLabel.EGG, 1.0),
            (StageLabel.FIRST_CLEAVAGE, ASPECT_FIRST_CLEAVAGE),
            (StageLabel.TWO_CELL, ASPECT_TWO_CELL),
            (StageLabel.FOUR_EIGHT_CELL, ASPECT_SIX_CLUSTER),
            (StageLabel.ADVANCED, 1.0),
            (StageLabel.DAMAGED, 3.0),
        ]
        boxes = []
        for i, (label, aspect) in enumerate(specs):
            cx = 0.15 + 0.35 * (i % 3)
            cy = 0.25 + 0.45 * (i // 3)
            h = 0.1
            boxes.append(
                GroundTruthBox(box=BoundingBox.from_center(cx, cy, h * aspect, h), label=label)
            )
        frame = FrameTruth(
            frame_id=0,
            time=0.0,
            mode=OperationalMode.SURFACE,
            boxes=tuple(boxes),
            visible_count=len(boxes),
            tank_population=100,
        )
        img = render_frame(frame, 512, 512, noise_sigma=0.0)
        labeled, n = ndimage.label(img > BACKGROUND, structure=np.ones((3, 3)))
        assert n == len(boxes)
        slices = ndimage.find_objects(labeled)
        from spawnwatch.evalkit import iou

        for sl in slices:
            cc_box = BoundingBox(
                x_min=sl[1].start / 512,
                y_min=sl[0].start / 512,
                x_max=sl[1].stop / 512,
                y_max=sl[0].stop / 512,
            )
            best = max(iou(cc_box, gt.box) for gt in boxes)
            assert best >= 0.5

    def test_pgm_round_trip(self, tmp_path):
        img = (np.arange(300) % 256).astype(np.uint8).reshape(15, 20)
        path = tmp_path / "frame.pgm"
        write_pgm(img, path)
        np.testing.assert_array_equal(read_pgm(path), img)


class TestScenario:
    def test_defaults(self):
        scenario = parse_scenario("duration_s = 60\n")
        assert scenario.capture_interval_s == 10.0
        assert scenario.tank.volume_liters == 500.0

    def test_unknown_fields_named(self):
        with pytest.raises(ScenarioError, match="bogus_field"):
            parse_scenario("bogus_field = 3\nother_bad = 1\n")

    def test_bad_value_names_field(self):
        with pytest.raises(ScenarioError, match="volume_liters"):
            parse_scenario("volume_liters = not-a-number\n")

    def test_validation_errors(self):
        with pytest.raises(ScenarioError, match="capture_interval_s"):
            parse_scenario("capture_interval_s = 0.5\n")
        with pytest.raises(ScenarioError, match="fertilized_fraction"):
            parse_scenario("fertilized_fraction = 1.5\n")

    def test_text_round_trip(self):
        scenario = Scenario(
            tank=TankConfig(volume_liters=2.0, seed=9, time_compression=12.0),
            label="round-trip",
            duration_s=120.0,
            render=True,
        )
        assert parse_scenario(scenario_text(scenario)) == scenario

    def test_comments_and_blanks_ignored(self):
        scenario = parse_scenario("# a comment\n\nseed = 4  # trailing\n")
        assert scenario.tank.seed == 4
