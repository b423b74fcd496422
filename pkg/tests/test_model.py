"""Domain vocabulary: taxonomy, geometry, counts."""

import random

import pytest

from spawnwatch.model import (
    FERTILIZED_STAGES,
    SURFACE_STAGES,
    BoundingBox,
    Detection,
    PhaseTimeline,
    OperationalMode,
    StageCounts,
    StageLabel,
    TaxonomyError,
    counts_from_labels,
    stage_is_fertilized,
)


class TestStageLabel:
    def test_serialized_names(self):
        assert [s.value for s in StageLabel] == [
            "egg",
            "first_cleavage",
            "two_cell",
            "four_eight_cell",
            "advanced",
            "damaged",
            "coral",
        ]

    def test_fertilized_partition(self):
        flags = {s: stage_is_fertilized(s) for s in SURFACE_STAGES}
        assert sum(flags.values()) == 4
        assert [s for s, v in flags.items() if not v] == [StageLabel.EGG, StageLabel.DAMAGED]
        assert set(s for s, v in flags.items() if v) == FERTILIZED_STAGES

    def test_first_cleavage_confirms_fertilization(self):
        assert stage_is_fertilized(StageLabel.FIRST_CLEAVAGE) is True

    def test_egg_is_ambiguous(self):
        assert stage_is_fertilized(StageLabel.EGG) is False

    def test_coral_rejected(self):
        with pytest.raises(TaxonomyError):
            stage_is_fertilized(StageLabel.CORAL)


class TestCountsFromLabels:
    def test_empty_frame(self):
        assert counts_from_labels([]) == StageCounts()

    def test_multiplicity(self):
        counts = counts_from_labels([StageLabel.EGG, StageLabel.EGG, StageLabel.TWO_CELL])
        assert counts == StageCounts(eggs=2, two_cell=1)

    def test_permutation_invariant_and_sums(self):
        rng = random.Random(7)
        for _ in range(100):
            labels = [rng.choice(SURFACE_STAGES) for _ in range(rng.randrange(0, 40))]
            shuffled = labels[:]
            rng.shuffle(shuffled)
            counts = counts_from_labels(labels)
            assert counts == counts_from_labels(shuffled)
            assert counts.total == len(labels)

    def test_mixed_taxonomy_rejected(self):
        with pytest.raises(TaxonomyError):
            counts_from_labels([StageLabel.EGG, StageLabel.CORAL])


class TestBoundingBox:
    def test_area_and_center(self):
        box = BoundingBox(0.2, 0.4, 0.6, 0.8)
        assert box.area == pytest.approx(0.16)
        assert box.center() == (pytest.approx(0.4), pytest.approx(0.6))

    def test_from_center_round_trip(self):
        box = BoundingBox.from_center(0.5, 0.5, 0.2, 0.1)
        assert box.as_tuple() == pytest.approx((0.4, 0.45, 0.6, 0.55))

    @pytest.mark.parametrize(
        "coords",
        [(0.5, 0.0, 0.4, 1.0), (0.0, 0.5, 1.0, 0.4), (-0.1, 0.0, 0.5, 0.5), (0.0, 0.0, 1.1, 1.0)],
    )
    def test_invalid_extents_rejected(self, coords):
        with pytest.raises(ValueError):
            BoundingBox(*coords)

    def test_zero_area_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(0.3, 0.3, 0.3, 0.6)


class TestDetection:
    def test_confidence_bounds(self):
        box = BoundingBox(0.1, 0.1, 0.2, 0.2)
        Detection(box=box, label=StageLabel.EGG, confidence=1.0)
        with pytest.raises(ValueError):
            Detection(box=box, label=StageLabel.EGG, confidence=1.5)


class TestStageCounts:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            StageCounts(eggs=-1)

    def test_totals(self):
        counts = StageCounts(eggs=3, first_cleavage=1, two_cell=1, damaged=7)
        assert counts.fertilized_total == 2
        assert counts.viable_total == 5
        assert counts.total == 12

    def test_dict_round_trip(self):
        counts = StageCounts(1, 2, 3, 4, 5, 6)
        assert StageCounts.from_dict(counts.as_dict()) == counts

    def test_addition(self):
        assert StageCounts(eggs=1) + StageCounts(eggs=2, advanced=1) == StageCounts(
            eggs=3, advanced=1
        )


class TestPhaseTimeline:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            PhaseTimeline(t0=0.0, t1=0.0, t2=10.0)

    def test_mode_at(self):
        tl = PhaseTimeline(t0=0.0, t1=100.0, t2=200.0)
        assert tl.mode_at(99.9) == OperationalMode.SURFACE
        assert tl.mode_at(100.0) == OperationalMode.SUBSURFACE
