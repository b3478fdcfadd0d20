"""Annotation tests: click simulation, soft limits, mask merging."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clicklift.annotation import (
    MANUAL,
    PROPAGATED,
    AnnotationProject,
    ClassMask,
    ClassTaxonomy,
    ScatterAnnotation,
    add_annotation,
    click_budget,
    merge_masks,
    simulate_manual_annotation,
)
from clicklift.errors import AnnotationError
from clicklift.geometry import IGNORE_LABEL
from clicklift.storage import FrameRecord


def make_project(width=64, height=48, classes=("road", "car", "person")) -> AnnotationProject:
    project = AnnotationProject(taxonomy=ClassTaxonomy(names=tuple(classes)))
    project.register_frame(
        FrameRecord(
            frame_id="f0",
            image_path="f0.png",
            cloud_path="f0.bin",
            calibration_path="calib.json",
            image_width=width,
            image_height=height,
        )
    )
    return project


class TestAddAnnotation:
    def test_single_click(self):
        project = make_project()
        warning = add_annotation(
            project, ScatterAnnotation(frame_id="f0", u=10, v=5, class_id=1)
        )
        assert warning is None
        assert len(project.annotations_for("f0")) == 1
        assert project.provenance[-1]["event"] == "annotation_added"

    def test_sixth_click_warns_but_is_kept(self):
        project = make_project()
        for i in range(5):
            assert add_annotation(
                project, ScatterAnnotation(frame_id="f0", u=i, v=0, class_id=0)
            ) is None
        warning = add_annotation(
            project, ScatterAnnotation(frame_id="f0", u=5, v=0, class_id=0)
        )
        assert warning is not None and "6" in warning
        assert len(project.annotations_for("f0")) == 6

    def test_out_of_bounds_click(self):
        project = make_project(width=64)
        with pytest.raises(AnnotationError):
            add_annotation(project, ScatterAnnotation(frame_id="f0", u=64, v=0, class_id=0))

    def test_unknown_frame_and_class(self):
        project = make_project()
        with pytest.raises(AnnotationError):
            add_annotation(project, ScatterAnnotation(frame_id="nope", u=0, v=0, class_id=0))
        with pytest.raises(AnnotationError):
            add_annotation(project, ScatterAnnotation(frame_id="f0", u=0, v=0, class_id=9))

    def test_manual_origin_must_match_frame(self):
        with pytest.raises(AnnotationError):
            ScatterAnnotation(frame_id="f0", u=0, v=0, class_id=0, source_frame_id="f9")

    def test_propagated_keeps_source(self):
        ann = ScatterAnnotation(
            frame_id="f1", u=0, v=0, class_id=0, origin=PROPAGATED, source_frame_id="f0"
        )
        assert ann.source_frame_id == "f0"


class TestTaxonomy:
    def test_requires_two_unique_names(self):
        with pytest.raises(AnnotationError):
            ClassTaxonomy(names=("only",))
        with pytest.raises(AnnotationError):
            ClassTaxonomy(names=("a", "a"))

    def test_roundtrip_with_remap(self):
        tax = ClassTaxonomy(names=("a", "b"), raw_remap={40: 1, 10: 0})
        restored = ClassTaxonomy.from_dict(tax.to_dict())
        assert restored == tax


class TestClickBudget:
    def test_anchors(self):
        # full-frame class gets the cap, a speck gets one click
        assert click_budget(1000, 1000) == 5
        assert click_budget(1, 1000) == 1

    def test_monotone_in_area(self):
        budgets = [click_budget(n, 100) for n in range(1, 101)]
        assert budgets == sorted(budgets)

    def test_never_exceeds_pixels(self):
        assert click_budget(3, 4) == 3


class TestSimulateManualAnnotation:
    def test_single_pixel_class_is_forced(self):
        gt = np.full((8, 8), IGNORE_LABEL, dtype=np.int32)
        gt[3, 4] = 2
        gt[0, :] = 0
        anns = simulate_manual_annotation(gt, frame_id="f0", seed=1)
        picked = [a for a in anns if a.class_id == 2]
        assert len(picked) == 1
        assert (picked[0].u, picked[0].v) == (4, 3)

    def test_clicks_lie_on_their_class(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 3, size=(32, 32)).astype(np.int32)
        anns = simulate_manual_annotation(gt, frame_id="f0", seed=7)
        by_class: dict[int, int] = {}
        for a in anns:
            assert gt[a.v, a.u] == a.class_id
            by_class[a.class_id] = by_class.get(a.class_id, 0) + 1
        for count in by_class.values():
            assert 1 <= count <= 5

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 4, size=(16, 16)).astype(np.int32)
        a = simulate_manual_annotation(gt, frame_id="f0", seed=42)
        b = simulate_manual_annotation(gt, frame_id="f0", seed=42)
        assert a == b

    def test_all_ignore_is_error(self):
        gt = np.full((4, 4), IGNORE_LABEL, dtype=np.int32)
        with pytest.raises(AnnotationError):
            simulate_manual_annotation(gt, frame_id="f0")


class TestMergeMasks:
    def test_single_full_frame_mask(self):
        full = ClassMask(class_id=0, mask=np.ones((4, 6), dtype=bool))
        assert np.all(merge_masks([full], (4, 6)) == 0)

    def test_no_masks_all_ignore(self):
        assert np.all(merge_masks([], (4, 6)) == IGNORE_LABEL)

    def test_smaller_area_wins_tied_confidence(self):
        big = np.zeros((10, 10), dtype=bool)
        big[:, :] = True  # area 100
        small = np.zeros((10, 10), dtype=bool)
        small[0, :10] = True  # area 10
        merged = merge_masks(
            [
                ClassMask(class_id=1, mask=big, confidence=0.9),
                ClassMask(class_id=2, mask=small, confidence=0.9),
            ],
            (10, 10),
        )
        assert np.all(merged[0, :10] == 2)
        assert np.all(merged[1:, :] == 1)

    def test_confidence_beats_area(self):
        big = np.ones((4, 4), dtype=bool)
        small = np.zeros((4, 4), dtype=bool)
        small[0, 0] = True
        merged = merge_masks(
            [
                ClassMask(class_id=1, mask=big, confidence=0.9),
                ClassMask(class_id=2, mask=small, confidence=0.5),
            ],
            (4, 4),
        )
        assert merged[0, 0] == 1

    def test_label_implies_covering_mask(self):
        rng = np.random.default_rng(3)
        masks = [
            ClassMask(class_id=c, mask=rng.random((12, 12)) < 0.4, confidence=rng.random())
            for c in range(4)
        ]
        merged = merge_masks(masks, (12, 12))
        for c in range(4):
            covered = masks[c].mask
            assert np.all(covered[merged == c])

    @given(st.permutations(range(5)), st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariant(self, order, seed):
        rng = np.random.default_rng(seed)
        masks = [
            ClassMask(
                class_id=int(rng.integers(0, 4)),
                mask=rng.random((8, 8)) < 0.5,
                confidence=float(rng.choice([0.25, 0.5, 1.0])),
            )
            for _ in range(5)
        ]
        base = merge_masks(masks, (8, 8))
        shuffled = merge_masks([masks[i] for i in order], (8, 8))
        assert np.array_equal(base, shuffled)
