"""Batch pipeline tests on the synthetic sequence."""

from __future__ import annotations

import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from clicklift.annotation import MANUAL, PROPAGATED, ClassMask
from clicklift.consistency import ProbabilityMap
from clicklift.errors import StageError
from clicklift.evaluation import confusion_matrix, iou_per_class, miou
from clicklift.geometry import IGNORE_LABEL
from clicklift.pipeline import (
    DatasetCache,
    PipelineConfig,
    anchor_indices,
    build_project,
    clear_propagated,
    compute_flow_chain,
    densify_frames,
    evaluate_run,
    finalize_frames,
    masks_to_probabilities,
    propagate_clicks,
    run_pipeline,
    simulate_clicks,
)
from clicklift.propagation import RegionGrowMasker
from clicklift.storage import load_label_image, load_manifest, load_point_labels


def run_small(manifest: Path, out_dir: Path, **overrides) -> "RunResult":
    kwargs = {"seed": 7, "depth": 2}
    kwargs.update(overrides)
    return run_pipeline(PipelineConfig(manifest=manifest, out_dir=out_dir, **kwargs))


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestAnchorIndices:
    def test_spacing(self):
        assert anchor_indices(5, 4) == [0]
        assert anchor_indices(12, 4) == [0, 5, 10]
        assert anchor_indices(3, 0) == [0, 1, 2]


class TestMasksToProbabilities:
    def test_single_mask_is_one_hot(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 2] = True
        probs = masks_to_probabilities([ClassMask(class_id=2, mask=mask)], (4, 4), 3)
        assert probs.values[2, 1, 2] == 1.0
        # uncovered pixels fall back to uniform
        assert np.allclose(probs.values[:, 0, 0], 1.0 / 3.0)

    def test_overlap_splits_mass(self):
        full = np.ones((2, 2), dtype=bool)
        probs = masks_to_probabilities(
            [ClassMask(class_id=0, mask=full), ClassMask(class_id=1, mask=full)], (2, 2), 2
        )
        assert np.allclose(probs.values, 0.5)

    def test_is_valid_distribution(self):
        rng = np.random.default_rng(0)
        masks = [
            ClassMask(class_id=c, mask=rng.random((6, 6)) < 0.5, confidence=rng.random())
            for c in range(4)
        ]
        probs = masks_to_probabilities(masks, (6, 6), 4)
        assert isinstance(probs, ProbabilityMap)  # constructor validates sums


class TestFullRun:
    def test_perfect_labels_on_synthetic(self, small_synthetic, tmp_path):
        result = run_small(small_synthetic, tmp_path / "out")
        assert result.report.miou_2d == 1.0
        assert result.report.miou_3d == 1.0
        assert not (tmp_path / "out" / "partial").exists()
        for name in ("dense_2d", "dense_3d", "report.json", "project.json"):
            assert (tmp_path / "out" / name).exists()

    def test_deterministic_byte_identical(self, small_synthetic, tmp_path):
        run_small(small_synthetic, tmp_path / "a")
        run_small(small_synthetic, tmp_path / "b")
        a = tree_bytes(tmp_path / "a")
        b = tree_bytes(tmp_path / "b")
        assert a.keys() == b.keys()
        for name in a:
            assert a[name] == b[name], f"{name} differs between identical runs"

    def test_different_seed_changes_project_not_quality(self, small_synthetic, tmp_path):
        first = run_small(small_synthetic, tmp_path / "a")
        second = run_small(small_synthetic, tmp_path / "b", )
        third_cfg = PipelineConfig(
            manifest=small_synthetic, out_dir=tmp_path / "c", seed=8, depth=2
        )
        third = run_pipeline(third_cfg)
        assert first.report.miou_2d == third.report.miou_2d == 1.0
        a_clicks = json.loads((tmp_path / "a" / "project.json").read_text())["annotations"]
        c_clicks = json.loads((tmp_path / "c" / "project.json").read_text())["annotations"]
        assert a_clicks != c_clicks

    def test_report_matches_recomputation_from_emitted_files(self, small_synthetic, tmp_path):
        result = run_small(small_synthetic, tmp_path / "out")
        manifest = load_manifest(small_synthetic)
        s = manifest.taxonomy.count
        cm = None
        for record in manifest.frames:
            pred = load_label_image(tmp_path / "out" / "dense_2d" / f"{record.frame_id}.png")
            gt = load_label_image(record.gt_image_labels_path)
            frame_cm = confusion_matrix(pred, gt, s)
            cm = frame_cm if cm is None else cm.merge(frame_cm)
        recomputed = miou(iou_per_class(cm))
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["miou_2d"] == pytest.approx(recomputed, abs=1e-12)

    def test_depth_zero_labels_every_frame_from_its_own_clicks(
        self, small_synthetic, tmp_path
    ):
        # depth 0 -> every frame is an anchor; no propagated clicks anywhere
        result = run_small(small_synthetic, tmp_path / "out", depth=0)
        assert result.report.propagated_counts.sum() == 0
        assert result.report.miou_2d == 1.0

    def test_identity_flow_still_runs(self, small_synthetic, tmp_path):
        result = run_small(small_synthetic, tmp_path / "out", flow_provider="identity")
        # clicks stop tracking the moving scene; labels stay plausible but
        # the run must succeed and stay deterministic
        assert result.report.miou_2d is not None

    def test_unknown_provider_fails_config_stage(self, small_synthetic, tmp_path):
        config = PipelineConfig(
            manifest=small_synthetic, out_dir=tmp_path / "out", mask_provider="nope"
        )
        with pytest.raises(StageError) as excinfo:
            run_pipeline(config)
        assert excinfo.value.stage == "config"

    def test_missing_manifest_fails_manifest_stage(self, tmp_path):
        config = PipelineConfig(manifest=tmp_path / "none.json", out_dir=tmp_path / "out")
        with pytest.raises(StageError) as excinfo:
            run_pipeline(config)
        assert excinfo.value.stage == "manifest"


class TestStages:
    def test_simulated_clicks_respect_budget_and_classes(self, small_synthetic):
        manifest = load_manifest(small_synthetic)
        cache = DatasetCache(manifest)
        project = build_project(manifest)
        simulate_clicks(project, cache, depth=2, seed=3)
        anchor = manifest.frame_ids[0]
        anns = project.annotations_for(anchor)
        assert anns and all(a.origin == MANUAL for a in anns)
        gt = cache.gt_image(anchor)
        per_class: dict[int, int] = {}
        for a in anns:
            assert gt[a.v, a.u] == a.class_id
            per_class[a.class_id] = per_class.get(a.class_id, 0) + 1
        assert all(1 <= n <= 5 for n in per_class.values())

    def test_propagation_rerun_is_idempotent(self, small_synthetic):
        manifest = load_manifest(small_synthetic)
        cache = DatasetCache(manifest)
        project = build_project(manifest)
        simulate_clicks(project, cache, depth=2, seed=3)
        propagate_clicks(project, cache, depth=2, flow_provider="egomotion")
        first = {fid: [a.to_dict() for a in anns] for fid, anns in project.annotations.items()}
        propagate_clicks(project, cache, depth=2, flow_provider="egomotion")
        second = {fid: [a.to_dict() for a in anns] for fid, anns in project.annotations.items()}
        assert first == second

    def test_clear_propagated_keeps_manual(self, small_synthetic):
        manifest = load_manifest(small_synthetic)
        cache = DatasetCache(manifest)
        project = build_project(manifest)
        simulate_clicks(project, cache, depth=2, seed=3)
        manual_before = {
            fid: [a for a in anns if a.origin == MANUAL]
            for fid, anns in project.annotations.items()
        }
        propagate_clicks(project, cache, depth=2, flow_provider="egomotion")
        clear_propagated(project)
        assert all(
            all(a.origin == MANUAL for a in anns) for anns in project.annotations.values()
        )
        assert {
            fid: anns for fid, anns in project.annotations.items()
        } == manual_before

    def test_egomotion_chain_matches_uniform_shift(self, small_synthetic):
        manifest = load_manifest(small_synthetic)
        cache = DatasetCache(manifest)
        chain = compute_flow_chain(cache, manifest.frame_ids, "egomotion")
        assert len(chain) == 2
        for field in chain:
            covered = field.flow[..., 0] != 0
            assert covered.all()  # synthetic guarantees a return per pixel
            assert np.allclose(field.flow[..., 0], -2.0, atol=1e-4)
            assert np.allclose(field.flow[..., 1], 0.0, atol=1e-4)

    def test_workers_do_not_change_results(self, small_synthetic):
        manifest = load_manifest(small_synthetic)
        cache = DatasetCache(manifest)
        project = build_project(manifest)
        simulate_clicks(project, cache, depth=2, seed=3)
        propagate_clicks(project, cache, depth=2, flow_provider="egomotion")
        provider = RegionGrowMasker(12.0)
        serial = densify_frames(project, cache, provider, workers=1)
        parallel = densify_frames(project, cache, provider, workers=4)
        assert serial.keys() == parallel.keys()
        for fid in serial:
            assert len(serial[fid]) == len(parallel[fid])
            for a, b in zip(serial[fid], parallel[fid]):
                assert a.class_id == b.class_id
                assert np.array_equal(a.mask, b.mask)

    def test_rejected_masks_leave_frames_unlabeled(self, small_synthetic):
        manifest = load_manifest(small_synthetic)
        cache = DatasetCache(manifest)
        project = build_project(manifest)
        simulate_clicks(project, cache, depth=2, seed=3)
        propagate_clicks(project, cache, depth=2, flow_provider="egomotion")
        masks = densify_frames(project, cache, RegionGrowMasker(12.0))
        anchor = manifest.frame_ids[0]
        only_anchor = {anchor: masks[anchor]}
        results = finalize_frames(project, cache, only_anchor, tau=0.7)
        for fid, res in results.items():
            if fid == anchor:
                assert (res.label_image != IGNORE_LABEL).any()
            else:
                assert (res.label_image == IGNORE_LABEL).all()
                assert (res.label_cloud == IGNORE_LABEL).all()
