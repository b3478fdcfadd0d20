"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Tolerances and runtime budgets are pinned here, not configurable.
"""

from __future__ import annotations

import io
import math
import time
import zipfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from clicklift.consistency import ProbabilityMap, entropy_map, kl_divergence, perceptual_weights
from clicklift.evaluation import aepe, confusion_matrix, iou_per_class, miou
from clicklift.geometry import IGNORE_LABEL, project_cloud
from clicklift.pipeline import PipelineConfig, run_pipeline
from clicklift.propagation import PropagationConfig, select_propagation_depth
from clicklift.service.app import create_app
from clicklift.storage import load_label_image, load_manifest, load_project
from clicklift.synthetic import generate_synthetic_sequence

from test_geometry import oracle_matrix, oracle_pixel, random_calibration, random_points_for
from test_evaluation import brute_force_tally
from test_service import post_simulated_clicks, propagate_and_accept_all


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def e2e_run(tmp_path_factory):
    """Full-size synthetic sequence plus one timed pipeline run over it."""
    root = tmp_path_factory.mktemp("acceptance")
    manifest = generate_synthetic_sequence(root / "data", num_frames=5, width=320, height=240)
    config = PipelineConfig(
        manifest=manifest, out_dir=root / "out", seed=7, depth=4, tau=0.7,
        flow_provider="egomotion", mask_provider="region_grow",
    )
    start = time.perf_counter()
    result = run_pipeline(config)
    elapsed = time.perf_counter() - start
    return {
        "root": root,
        "manifest": manifest,
        "config": config,
        "result": result,
        "elapsed": elapsed,
    }


def test_projection_oracle():
    """10k frustum points x 20 random calibrations: exact pixel agreement."""
    with criterion("projection-oracle"):
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        for _ in range(20):
            calib = random_calibration(rng)
            cloud = random_points_for(calib, rng, 10_000)
            pixel_map = project_cloud(calib, cloud)
            m = oracle_matrix(calib.intrinsic.tolist(), calib.extrinsic.tolist())
            proj = calib.projection_matrix
            width, height = calib.image_width, calib.image_height
            expected_valid = 0
            xs = cloud.xyz[:, 0].tolist()
            ys = cloud.xyz[:, 1].tolist()
            zs = cloud.xyz[:, 2].tolist()
            for i in range(len(cloud)):
                pix = oracle_pixel(m, xs[i], ys[i], zs[i], width, height)
                if pix is None:
                    assert not pixel_map.valid[i]
                else:
                    expected_valid += 1
                    assert pixel_map.valid[i]
                    assert (pixel_map.u[i], pixel_map.v[i]) == pix
            assert pixel_map.valid_count == expected_valid
            # round trip: z_cam * (u, v, 1) must reproduce M @ (x, y, z, 1)
            valid = pixel_map.valid
            hom = np.concatenate([cloud.xyz, np.ones((len(cloud), 1))], axis=1)
            rhs = (proj @ hom.T).T[valid]
            w = pixel_map.z_cam[valid]
            u_real = rhs[:, 0] / w
            v_real = rhs[:, 1] / w
            lhs = np.stack([u_real * w, v_real * w, w], axis=1)
            residual = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-12)
            assert residual.max() < 1e-6
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"projection oracle took {elapsed:.2f}s (budget 5s)"


def test_consistency_math_suite():
    """1e4 random distributions per S in {2,4,8,19,32}: entropy/KL/gate laws."""
    with criterion("consistency-math"):
        rng = np.random.default_rng(77)
        start = time.perf_counter()
        for s in (2, 4, 8, 19, 32):
            raw = rng.random((10_000, s)) ** 3
            probs = ProbabilityMap(raw / raw.sum(axis=1, keepdims=True), layout="point")
            e = entropy_map(probs)
            assert np.all(e >= 0.0) and np.all(e <= 1.0 + 1e-12)
            uniform = ProbabilityMap(np.full((1, s), 1.0 / s), layout="point")
            assert abs(entropy_map(uniform)[0] - 1.0) <= 1e-9
            one_hot = np.zeros((s, s))
            np.fill_diagonal(one_hot, 1.0)
            assert np.all(entropy_map(ProbabilityMap(one_hot, layout="point")) == 0.0)
            q_raw = rng.random((10_000, s)) ** 3
            q = ProbabilityMap(q_raw / q_raw.sum(axis=1, keepdims=True), layout="point")
            kl = kl_divergence(probs, q)
            assert np.all(kl >= -1e-9)
            assert np.all(np.abs(kl_divergence(probs, probs)) <= 1e-12)
            # gate weights: exact piecewise identity
            c_src = rng.random(10_000)
            c_tgt = rng.random(10_000)
            tau = 0.7
            omega = perceptual_weights(c_src, c_tgt, tau).values
            assert np.all(omega[c_src <= tau] == 0.0)
            trusted = c_src > tau
            assert np.array_equal(
                omega[trusted], np.maximum(c_src[trusted] - c_tgt[trusted], 0.0)
            )
            assert np.all(omega <= 1.0)
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"consistency suite took {elapsed:.2f}s (budget 10s)"


def test_evaluation_oracle():
    """100 random 64x64 label pairs: exact tally agreement; AEPE oracle."""
    with criterion("evaluation-oracle"):
        rng = np.random.default_rng(11)
        for _ in range(100):
            s = int(rng.integers(2, 8))
            pred = rng.integers(-1, s, size=(64, 64))
            gt = rng.integers(-1, s, size=(64, 64))
            cm = confusion_matrix(pred, gt, s)
            matrix, unlabeled, ignored = brute_force_tally(pred, gt, s)
            assert np.array_equal(cm.matrix, matrix)
            assert np.array_equal(cm.unlabeled, unlabeled)
            assert cm.ignored == ignored
            ious = iou_per_class(cm)
            tp = np.diag(matrix).astype(float)
            union = matrix.sum(axis=1) + unlabeled + matrix.sum(axis=0) - tp
            for c in range(s):
                if union[c] == 0:
                    assert math.isnan(ious[c])
                else:
                    assert ious[c] == tp[c] / union[c]
            finite = ious[np.isfinite(ious)]
            if finite.size:
                assert miou(ious) == finite.mean()
        est = rng.normal(size=(64, 64, 2))
        gt_flow = rng.normal(size=(64, 64, 2))
        per_pixel = np.sqrt(
            (est[..., 0] - gt_flow[..., 0]) ** 2 + (est[..., 1] - gt_flow[..., 1]) ** 2
        )
        assert abs(aepe(est, gt_flow) - per_pixel.mean()) <= 1e-9
        shifted = gt_flow.copy()
        shifted[..., 0] += 3.0
        shifted[..., 1] += 4.0
        assert aepe(shifted, gt_flow) == 5.0


def test_depth_selection_rule():
    """The reference flow-error series selects a propagation depth of 4."""
    with criterion("depth-selection"):
        series = {1: 0.05, 2: 0.08, 3: 0.12, 4: 0.15, 5: 0.24}
        chosen = select_propagation_depth(series, PropagationConfig(depth=0))
        assert chosen == 4


def test_synthetic_end_to_end(e2e_run):
    """5-frame flat-color scene: clicks->flow->masks->lift->gate, mIoU >= 0.95."""
    with criterion("synthetic-end-to-end"):
        report = e2e_run["result"].report
        assert report.miou_2d is not None and report.miou_2d >= 0.95
        assert report.miou_3d is not None and report.miou_3d >= 0.95
        assert e2e_run["elapsed"] < 60.0, f"pipeline took {e2e_run['elapsed']:.1f}s (budget 60s)"


def test_determinism(e2e_run):
    """Re-running with the same seed/config reproduces every output byte."""
    with criterion("determinism"):
        second_out = e2e_run["root"] / "out_again"
        config = PipelineConfig(
            manifest=e2e_run["manifest"], out_dir=second_out, seed=7, depth=4, tau=0.7,
            flow_provider="egomotion", mask_provider="region_grow",
        )
        run_pipeline(config)
        first = tree_bytes(e2e_run["config"].out_dir)
        second = tree_bytes(second_out)
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], f"{name} differs between identical runs"


def test_annotation_budget(e2e_run):
    """<= 5 simulated clicks per (frame, class); all on true pixels of their class."""
    with criterion("annotation-budget"):
        project = load_project(e2e_run["config"].out_dir / "project.json")
        manifest = load_manifest(e2e_run["manifest"])
        per_pair: dict[tuple[str, int], int] = {}
        checked = 0
        for frame_id, anns in project.annotations.items():
            gt = None
            for a in anns:
                if a.origin != "manual":
                    continue
                if gt is None:
                    gt = load_label_image(manifest.frame(frame_id).gt_image_labels_path)
                key = (frame_id, a.class_id)
                per_pair[key] = per_pair.get(key, 0) + 1
                assert gt[a.v, a.u] == a.class_id
                checked += 1
        assert checked > 0
        assert all(count <= 5 for count in per_pair.values())


def test_ui_parity_service_export(e2e_run):
    """[SECONDARY] Accept-all service export is byte-identical to the CLI run.

    The other half of the criterion (a browser click at 2x zoom posting the
    exact pixel) lives in the frontend suite: frontend/test/viewport.test.ts.
    """
    with criterion("ui-parity-service-export"):
        manifest = e2e_run["manifest"]
        app = create_app()
        with TestClient(app) as client:
            client.app = app
            response = client.post(
                "/sessions", json={"manifest_path": str(manifest), "seed": 7, "depth": 4}
            )
            assert response.status_code == 200
            session_id = response.json()["session_id"]
            post_simulated_clicks(client, session_id, manifest, seed=7)
            propagate_and_accept_all(client, session_id)
            export = client.get(f"/sessions/{session_id}/export")
            assert export.status_code == 200
        archive = zipfile.ZipFile(io.BytesIO(export.content))
        cli_files = {
            name: data
            for name, data in tree_bytes(e2e_run["config"].out_dir).items()
            if name != "project.json"
        }
        assert set(archive.namelist()) == set(cli_files)
        for name in sorted(cli_files):
            assert archive.read(name) == cli_files[name], f"{name} differs from CLI"
