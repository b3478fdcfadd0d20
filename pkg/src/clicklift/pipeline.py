"""End-to-end batch pipeline shared by the CLI and the HTTP service.

Stages: simulate (or receive) clicks on anchor frames, carry them across the
following frames with optical flow, densify every frame's clicks into
per-class masks, merge and confidence-gate the masks into dense label images,
lift those onto the point clouds, and evaluate against ground truth when it
is available. One seed drives all randomness; no stage touches ambient
entropy, so a fixed config yields byte-identical outputs.
"""

from __future__ import annotations

import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .annotation import (
    MANUAL,
    AnnotationProject,
    ClassMask,
    ScatterAnnotation,
    add_annotation,
    merge_masks,
    simulate_manual_annotation,
)
from .consistency import ProbabilityMap, gate_propagated_labels
from .errors import ConfigError, StageError
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    annotation_statistics,
    confusion_matrix,
    iou_per_class,
    miou,
)
from .geometry import IGNORE_LABEL, PointPixelMap, lift_labels, project_cloud
from .propagation import (
    ExternalFlowProvider,
    ExternalMaskProvider,
    FlowField,
    MaskProvider,
    RegionGrowMasker,
    builtin_egomotion_flow,
    builtin_identity_flow,
    densify,
    propagate_annotations,
)
from .storage import (
    DatasetManifest,
    FrameRecord,
    load_image,
    load_label_image,
    load_manifest,
    load_point_cloud,
    load_point_labels,
    save_label_image,
    save_point_labels,
    save_project,
)


@dataclass
class PipelineConfig:
    """Everything a run needs; a fixed config fully determines the outputs."""

    manifest: Path
    out_dir: Path
    seed: int = 0
    depth: int = 4
    tau: float = 0.7
    flow_provider: str = "egomotion"
    mask_provider: str = "region_grow"
    region_grow_tolerance: float = 12.0
    workers: int = 1
    write_csv: bool = False

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.out_dir = Path(self.out_dir)
        if self.depth < 0:
            raise ConfigError("depth must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


class DatasetCache:
    """Lazy per-frame loader so stages share parsed images/clouds/calibs."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._images: dict[str, np.ndarray] = {}
        self._clouds: dict[str, object] = {}
        self._calibs: dict[Path, object] = {}

    def record(self, frame_id: str) -> FrameRecord:
        return self.manifest.frame(frame_id)

    def image(self, frame_id: str) -> np.ndarray:
        if frame_id not in self._images:
            self._images[frame_id] = load_image(self.record(frame_id).image_path)
        return self._images[frame_id]

    def cloud(self, frame_id: str):
        if frame_id not in self._clouds:
            self._clouds[frame_id] = load_point_cloud(self.record(frame_id).cloud_path)
        return self._clouds[frame_id]

    def calibration(self, frame_id: str):
        path = self.record(frame_id).calibration_path
        if path not in self._calibs:
            from .storage import load_calibration

            self._calibs[path] = load_calibration(path)
        return self._calibs[path]

    def gt_image(self, frame_id: str) -> Optional[np.ndarray]:
        rec = self.record(frame_id)
        if rec.gt_image_labels_path is None:
            return None
        return load_label_image(rec.gt_image_labels_path)

    def gt_points(self, frame_id: str) -> Optional[np.ndarray]:
        rec = self.record(frame_id)
        if rec.gt_point_labels_path is None:
            return None
        return load_point_labels(
            rec.gt_point_labels_path,
            remap=self.manifest.taxonomy.raw_remap,
            expected_count=len(self.cloud(frame_id)),
        )


def build_mask_provider(config: PipelineConfig) -> MaskProvider:
    key = config.mask_provider
    if key == "region_grow":
        return RegionGrowMasker(config.region_grow_tolerance)
    if key.startswith("external:"):
        return ExternalMaskProvider(key.split(":", 1)[1])
    raise ConfigError(f"unknown mask provider {key!r}")


def anchor_indices(num_frames: int, depth: int) -> list[int]:
    """Frames that receive manual clicks: every (depth + 1)-th frame."""
    return list(range(0, num_frames, depth + 1))


def compute_flow_chain(
    cache: DatasetCache, frame_ids: Sequence[str], provider_key: str
) -> list[FlowField]:
    """Flow fields for each consecutive pair of ``frame_ids``."""
    fields: list[FlowField] = []
    for a, b in zip(frame_ids, frame_ids[1:]):
        if provider_key == "identity":
            provider = builtin_identity_flow()
        elif provider_key == "egomotion":
            rec_a, rec_b = cache.record(a), cache.record(b)
            if rec_a.pose is None or rec_b.pose is None:
                raise ConfigError(f"egomotion flow needs poses on frames {a!r} and {b!r}")
            delta = np.linalg.inv(rec_b.pose) @ rec_a.pose
            provider = builtin_egomotion_flow(cache.calibration(a), cache.cloud(a), delta)
        elif provider_key.startswith("external:"):
            provider = ExternalFlowProvider(provider_key.split(":", 1)[1])
        else:
            raise ConfigError(f"unknown flow provider {provider_key!r}")
        estimated = provider.estimate(cache.image(a), cache.image(b))
        estimated.source_frame_id = a
        estimated.target_frame_id = b
        fields.append(estimated)
    return fields


def build_project(manifest: DatasetManifest) -> AnnotationProject:
    project = AnnotationProject(taxonomy=manifest.taxonomy)
    for record in manifest.frames:
        project.register_frame(record)
    return project


def simulate_clicks(
    project: AnnotationProject, cache: DatasetCache, depth: int, seed: int
) -> None:
    """Stand in for a human: click the anchor frames from their ground truth."""
    ids = cache.manifest.frame_ids
    for idx in anchor_indices(len(ids), depth):
        frame_id = ids[idx]
        gt = cache.gt_image(frame_id)
        if gt is None:
            raise ConfigError(f"frame {frame_id!r} has no ground-truth labels to simulate from")
        for ann in simulate_manual_annotation(gt, frame_id=frame_id, seed=seed + idx):
            add_annotation(project, ann)
    project.record_event("simulated_annotation", seed=seed, depth=depth)


def clear_propagated(project: AnnotationProject) -> None:
    """Drop all propagated clicks (manual ones stay), logging the reset."""
    for fid in list(project.annotations):
        kept = [a for a in project.annotations[fid] if a.origin == MANUAL]
        if kept:
            project.annotations[fid] = kept
        else:
            del project.annotations[fid]
    project.record_event("propagation_reset")


def propagate_clicks(
    project: AnnotationProject,
    cache: DatasetCache,
    depth: int,
    flow_provider: str,
) -> None:
    """Carry every manually clicked frame's clicks across the frames after it.

    Reruns are idempotent: previously propagated clicks are cleared first so
    the project always reflects exactly one propagation pass.
    """
    clear_propagated(project)
    ids = cache.manifest.frame_ids
    anchors = [fid for fid in ids if any(a.origin == MANUAL for a in project.annotations.get(fid, ()))]
    if depth > 0:
        for idx, anchor in enumerate(ids):
            if anchor not in anchors:
                continue
            manual = [a for a in project.annotations_for(anchor) if a.origin == MANUAL]
            unit = ids[idx : idx + depth + 1]
            if len(unit) < 2:
                continue
            chain = compute_flow_chain(cache, unit, flow_provider)
            per_frame = propagate_annotations(manual, chain, depth=len(chain))
            for moved in per_frame:
                for ann in moved:
                    add_annotation(project, ann)
    project.record_event(
        "propagation_run", depth=depth, flow_provider=flow_provider, anchors=anchors
    )


def densify_frames(
    project: AnnotationProject,
    cache: DatasetCache,
    provider: MaskProvider,
    workers: int = 1,
    frame_ids: Optional[Sequence[str]] = None,
) -> dict[str, list[ClassMask]]:
    """Per-frame masks for every frame holding clicks; parallel and ordered."""
    ids = [
        fid
        for fid in (frame_ids if frame_ids is not None else cache.manifest.frame_ids)
        if project.annotations.get(fid)
    ]

    def _one(fid: str) -> list[ClassMask]:
        return densify(cache.image(fid), project.annotations_for(fid), project.taxonomy, provider)

    if workers > 1 and provider.thread_safe and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, ids))
    else:
        results = [_one(fid) for fid in ids]
    return dict(zip(ids, results))


def masks_to_probabilities(
    masks: Sequence[ClassMask], dims: tuple[int, int], num_classes: int
) -> ProbabilityMap:
    """Per-pixel class distribution implied by a set of confidence-weighted masks.

    Covered pixels split mass across the masks claiming them; uncovered
    pixels fall back to uniform, which gates them out downstream.
    """
    weights = np.zeros((num_classes,) + tuple(dims), dtype=np.float64)
    for m in masks:
        weights[m.class_id][m.mask] += m.confidence
    cover = weights.sum(axis=0)
    covered = cover > 0
    probs = np.full_like(weights, 1.0 / num_classes)
    if np.any(covered):
        probs[:, covered] = weights[:, covered] / cover[covered]
    return ProbabilityMap(values=probs, layout="pixel")


@dataclass(eq=False)
class FrameResult:
    frame_id: str
    label_image: np.ndarray
    label_cloud: np.ndarray
    pixel_map: PointPixelMap


def finalize_frames(
    project: AnnotationProject,
    cache: DatasetCache,
    masks_by_frame: dict[str, list[ClassMask]],
    tau: float,
) -> dict[str, FrameResult]:
    """Merge masks into gated label images and lift them onto the clouds.

    Callers pass only the masks that survived review; frames without any
    surviving mask come out fully IGNORE.
    """
    num_classes = project.taxonomy.count
    out: dict[str, FrameResult] = {}
    for record in cache.manifest.frames:
        fid = record.frame_id
        kept = list(masks_by_frame.get(fid, []))
        dims = (record.image_height, record.image_width)
        merged = merge_masks(kept, dims)
        probs = masks_to_probabilities(kept, dims, num_classes)
        gated = gate_propagated_labels(merged, probs, tau)
        pmap = project_cloud(cache.calibration(fid), cache.cloud(fid))
        out[fid] = FrameResult(
            frame_id=fid,
            label_image=gated,
            label_cloud=lift_labels(pmap, gated),
            pixel_map=pmap,
        )
    return out


def evaluate_run(
    project: AnnotationProject, cache: DatasetCache, results: dict[str, FrameResult]
) -> EvaluationReport:
    """Score the run against whatever ground truth the manifest carries.

    3D IoU is restricted to points with a valid projection: points outside
    the camera frustum never received a label and are not scored.
    """
    s = project.taxonomy.count
    cm2 = ConfusionMatrix.zeros(s)
    cm3 = ConfusionMatrix.zeros(s)
    have_2d = have_3d = False
    for fid, result in results.items():
        gt2 = cache.gt_image(fid)
        if gt2 is not None:
            cm2 = cm2.merge(confusion_matrix(result.label_image, gt2, s))
            have_2d = True
        gt3 = cache.gt_points(fid)
        if gt3 is not None:
            valid = result.pixel_map.valid
            cm3 = cm3.merge(confusion_matrix(result.label_cloud[valid], gt3[valid], s))
            have_3d = True
    report = annotation_statistics(
        project,
        {fid: r.label_cloud for fid, r in results.items()},
        pixel_maps={fid: r.pixel_map for fid, r in results.items()},
        label_images={fid: r.label_image for fid, r in results.items()},
    )
    if have_2d:
        report.per_class_iou_2d = iou_per_class(cm2)
        report.miou_2d = miou(report.per_class_iou_2d)
    if have_3d:
        report.per_class_iou_3d = iou_per_class(cm3)
        report.miou_3d = miou(report.per_class_iou_3d)
    return report


def write_outputs(
    out_dir: Path,
    results: dict[str, FrameResult],
    report: EvaluationReport,
    project: Optional[AnnotationProject] = None,
    write_csv: bool = False,
) -> None:
    dense_2d = out_dir / "dense_2d"
    dense_3d = out_dir / "dense_3d"
    dense_2d.mkdir(parents=True, exist_ok=True)
    dense_3d.mkdir(parents=True, exist_ok=True)
    for fid in sorted(results):
        save_label_image(dense_2d / f"{fid}.png", results[fid].label_image)
        save_point_labels(dense_3d / f"{fid}.label", results[fid].label_cloud)
    (out_dir / "report.json").write_text(report.to_json())
    if write_csv:
        (out_dir / "report.csv").write_text(report.render_csv())
    if project is not None:
        save_project(out_dir / "project.json", project)


@dataclass(eq=False)
class RunResult:
    report: EvaluationReport
    project: AnnotationProject
    results: dict[str, FrameResult]
    out_dir: Path


def _promote_partial(partial: Path, out_dir: Path) -> None:
    """Move finished artifacts out of partial/; clobbers earlier runs."""
    for child in sorted(partial.iterdir()):
        dest = out_dir / child.name
        if dest.is_dir():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        shutil.move(str(child), str(dest))
    partial.rmdir()


def run_pipeline(config: PipelineConfig) -> RunResult:
    """The whole batch flow; artifacts land in ``config.out_dir``.

    Outputs stream into ``out_dir/partial`` and are promoted only when every
    stage has succeeded, so a crashed run never masquerades as a complete one.
    Raises StageError with the failing stage's name.
    """

    def stage(name: str, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    manifest = stage("manifest", load_manifest, config.manifest)
    cache = DatasetCache(manifest)
    provider = stage("config", build_mask_provider, config)
    project = stage("project", build_project, manifest)
    stage("simulate", simulate_clicks, project, cache, config.depth, config.seed)
    stage("propagate", propagate_clicks, project, cache, config.depth, config.flow_provider)
    masks = stage("densify", densify_frames, project, cache, provider, config.workers)
    results = stage("finalize", finalize_frames, project, cache, masks, config.tau)
    report = stage("evaluate", evaluate_run, project, cache, results)

    partial = config.out_dir / "partial"
    if partial.exists():
        shutil.rmtree(partial)
    partial.mkdir(parents=True)
    stage("write", write_outputs, partial, results, report, project, config.write_csv)
    stage("write", _promote_partial, partial, config.out_dir)
    return RunResult(report=report, project=project, results=results, out_dir=config.out_dir)
