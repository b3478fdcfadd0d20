"""Command-line front door: batch pipeline runs, evaluation, depth selection.

Exit codes: 0 on success, 2 for configuration/input problems, 1 for a stage
failure inside a run (the message is tagged with the failing stage).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import ClickliftError, ConfigError, ManifestError, StageError, StorageError
from .evaluation import (
    ConfusionMatrix,
    aepe,
    confusion_matrix,
    iou_per_class,
    miou,
)
from .geometry import IGNORE_LABEL
from .pipeline import PipelineConfig, compute_flow_chain, DatasetCache, run_pipeline
from .propagation import PropagationConfig, compose_flow, load_flow_field, select_propagation_depth
from .storage import load_label_image, load_manifest, load_point_labels
from .synthetic import generate_synthetic_sequence

EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2


@click.group()
def main():
    """Sparse-click annotation engine: propagate, densify, lift, evaluate."""


@main.command("run")
@click.option("--manifest", required=True, type=click.Path(path_type=Path), help="Dataset manifest JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path), help="Output directory.")
@click.option("--seed", default=0, show_default=True, type=int, help="Seed driving all randomness.")
@click.option("--depth", default=4, show_default=True, type=int, help="Propagation depth in frames.")
@click.option("--tau", default=0.7, show_default=True, type=float, help="Confidence gate threshold.")
@click.option("--flow-provider", default="egomotion", show_default=True, help="identity | egomotion | external:<command>.")
@click.option("--mask-provider", default="region_grow", show_default=True, help="region_grow | external:<command>.")
@click.option("--region-grow-tolerance", default=12.0, show_default=True, type=float, help="Color tolerance for the built-in masker.")
@click.option("--workers", default=1, show_default=True, type=int, help="Densification worker pool size.")
@click.option("--csv", "write_csv", is_flag=True, help="Also write per-class tables as CSV.")
def cmd_run(manifest, out_dir, seed, depth, tau, flow_provider, mask_provider, region_grow_tolerance, workers, write_csv):
    """Run the full pipeline on a manifest and write dense labels + report."""
    try:
        config = PipelineConfig(
            manifest=manifest,
            out_dir=out_dir,
            seed=seed,
            depth=depth,
            tau=tau,
            flow_provider=flow_provider,
            mask_provider=mask_provider,
            region_grow_tolerance=region_grow_tolerance,
            workers=workers,
            write_csv=write_csv,
        )
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        result = run_pipeline(config)
    except StageError as exc:
        if isinstance(exc.cause, (ConfigError, ManifestError, StorageError, FileNotFoundError)):
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG_ERROR)
        click.echo(str(exc), err=True)
        sys.exit(EXIT_STAGE_FAILURE)
    click.echo(result.report.render_text())


def _collect_pairs(pred_dir: Path, gt_dir: Path, suffix: str) -> list[tuple[Path, Path]]:
    pairs = []
    for pred in sorted(pred_dir.glob(f"*{suffix}")):
        gt = gt_dir / pred.name
        if gt.exists():
            pairs.append((pred, gt))
    return pairs


@main.command("evaluate")
@click.argument("pred_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument("gt_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--classes", "num_classes", type=int, default=None, help="Class count; inferred from the labels when omitted.")
@click.option("--csv", "write_csv", is_flag=True, help="Emit a per-class CSV table instead of JSON.")
def cmd_evaluate(pred_dir, gt_dir, num_classes, write_csv):
    """Compare dense labels in PRED_DIR against GT_DIR (matched by filename)."""
    png_pairs = _collect_pairs(pred_dir, gt_dir, ".png")
    label_pairs = _collect_pairs(pred_dir, gt_dir, ".label")
    if not png_pairs and not label_pairs:
        click.echo("config error: no matching .png or .label files between the two directories", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    loaded: list[tuple[np.ndarray, np.ndarray]] = []
    for pred_path, gt_path in png_pairs:
        loaded.append((load_label_image(pred_path), load_label_image(gt_path)))
    for pred_path, gt_path in label_pairs:
        loaded.append((load_point_labels(pred_path), load_point_labels(gt_path)))

    if num_classes is None:
        top = 0
        for pred, gt in loaded:
            for arr in (pred, gt):
                valid = arr[arr != IGNORE_LABEL]
                if valid.size:
                    top = max(top, int(valid.max()))
        num_classes = top + 1
    cm = ConfusionMatrix.zeros(num_classes)
    for pred, gt in loaded:
        if pred.shape != gt.shape:
            click.echo("config error: prediction and ground truth shapes differ", err=True)
            sys.exit(EXIT_CONFIG_ERROR)
        cm = cm.merge(confusion_matrix(pred, gt, num_classes))
    ious = iou_per_class(cm)
    if write_csv:
        click.echo("class,iou")
        for i, value in enumerate(ious):
            cell = "" if not np.isfinite(value) else f"{value:.6f}"
            click.echo(f"{i},{cell}")
        click.echo(f"miou,{miou(ious):.6f}")
    else:
        click.echo(
            json.dumps(
                {
                    "per_class_iou": [None if not np.isfinite(x) else float(x) for x in ious],
                    "miou": float(miou(ious)),
                    "compared": cm.total_compared,
                },
                indent=2,
                sort_keys=True,
            )
        )


@main.command("select-depth")
@click.option("--manifest", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--flow-gt", "flow_gt_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path), help="Directory of <src>__<dst>.bin/.json ground-truth flow fields.")
@click.option("--flow-provider", default="identity", show_default=True)
@click.option("--aepe-threshold", default=0.2, show_default=True, type=float)
@click.option("--depth-cap", default=8, show_default=True, type=int)
@click.option("--margin", default=0, show_default=True, type=int, help="Redundancy margin subtracted from the chosen depth.")
def cmd_select_depth(manifest, flow_gt_dir, flow_provider, aepe_threshold, depth_cap, margin):
    """Choose a propagation depth from flow error against ground-truth flow."""
    try:
        dataset = load_manifest(manifest)
        cache = DatasetCache(dataset)
        ids = dataset.frame_ids
        estimated = compute_flow_chain(cache, ids, flow_provider)
        truth = []
        for a, b in zip(ids, ids[1:]):
            field, _ = load_flow_field(flow_gt_dir / f"{a}__{b}")
            truth.append(field)
    except (ClickliftError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    aepe_by_depth: dict[int, float] = {}
    est_acc, gt_acc = None, None
    for depth, (est, gt) in enumerate(zip(estimated, truth), start=1):
        est_acc = est if est_acc is None else compose_flow(est_acc, est)
        gt_acc = gt if gt_acc is None else compose_flow(gt_acc, gt)
        aepe_by_depth[depth] = aepe(est_acc, gt_acc)
    config = PropagationConfig(
        depth=0, aepe_threshold=aepe_threshold, depth_cap=depth_cap, redundancy_margin=margin
    )
    chosen = select_propagation_depth(aepe_by_depth, config)
    click.echo(
        json.dumps(
            {
                "aepe_by_depth": {str(k): v for k, v in aepe_by_depth.items()},
                "selected_depth": chosen,
            },
            indent=2,
            sort_keys=True,
        )
    )


@main.command("make-synthetic")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--frames", default=5, show_default=True, type=int)
@click.option("--width", default=320, show_default=True, type=int)
@click.option("--height", default=240, show_default=True, type=int)
def cmd_make_synthetic(out_dir, frames, width, height):
    """Generate the synthetic benchmark sequence used by the test suite."""
    manifest = generate_synthetic_sequence(out_dir, num_frames=frames, width=width, height=height)
    click.echo(str(manifest))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8601, show_default=True, type=int)
def cmd_serve(host, port):
    """Run the interactive annotation HTTP service."""
    import uvicorn

    uvicorn.run("clicklift.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
