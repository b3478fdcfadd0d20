"""Label-quality and annotation-effort metrics: confusion, IoU, AEPE, counts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import numpy as np

from .errors import ShapeMismatchError
from .geometry import IGNORE_LABEL, PointPixelMap

if TYPE_CHECKING:
    from .annotation import AnnotationProject


@dataclass(eq=False)
class ConfusionMatrix:
    """S x S counts (rows = ground truth, cols = prediction).

    Predictions equal to IGNORE are tallied per ground-truth class in
    ``unlabeled`` instead of the matrix, so coverage and accuracy stay
    separable; elements whose ground truth is IGNORE are skipped entirely
    and counted in ``ignored``.
    """

    matrix: np.ndarray
    unlabeled: np.ndarray
    ignored: int = 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        self.unlabeled = np.asarray(self.unlabeled, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeMismatchError(f"confusion matrix must be square, got {self.matrix.shape}")
        if self.unlabeled.shape != (self.matrix.shape[0],):
            raise ShapeMismatchError("unlabeled column length must equal the class count")

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total_compared(self) -> int:
        return int(self.matrix.sum() + self.unlabeled.sum() + self.ignored)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Integer addition; the deterministic reduce for parallel tallies."""
        if other.num_classes != self.num_classes:
            raise ShapeMismatchError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(
            matrix=self.matrix + other.matrix,
            unlabeled=self.unlabeled + other.unlabeled,
            ignored=self.ignored + other.ignored,
        )

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(
            matrix=np.zeros((num_classes, num_classes), dtype=np.int64),
            unlabeled=np.zeros(num_classes, dtype=np.int64),
            ignored=0,
        )


def confusion_matrix(
    pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore: int = IGNORE_LABEL
) -> ConfusionMatrix:
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred has {pred.size} elements, gt has {gt.size}")
    counted = gt != ignore
    g = gt[counted]
    p = pred[counted]
    if g.size and (g.min() < 0 or g.max() >= num_classes):
        raise ValueError("ground-truth labels outside [0, num_classes)")
    missing = p == ignore
    if p.size and np.any((~missing) & ((p < 0) | (p >= num_classes))):
        raise ValueError("predicted labels outside [0, num_classes)")
    unlabeled = np.bincount(g[missing], minlength=num_classes)
    pairs = g[~missing].astype(np.int64) * num_classes + p[~missing].astype(np.int64)
    matrix = np.bincount(pairs, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )
    return ConfusionMatrix(
        matrix=matrix, unlabeled=unlabeled, ignored=int(gt.size - g.size)
    )


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """IoU_c = TP / (TP + FP + FN); NaN where a class has empty union.

    Unlabeled predictions count as false negatives for their ground-truth
    class, so a prediction cannot score 1.0 by leaving pixels blank.
    """
    tp = np.diag(cm.matrix).astype(np.float64)
    gt_total = cm.matrix.sum(axis=1) + cm.unlabeled
    pred_total = cm.matrix.sum(axis=0)
    union = gt_total + pred_total - tp
    out = np.full(cm.num_classes, np.nan, dtype=np.float64)
    nonzero = union > 0
    out[nonzero] = tp[nonzero] / union[nonzero]
    return out


def miou(per_class: np.ndarray) -> float:
    """Mean over classes with a nonzero union (NaN entries excluded)."""
    per_class = np.asarray(per_class, dtype=np.float64)
    present = np.isfinite(per_class)
    if not np.any(present):
        return float("nan")
    return float(per_class[present].mean())


def _flow_array(flow) -> np.ndarray:
    arr = np.asarray(getattr(flow, "flow", flow), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ShapeMismatchError(f"flow must be (H, W, 2), got {arr.shape}")
    return arr


def aepe(flow_est, flow_gt) -> float:
    """Average end-point error: mean Euclidean distance between flow vectors."""
    est = _flow_array(flow_est)
    gt = _flow_array(flow_gt)
    if est.shape != gt.shape:
        raise ShapeMismatchError(f"flow dims disagree: {est.shape} vs {gt.shape}")
    diff = est - gt
    return float(np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2).mean())


@dataclass(eq=False)
class EvaluationReport:
    """Aggregated run metrics: IoU tables, annotation effort, coverage."""

    class_names: tuple[str, ...]
    manual_counts: np.ndarray
    propagated_counts: np.ndarray
    dense_pixel_counts: np.ndarray
    dense_point_counts: np.ndarray
    total_points: int = 0
    manual_labeled_points: Optional[int] = None
    label_fraction: Optional[float] = None
    per_class_iou_2d: Optional[np.ndarray] = None
    miou_2d: Optional[float] = None
    per_class_iou_3d: Optional[np.ndarray] = None
    miou_3d: Optional[float] = None
    aepe_by_depth: Optional[dict[int, float]] = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        def _iou_list(arr):
            if arr is None:
                return None
            return [None if not math.isfinite(x) else float(x) for x in arr]

        def _opt(x):
            if x is None:
                return None
            return None if isinstance(x, float) and not math.isfinite(x) else float(x)

        return {
            "class_names": list(self.class_names),
            "manual_counts": [int(x) for x in self.manual_counts],
            "propagated_counts": [int(x) for x in self.propagated_counts],
            "dense_pixel_counts": [int(x) for x in self.dense_pixel_counts],
            "dense_point_counts": [int(x) for x in self.dense_point_counts],
            "total_points": int(self.total_points),
            "manual_labeled_points": (
                None if self.manual_labeled_points is None else int(self.manual_labeled_points)
            ),
            "label_fraction": _opt(self.label_fraction),
            "per_class_iou_2d": _iou_list(self.per_class_iou_2d),
            "miou_2d": _opt(self.miou_2d),
            "per_class_iou_3d": _iou_list(self.per_class_iou_3d),
            "miou_3d": _opt(self.miou_3d),
            "aepe_by_depth": (
                None
                if self.aepe_by_depth is None
                else {str(k): float(v) for k, v in sorted(self.aepe_by_depth.items())}
            ),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_text(self) -> str:
        """Aligned-column summary for terminals."""
        name_width = max([len(n) for n in self.class_names] + [len("class")])
        lines = [
            f"{'class':<{name_width}}  {'iou_2d':>8}  {'iou_3d':>8}  "
            f"{'manual':>7}  {'propagated':>10}  {'px':>10}  {'points':>10}"
        ]

        def _cell(arr, i):
            if arr is None or not math.isfinite(arr[i]):
                return "-"
            return f"{arr[i]:.4f}"

        for i, name in enumerate(self.class_names):
            lines.append(
                f"{name:<{name_width}}  {_cell(self.per_class_iou_2d, i):>8}  "
                f"{_cell(self.per_class_iou_3d, i):>8}  {int(self.manual_counts[i]):>7}  "
                f"{int(self.propagated_counts[i]):>10}  {int(self.dense_pixel_counts[i]):>10}  "
                f"{int(self.dense_point_counts[i]):>10}"
            )
        if self.miou_2d is not None:
            lines.append(f"mIoU 2D: {self.miou_2d:.4f}")
        if self.miou_3d is not None:
            lines.append(f"mIoU 3D: {self.miou_3d:.4f}")
        if self.label_fraction is not None:
            lines.append(
                f"manually labeled points: {self.manual_labeled_points} / {self.total_points}"
                f" ({100.0 * self.label_fraction:.5f}%)"
            )
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        rows = ["class,iou_2d,iou_3d,manual,propagated,dense_pixels,dense_points"]

        def _cell(arr, i):
            if arr is None or not math.isfinite(arr[i]):
                return ""
            return f"{arr[i]:.6f}"

        for i, name in enumerate(self.class_names):
            rows.append(
                f"{name},{_cell(self.per_class_iou_2d, i)},{_cell(self.per_class_iou_3d, i)},"
                f"{int(self.manual_counts[i])},{int(self.propagated_counts[i])},"
                f"{int(self.dense_pixel_counts[i])},{int(self.dense_point_counts[i])}"
            )
        return "\n".join(rows) + "\n"


def annotation_statistics(
    project: "AnnotationProject",
    label_clouds: Mapping[str, np.ndarray],
    pixel_maps: Optional[Mapping[str, PointPixelMap]] = None,
    label_images: Optional[Mapping[str, np.ndarray]] = None,
) -> EvaluationReport:
    """Tally annotation effort and dense coverage for a project.

    The labeled fraction divides the number of points that received a label
    directly from a manual click pixel by the total point count, which needs
    the per-frame point-to-pixel maps.
    """
    from .annotation import MANUAL  # local import avoids a cycle at module load

    s = project.taxonomy.count
    manual = np.zeros(s, dtype=np.int64)
    propagated = np.zeros(s, dtype=np.int64)
    for anns in project.annotations.values():
        for a in anns:
            if a.origin == MANUAL:
                manual[a.class_id] += 1
            else:
                propagated[a.class_id] += 1

    dense_points = np.zeros(s, dtype=np.int64)
    total_points = 0
    for labels in label_clouds.values():
        labels = np.asarray(labels)
        total_points += labels.size
        dense_points += np.bincount(
            labels[labels != IGNORE_LABEL], minlength=s
        )[:s]

    dense_pixels = np.zeros(s, dtype=np.int64)
    if label_images:
        for img in label_images.values():
            img = np.asarray(img)
            dense_pixels += np.bincount(img[img != IGNORE_LABEL], minlength=s)[:s]

    manual_labeled = None
    fraction = None
    if pixel_maps is not None:
        manual_labeled = 0
        for frame_id, pmap in pixel_maps.items():
            click_pixels = {
                (a.u, a.v)
                for a in project.annotations.get(frame_id, ())
                if a.origin == MANUAL
            }
            if not click_pixels:
                continue
            for u, v in zip(pmap.u[pmap.valid], pmap.v[pmap.valid]):
                if (int(u), int(v)) in click_pixels:
                    manual_labeled += 1
        fraction = manual_labeled / total_points if total_points else 0.0

    return EvaluationReport(
        class_names=project.taxonomy.names,
        manual_counts=manual,
        propagated_counts=propagated,
        dense_pixel_counts=dense_pixels,
        dense_point_counts=dense_points,
        total_points=total_points,
        manual_labeled_points=manual_labeled,
        label_fraction=fraction,
    )
