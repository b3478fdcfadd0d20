"""Dataset ingestion and artifact persistence.

Point clouds are little-endian float32 (x, y, z, intensity) records; point
labels are little-endian uint32 with the semantic id in the low 16 bits;
label images are 16-bit single-channel PNGs with 65535 standing in for
IGNORE. Projects and manifests are versioned JSON documents. All loaders
return typed errors on truncated or malformed input instead of crashing.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image

from .annotation import AnnotationProject, ClassTaxonomy, ScatterAnnotation
from .errors import ManifestError, StorageError
from .geometry import IGNORE_LABEL, CameraCalibration, PointCloud

POINT_RECORD_BYTES = 16
LABEL_SEMANTIC_MASK = 0xFFFF
# uint16 sentinel used on disk for IGNORE_LABEL.
IGNORE_RAW = 0xFFFF

PROJECT_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# point clouds and point labels

def load_point_cloud(path: Path | str) -> PointCloud:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read point cloud {path}: {exc}") from exc
    if len(raw) % POINT_RECORD_BYTES != 0:
        raise StorageError(
            f"{path}: size {len(raw)} is not a multiple of {POINT_RECORD_BYTES} bytes"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if data.size and not np.all(np.isfinite(data[:, :3])):
        raise StorageError(f"{path}: point coordinates contain NaN or inf")
    return PointCloud(xyz=data[:, :3], intensity=data[:, 3])


def save_point_cloud(path: Path | str, cloud: PointCloud) -> None:
    path = Path(path)
    data = np.empty((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.xyz
    data[:, 3] = cloud.intensity
    path.write_bytes(data.tobytes())


def load_point_labels(
    path: Path | str,
    remap: Optional[Mapping[int, int]] = None,
    expected_count: Optional[int] = None,
) -> np.ndarray:
    """Read per-point labels; semantic id = low 16 bits of each uint32.

    With a remap table, unmapped raw ids become IGNORE. Without one, the raw
    semantic id is taken as the class id directly, except the on-disk IGNORE
    sentinel.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read labels {path}: {exc}") from exc
    if len(raw) % 4 != 0:
        raise StorageError(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
    ids = np.frombuffer(raw, dtype="<u4") & LABEL_SEMANTIC_MASK
    if expected_count is not None and ids.size != expected_count:
        raise StorageError(
            f"{path}: {ids.size} labels but the cloud has {expected_count} points"
        )
    labels = np.full(ids.size, IGNORE_LABEL, dtype=np.int32)
    if remap is not None:
        for raw_id, class_id in remap.items():
            labels[ids == raw_id] = class_id
    else:
        keep = ids != IGNORE_RAW
        labels[keep] = ids[keep].astype(np.int32)
    return labels


def save_point_labels(path: Path | str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    raw = np.where(labels == IGNORE_LABEL, IGNORE_RAW, labels).astype("<u4")
    Path(path).write_bytes(raw.tobytes())


# ---------------------------------------------------------------------------
# images and label images

def load_image(path: Path | str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read image {path}: {exc}") from exc


def save_image(path: Path | str, rgb: np.ndarray) -> None:
    arr = np.ascontiguousarray(rgb, dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_label_image(path: Path | str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read label image {path}: {exc}") from exc
    if arr.ndim != 2:
        raise StorageError(f"{path}: label image must be single-channel, got {arr.shape}")
    labels = arr.astype(np.int32)
    labels[labels == IGNORE_RAW] = IGNORE_LABEL
    return labels


def save_label_image(path: Path | str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise StorageError(f"label image must be 2D, got shape {labels.shape}")
    if np.any((labels != IGNORE_LABEL) & ((labels < 0) | (labels >= IGNORE_RAW))):
        raise StorageError("class ids must fit a 16-bit label image")
    raw = np.where(labels == IGNORE_LABEL, IGNORE_RAW, labels).astype(np.uint16)
    Image.fromarray(raw).save(path, format="PNG")


# ---------------------------------------------------------------------------
# calibration

def load_calibration(path: Path | str) -> CameraCalibration:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise StorageError(f"cannot read calibration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"invalid calibration JSON at byte {exc.pos} in {path}: {exc.msg}") from exc
    return CameraCalibration.from_dict(data)


def save_calibration(path: Path | str, calib: CameraCalibration) -> None:
    Path(path).write_text(json.dumps(calib.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# raw float32 arrays with JSON sidecars

def save_raw_array(base: Path | str, array: np.ndarray, meta: dict) -> None:
    """Write ``base.bin`` (little-endian float32) and ``base.json``."""
    base = Path(base)
    arr = np.asarray(array, dtype="<f4")
    base.with_suffix(".bin").write_bytes(arr.tobytes())
    sidecar = dict(meta)
    sidecar["shape"] = list(arr.shape)
    sidecar["dtype"] = "<f4"
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_raw_array(base: Path | str) -> tuple[np.ndarray, dict]:
    base = Path(base)
    try:
        meta = json.loads(base.with_suffix(".json").read_text())
        raw = base.with_suffix(".bin").read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read raw array {base}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"invalid sidecar JSON at byte {exc.pos} for {base}: {exc.msg}") from exc
    shape = tuple(meta.get("shape", ()))
    arr = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape)) if shape else arr.size
    if arr.size != expected:
        raise StorageError(f"{base}: sidecar shape {shape} does not match {arr.size} floats")
    return arr.reshape(shape), meta


# ---------------------------------------------------------------------------
# dataset manifests

@dataclass(eq=False)
class FrameRecord:
    """Paths and metadata for one synchronized camera+LiDAR frame."""

    frame_id: str
    image_path: Path
    cloud_path: Path
    calibration_path: Path
    gt_image_labels_path: Optional[Path] = None
    gt_point_labels_path: Optional[Path] = None
    pose: Optional[np.ndarray] = None
    image_width: int = 0
    image_height: int = 0

    def to_dict(self, root: Optional[Path] = None) -> dict:
        def rel(p: Optional[Path]):
            if p is None:
                return None
            return os.path.relpath(p, root) if root else str(p)

        return {
            "frame_id": self.frame_id,
            "image": rel(self.image_path),
            "cloud": rel(self.cloud_path),
            "calibration": rel(self.calibration_path),
            "gt_image_labels": rel(self.gt_image_labels_path),
            "gt_point_labels": rel(self.gt_point_labels_path),
            "pose": None if self.pose is None else np.asarray(self.pose).tolist(),
            "image_width": self.image_width,
            "image_height": self.image_height,
        }


@dataclass(eq=False)
class DatasetManifest:
    """Ordered frames plus the taxonomy they are labeled against."""

    sequence: str
    taxonomy: ClassTaxonomy
    frames: list[FrameRecord] = field(default_factory=list)
    root: Path = Path(".")

    def frame(self, frame_id: str) -> FrameRecord:
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise ManifestError(f"unknown frame {frame_id!r} in sequence {self.sequence!r}")

    @property
    def frame_ids(self) -> list[str]:
        return [f.frame_id for f in self.frames]


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ManifestError(f"{what} {path} does not exist")
    return path


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load and validate a manifest: existence checks plus cheap parses.

    Calibration files are fully parsed; cloud and label files are checked for
    existence and record alignment; images are checked against the
    calibration dimensions.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid manifest JSON at byte {exc.pos}: {exc.msg}") from exc
    version = data.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(f"unsupported manifest schema_version {version!r}")
    root = path.parent
    taxonomy = ClassTaxonomy.from_dict(data["taxonomy"])
    frames: list[FrameRecord] = []
    seen: set[str] = set()
    calib_cache: dict[Path, CameraCalibration] = {}
    for entry in data.get("frames", []):
        frame_id = entry["frame_id"]
        if frame_id in seen:
            raise ManifestError(f"duplicate frame id {frame_id!r}")
        seen.add(frame_id)
        calib_path = _require_file(root / entry["calibration"], "calibration")
        if calib_path not in calib_cache:
            calib_cache[calib_path] = load_calibration(calib_path)
        calib = calib_cache[calib_path]
        image_path = _require_file(root / entry["image"], "image")
        cloud_path = _require_file(root / entry["cloud"], "cloud")
        if cloud_path.stat().st_size % POINT_RECORD_BYTES != 0:
            raise ManifestError(f"cloud {cloud_path} is not {POINT_RECORD_BYTES}-byte aligned")
        with Image.open(image_path) as img:
            if img.size != (calib.image_width, calib.image_height):
                raise ManifestError(
                    f"image {image_path} is {img.size}, calibration says "
                    f"{(calib.image_width, calib.image_height)}"
                )
        gt_img = entry.get("gt_image_labels")
        gt_pts = entry.get("gt_point_labels")
        pose = entry.get("pose")
        frames.append(
            FrameRecord(
                frame_id=frame_id,
                image_path=image_path,
                cloud_path=cloud_path,
                calibration_path=calib_path,
                gt_image_labels_path=_require_file(root / gt_img, "gt labels") if gt_img else None,
                gt_point_labels_path=_require_file(root / gt_pts, "gt labels") if gt_pts else None,
                pose=None if pose is None else np.asarray(pose, dtype=np.float64),
                image_width=calib.image_width,
                image_height=calib.image_height,
            )
        )
    return DatasetManifest(
        sequence=data.get("sequence", path.stem), taxonomy=taxonomy, frames=frames, root=root
    )


def save_manifest(path: Path | str, manifest: DatasetManifest) -> None:
    path = Path(path)
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "sequence": manifest.sequence,
        "taxonomy": manifest.taxonomy.to_dict(),
        "frames": [f.to_dict(root=path.parent) for f in manifest.frames],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# annotation projects

def project_to_dict(project: AnnotationProject) -> dict:
    return {
        "schema_version": PROJECT_SCHEMA_VERSION,
        "taxonomy": project.taxonomy.to_dict(),
        "frames": [project.frames[fid].to_dict() for fid in sorted(project.frames)],
        "annotations": {
            fid: [a.to_dict() for a in anns]
            for fid, anns in sorted(project.annotations.items())
        },
        "provenance": project.provenance,
    }


def save_project(path: Path | str, project: AnnotationProject) -> None:
    """Atomic write: serialize to a temp file, then rename over the target."""
    path = Path(path)
    payload = json.dumps(project_to_dict(project), indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_project(path: Path | str) -> AnnotationProject:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise StorageError(f"cannot read project {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"invalid project JSON at byte {exc.pos}: {exc.msg}") from exc
    version = data.get("schema_version")
    if not isinstance(version, int) or version > PROJECT_SCHEMA_VERSION:
        raise StorageError(
            f"project schema_version {version!r} is not supported "
            f"(this build reads up to {PROJECT_SCHEMA_VERSION})"
        )
    project = AnnotationProject(taxonomy=ClassTaxonomy.from_dict(data["taxonomy"]))
    for frame in data.get("frames", []):
        pose = frame.get("pose")
        project.frames[frame["frame_id"]] = FrameRecord(
            frame_id=frame["frame_id"],
            image_path=Path(frame["image"]),
            cloud_path=Path(frame["cloud"]),
            calibration_path=Path(frame["calibration"]),
            gt_image_labels_path=(
                Path(frame["gt_image_labels"]) if frame.get("gt_image_labels") else None
            ),
            gt_point_labels_path=(
                Path(frame["gt_point_labels"]) if frame.get("gt_point_labels") else None
            ),
            pose=None if pose is None else np.asarray(pose, dtype=np.float64),
            image_width=int(frame.get("image_width", 0)),
            image_height=int(frame.get("image_height", 0)),
        )
    for fid, anns in data.get("annotations", {}).items():
        project.annotations[fid] = [ScatterAnnotation.from_dict(a) for a in anns]
    project.provenance = list(data.get("provenance", []))
    return project
