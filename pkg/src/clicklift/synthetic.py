"""Deterministic synthetic benchmark scene.

A frontal plane painted with flat-color vertical bands is observed by a
camera translating sideways; a LiDAR return exists for every image pixel.
Images, point clouds, ground-truth labels, poses, and ground-truth flow are
all derived from the same analytic model, so every pipeline stage can be
checked against it exactly: the camera steps sideways by a whole number of
pixels per frame, band boundaries sit on pixel boundaries, and points sit on
pixel centers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import CameraCalibration
from .propagation import FlowField, save_flow_field
from .storage import (
    MANIFEST_SCHEMA_VERSION,
    save_calibration,
    save_image,
    save_label_image,
    save_point_labels,
)

BAND_NAMES = ("band_a", "band_b", "band_c", "band_d")
BAND_COLORS = np.array(
    [[204, 64, 64], [64, 204, 64], [64, 64, 204], [204, 204, 64]], dtype=np.uint8
)


def _band_of(x_world: np.ndarray, left: float, band_width: float, num_bands: int) -> np.ndarray:
    idx = np.floor((np.asarray(x_world) - left) / band_width).astype(np.int64)
    return np.clip(idx, 0, num_bands - 1)


def generate_synthetic_sequence(
    root: Path | str,
    num_frames: int = 5,
    width: int = 320,
    height: int = 240,
    focal: float = 200.0,
    plane_depth: float = 10.0,
    pixels_per_frame: int = 2,
    pad_pixels: int = 16,
) -> Path:
    """Write a full synthetic dataset under ``root``; returns the manifest path.

    The camera translates +x by exactly ``pixels_per_frame`` pixels' worth of
    motion per frame, so the whole scene shifts left by that many pixels each
    frame. ``pad_pixels`` widens the LiDAR grid beyond the frame-0 frustum so
    every pixel keeps a return in every frame.
    """
    root = Path(root)
    num_bands = len(BAND_NAMES)
    if pad_pixels <= pixels_per_frame * (num_frames - 1):
        raise ValueError("pad_pixels too small to keep all frames fully covered")
    for sub in ("images", "clouds", "gt_2d", "gt_3d", "flow_gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    cu = width / 2.0
    cv = height / 2.0
    spacing = plane_depth / focal  # world meters per pixel at the plane
    step_x = pixels_per_frame * spacing  # camera motion per frame
    band_width = width * spacing / num_bands
    left = -width * spacing / 2.0

    calib = CameraCalibration(
        intrinsic=np.array(
            [[focal, 0.0, cu, 0.0], [0.0, focal, cv, 0.0], [0.0, 0.0, 1.0, 0.0]]
        ),
        extrinsic=np.eye(4),
        image_width=width,
        image_height=height,
    )
    calib_path = root / "calibration.json"
    save_calibration(calib_path, calib)

    # World grid: one point per pixel-center ray of the frame-0 camera, padded
    # sideways so later frames stay covered.
    cols = np.arange(-pad_pixels, width + pad_pixels)
    rows = np.arange(-pad_pixels, height + pad_pixels)
    xs = (cols + 0.5 - cu) * spacing
    ys = (rows + 0.5 - cv) * spacing
    gx, gy = np.meshgrid(xs, ys)
    world = np.stack(
        [gx.ravel(), gy.ravel(), np.full(gx.size, plane_depth)], axis=1
    )
    point_bands = _band_of(world[:, 0], left, band_width, num_bands)
    intensity = (point_bands + 1.0) / (num_bands + 1.0)

    # Pixel-center world x per column, reused for every frame's image/labels.
    px_centers = (np.arange(width) + 0.5 - cu) * spacing

    frames = []
    for t in range(num_frames):
        frame_id = f"{t:06d}"
        cam_x = step_x * t

        bands_row = _band_of(px_centers + cam_x, left, band_width, num_bands)
        image = np.broadcast_to(BAND_COLORS[bands_row], (height, width, 3))
        save_image(root / "images" / f"{frame_id}.png", image)
        labels_2d = np.broadcast_to(bands_row.astype(np.int32), (height, width))
        save_label_image(root / "gt_2d" / f"{frame_id}.png", labels_2d)

        sensor = world.copy()
        sensor[:, 0] -= cam_x
        cloud = np.empty((len(sensor), 4), dtype="<f4")
        cloud[:, :3] = sensor
        cloud[:, 3] = intensity
        (root / "clouds" / f"{frame_id}.bin").write_bytes(cloud.tobytes())
        save_point_labels(root / "gt_3d" / f"{frame_id}.label", point_bands.astype(np.int32))

        pose = np.eye(4)
        pose[0, 3] = cam_x
        frames.append(
            {
                "frame_id": frame_id,
                "image": f"images/{frame_id}.png",
                "cloud": f"clouds/{frame_id}.bin",
                "calibration": "calibration.json",
                "gt_image_labels": f"gt_2d/{frame_id}.png",
                "gt_point_labels": f"gt_3d/{frame_id}.label",
                "pose": pose.tolist(),
            }
        )

        if t + 1 < num_frames:
            flow = np.zeros((height, width, 2), dtype=np.float32)
            flow[..., 0] = -float(pixels_per_frame)
            next_id = f"{t + 1:06d}"
            save_flow_field(
                root / "flow_gt" / f"{frame_id}__{next_id}",
                FlowField(flow=flow, source_frame_id=frame_id, target_frame_id=next_id),
                provider_name="synthetic",
            )

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "sequence": "synthetic",
        "taxonomy": {"names": list(BAND_NAMES)},
        "frames": frames,
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
