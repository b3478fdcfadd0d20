"""Camera model and LiDAR-to-image projection geometry.

Conventions: matrices are row-major float64; ``u`` is the image column
(rightward), ``v`` the row (downward). Stored pixel indices are the floor of
the continuous projection, so a point landing at (370.4, 240.9) is kept in
pixel (u=370, v=240). All functions here are pure and safe to call from
concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import CalibrationError, ShapeMismatchError

# Sentinel for "no class"; valid class ids are always >= 0.
IGNORE_LABEL = -1

# Minimum camera-space depth. Points at or behind the image plane are
# rejected rather than divided by a vanishing depth.
Z_EPS = 1e-6


class PixelCoord(NamedTuple):
    u: int
    v: int


@dataclass(eq=False)
class CameraCalibration:
    """Pinhole camera: 3x4 intrinsic, 4x4 rigid extrinsic, image size."""

    intrinsic: np.ndarray
    extrinsic: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        self.intrinsic = np.asarray(self.intrinsic, dtype=np.float64)
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        if self.intrinsic.shape != (3, 4):
            raise CalibrationError(f"intrinsic must be 3x4, got {self.intrinsic.shape}")
        if self.extrinsic.shape != (4, 4):
            raise CalibrationError(f"extrinsic must be 4x4, got {self.extrinsic.shape}")
        if not np.array_equal(self.extrinsic[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise CalibrationError("extrinsic bottom row must be (0, 0, 0, 1)")
        if np.any(~np.isfinite(self.intrinsic)) or np.any(~np.isfinite(self.extrinsic)):
            raise CalibrationError("calibration matrices must be finite")
        for r in range(3):
            if not np.any(self.intrinsic[r] != 0.0):
                raise CalibrationError(f"intrinsic row {r} is all zero")
        if self.image_width <= 0 or self.image_height <= 0:
            raise CalibrationError("image dimensions must be positive")
        self._proj = self._compose_projection()

    def _compose_projection(self) -> np.ndarray:
        # Expanded sums pin the floating-point evaluation order, so the
        # result is bit-identical to a scalar reference evaluation.
        m = np.empty((3, 4), dtype=np.float64)
        for r in range(3):
            for c in range(4):
                m[r, c] = sum(self.intrinsic[r, k] * self.extrinsic[k, c] for k in range(4))
        return m

    @property
    def projection_matrix(self) -> np.ndarray:
        """Combined 3x4 matrix mapping homogeneous sensor coords to the image."""
        return self._proj

    @property
    def dims(self) -> tuple[int, int]:
        """(height, width) in pixels."""
        return (self.image_height, self.image_width)

    def to_dict(self) -> dict:
        return {
            "intrinsic": self.intrinsic.tolist(),
            "extrinsic": self.extrinsic.tolist(),
            "image_width": self.image_width,
            "image_height": self.image_height,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraCalibration":
        try:
            return cls(
                intrinsic=np.asarray(data["intrinsic"], dtype=np.float64),
                extrinsic=np.asarray(data["extrinsic"], dtype=np.float64),
                image_width=int(data["image_width"]),
                image_height=int(data["image_height"]),
            )
        except KeyError as exc:
            raise CalibrationError(f"calibration is missing key {exc}") from exc


@dataclass(eq=False)
class PointCloud:
    """A set of sensor-frame points with per-point intensity."""

    xyz: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if self.intensity.shape[0] != self.xyz.shape[0]:
            raise ShapeMismatchError(
                f"{self.xyz.shape[0]} points but {self.intensity.shape[0]} intensities"
            )
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 3)), np.empty((0,)))


@dataclass(eq=False)
class PointPixelMap:
    """Per-point floor-quantized pixel coordinates plus validity.

    ``u``/``v`` hold -1 where ``valid`` is False; ``z_cam`` is the camera-space
    depth used for occlusion resolution.
    """

    u: np.ndarray
    v: np.ndarray
    z_cam: np.ndarray
    valid: np.ndarray
    image_width: int
    image_height: int

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    @property
    def dims(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)


def project_point(
    calib: CameraCalibration, point: Sequence[float]
) -> Optional[tuple[float, float, float]]:
    """Project one 3D point to continuous image coordinates.

    Returns (u, v, z_cam), or None when the point sits at or behind the image
    plane (z_cam <= Z_EPS). Caller is responsible for bounds checks.
    """
    x, y, z = (float(point[0]), float(point[1]), float(point[2]))
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError("point coordinates must be finite")
    m = calib.projection_matrix
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + m[2, 3]
    if w <= Z_EPS:
        return None
    u = (m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]) / w
    v = (m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]) / w
    return (u, v, w)


def project_cloud(calib: CameraCalibration, cloud: PointCloud) -> PointPixelMap:
    """Project every point and floor-quantize to integer pixels.

    A point is valid iff its depth exceeds Z_EPS and its floored pixel lies
    inside the image. Deterministic for fixed inputs.
    """
    m = calib.projection_matrix
    x = cloud.xyz[:, 0]
    y = cloud.xyz[:, 1]
    z = cloud.xyz[:, 2]
    # Per-term expressions (not matmul) keep rounding identical to the
    # scalar path in project_point.
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2] * z + m[2, 3]
    front = w > Z_EPS
    safe_w = np.where(front, w, 1.0)
    u_real = (m[0, 0] * x + m[0, 1] * y + m[0, 2] * z + m[0, 3]) / safe_w
    v_real = (m[1, 0] * x + m[1, 1] * y + m[1, 2] * z + m[1, 3]) / safe_w
    # floor(x) in [0, n) is equivalent to x in [0, n) for integer n, so the
    # bounds test runs on the continuous coords to avoid int overflow.
    inside = (
        front
        & (u_real >= 0.0)
        & (u_real < calib.image_width)
        & (v_real >= 0.0)
        & (v_real < calib.image_height)
    )
    u = np.where(inside, np.floor(np.where(inside, u_real, 0.0)), -1).astype(np.int64)
    v = np.where(inside, np.floor(np.where(inside, v_real, 0.0)), -1).astype(np.int64)
    return PointPixelMap(
        u=u,
        v=v,
        z_cam=w,
        valid=inside,
        image_width=calib.image_width,
        image_height=calib.image_height,
    )


def nearest_point_per_pixel(pixel_map: PointPixelMap) -> np.ndarray:
    """(H, W) index of the nearest-depth point per pixel, -1 where empty.

    Points are written farthest-first so the closest survives; depth ties
    resolve to the later point in cloud order (stable, deterministic).
    """
    index_map = np.full(pixel_map.dims, -1, dtype=np.int64)
    valid_idx = np.flatnonzero(pixel_map.valid)
    if valid_idx.size == 0:
        return index_map
    order = np.argsort(-pixel_map.z_cam[valid_idx], kind="stable")
    ordered = valid_idx[order]
    index_map[pixel_map.v[ordered], pixel_map.u[ordered]] = ordered
    return index_map


def projection_features(
    cloud: PointCloud, pixel_map: PointPixelMap, calib: CameraCalibration
) -> np.ndarray:
    """Rasterize the cloud into 5-channel (range, x, y, z, intensity) features.

    Pixel collisions resolve nearest-depth-wins; pixels without a projected
    point stay all-zero. Returns a (5, H, W) float64 array.
    """
    if pixel_map.dims != calib.dims:
        raise ShapeMismatchError(
            f"pixel map dims {pixel_map.dims} do not match calibration {calib.dims}"
        )
    if len(pixel_map) != len(cloud):
        raise ShapeMismatchError(
            f"pixel map covers {len(pixel_map)} points, cloud has {len(cloud)}"
        )
    features = np.zeros((5,) + pixel_map.dims, dtype=np.float64)
    index_map = nearest_point_per_pixel(pixel_map)
    covered = index_map >= 0
    if not np.any(covered):
        return features
    chosen = index_map[covered]
    xyz = cloud.xyz[chosen]
    features[0][covered] = np.sqrt(xyz[:, 0] ** 2 + xyz[:, 1] ** 2 + xyz[:, 2] ** 2)
    features[1][covered] = xyz[:, 0]
    features[2][covered] = xyz[:, 1]
    features[3][covered] = xyz[:, 2]
    features[4][covered] = cloud.intensity[chosen]
    return features


def lift_labels(pixel_map: PointPixelMap, label_image: np.ndarray) -> np.ndarray:
    """Copy each valid point's pixel class onto the point.

    Invalid points (behind the camera or out of frame) become IGNORE_LABEL.
    Every point behind a pixel receives that pixel's class; occlusion along
    the ray is deliberately not resolved here.
    """
    label_image = np.asarray(label_image)
    if label_image.shape != pixel_map.dims:
        raise ShapeMismatchError(
            f"label image shape {label_image.shape} does not match frame {pixel_map.dims}"
        )
    labels = np.full(len(pixel_map), IGNORE_LABEL, dtype=np.int32)
    valid = pixel_map.valid
    labels[valid] = label_image[pixel_map.v[valid], pixel_map.u[valid]]
    return labels
