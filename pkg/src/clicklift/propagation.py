"""Annotation transport across frames and click-to-mask densification.

Clicks travel frame to frame by sampling a dense optical-flow field at the
click position, one hop at a time; each frame's clicks then expand into
per-class masks through a pluggable mask provider. Flow and mask estimation
are behind provider interfaces so heavyweight learned models can be swapped
in as external subprocesses, while the built-in providers stay deterministic
and dependency-free.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .annotation import NEGATIVE, POSITIVE, PROPAGATED, ClassMask, ClassTaxonomy, ScatterAnnotation
from .errors import AnnotationError, FlowChainError, ProviderError, ShapeMismatchError
from .geometry import CameraCalibration, PointCloud, Z_EPS, nearest_point_per_pixel, project_cloud
from .storage import load_raw_array, save_image, save_raw_array

log = logging.getLogger(__name__)


@dataclass(eq=False)
class FlowField:
    """Dense per-pixel displacement: ``flow[v, u] = (du, dv)`` in pixels."""

    flow: np.ndarray
    source_frame_id: str = ""
    target_frame_id: str = ""

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float32)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ShapeMismatchError(f"flow must be (H, W, 2), got {self.flow.shape}")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow displacements must be finite")

    @property
    def dims(self) -> tuple[int, int]:
        return self.flow.shape[:2]


@dataclass
class PropagationConfig:
    """Knobs for interframe transport and flow-error-driven depth choice."""

    depth: int = 4
    aepe_threshold: float = 0.2
    depth_cap: int = 8
    redundancy_margin: int = 0

    def __post_init__(self):
        if not 0 <= self.depth <= self.depth_cap:
            raise ValueError(f"depth {self.depth} outside [0, {self.depth_cap}]")
        if self.aepe_threshold <= 0:
            raise ValueError("aepe_threshold must be positive")
        if self.redundancy_margin < 0:
            raise ValueError("redundancy_margin must be non-negative")


@dataclass(eq=False)
class MaskProposal:
    """A provider's raw answer: a binary mask and how much it trusts it."""

    mask: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


class FlowProvider(ABC):
    """Estimates dense optical flow between two images.

    ``thread_safe`` declares whether concurrent ``estimate`` calls are
    allowed; the engine serializes providers that say no.
    """

    name: str = "flow"
    thread_safe: bool = True

    @abstractmethod
    def estimate(self, image_a: np.ndarray, image_b: np.ndarray) -> FlowField:
        ...


class MaskProvider(ABC):
    """Turns positive/negative click prompts into a segmentation mask.

    ``propose`` returns None to report failure; the returned mask must cover
    every positive click pixel.
    """

    name: str = "mask"
    thread_safe: bool = True

    @abstractmethod
    def propose(
        self,
        image: np.ndarray,
        positives: Sequence[tuple[int, int]],
        negatives: Sequence[tuple[int, int]],
    ) -> Optional[MaskProposal]:
        ...


# ---------------------------------------------------------------------------
# flow sampling and composition

def _bilinear(channel: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Sample a (H, W) channel at float positions with border clamping."""
    h, w = channel.shape
    us = np.clip(us, 0.0, w - 1.0)
    vs = np.clip(vs, 0.0, h - 1.0)
    u0 = np.floor(us).astype(np.int64)
    v0 = np.floor(vs).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = us - u0
    fv = vs - v0
    top = channel[v0, u0] * (1.0 - fu) + channel[v0, u1] * fu
    bottom = channel[v1, u0] * (1.0 - fu) + channel[v1, u1] * fu
    return top * (1.0 - fv) + bottom * fv


def sample_flow(field: FlowField, u: float, v: float) -> tuple[float, float]:
    """Bilinearly sampled (du, dv) at one position."""
    us = np.asarray([float(u)])
    vs = np.asarray([float(v)])
    du = _bilinear(field.flow[..., 0].astype(np.float64), us, vs)[0]
    dv = _bilinear(field.flow[..., 1].astype(np.float64), us, vs)[0]
    return (float(du), float(dv))


def compose_flow(first: FlowField, second: FlowField) -> FlowField:
    """Chain two fields: f(p) = first(p) + second(p + first(p))."""
    if first.dims != second.dims:
        raise ShapeMismatchError(f"flow dims disagree: {first.dims} vs {second.dims}")
    if (
        first.target_frame_id
        and second.source_frame_id
        and first.target_frame_id != second.source_frame_id
    ):
        raise FlowChainError(
            f"cannot compose {first.source_frame_id}->{first.target_frame_id} with "
            f"{second.source_frame_id}->{second.target_frame_id}"
        )
    h, w = first.dims
    vs, us = np.mgrid[0:h, 0:w].astype(np.float64)
    pu = us + first.flow[..., 0]
    pv = vs + first.flow[..., 1]
    du = _bilinear(second.flow[..., 0].astype(np.float64), pu.ravel(), pv.ravel()).reshape(h, w)
    dv = _bilinear(second.flow[..., 1].astype(np.float64), pu.ravel(), pv.ravel()).reshape(h, w)
    combined = np.stack([first.flow[..., 0] + du, first.flow[..., 1] + dv], axis=-1)
    return FlowField(
        flow=combined,
        source_frame_id=first.source_frame_id,
        target_frame_id=second.target_frame_id,
    )


# ---------------------------------------------------------------------------
# interframe propagation

def propagate_annotations(
    annotations: Sequence[ScatterAnnotation],
    flows: Sequence[FlowField],
    depth: int,
) -> list[list[ScatterAnnotation]]:
    """Carry clicks forward through a chain of flow fields.

    Each hop samples the flow at the click's current pixel, rounds the moved
    position to the nearest pixel, and drops clicks that leave the frame
    (they stay dropped in all later frames). Returns one list per hop.
    """
    if depth < 1:
        raise ValueError("propagation depth must be at least 1")
    if len(flows) < depth:
        raise FlowChainError(f"need {depth} chained flow fields, got {len(flows)}")
    for i in range(1, depth):
        prev, cur = flows[i - 1], flows[i]
        if prev.target_frame_id and cur.source_frame_id and prev.target_frame_id != cur.source_frame_id:
            raise FlowChainError(
                f"flow chain breaks between {prev.target_frame_id!r} and {cur.source_frame_id!r}"
            )
    if annotations and flows[0].source_frame_id:
        for a in annotations:
            if a.frame_id != flows[0].source_frame_id:
                raise FlowChainError(
                    f"annotation on frame {a.frame_id!r} but chain starts at "
                    f"{flows[0].source_frame_id!r}"
                )
    per_frame: list[list[ScatterAnnotation]] = []
    current = list(annotations)
    for hop in range(depth):
        field = flows[hop]
        h, w = field.dims
        moved: list[ScatterAnnotation] = []
        for a in current:
            du, dv = sample_flow(field, a.u, a.v)
            nu = int(np.rint(a.u + du))
            nv = int(np.rint(a.v + dv))
            if 0 <= nu < w and 0 <= nv < h:
                moved.append(
                    replace(a, frame_id=field.target_frame_id, u=nu, v=nv, origin=PROPAGATED)
                )
        per_frame.append(moved)
        current = moved
    return per_frame


def densify(
    image: np.ndarray,
    annotations: Sequence[ScatterAnnotation],
    taxonomy: ClassTaxonomy,
    provider: MaskProvider,
) -> list[ClassMask]:
    """Expand one frame's clicks into per-class masks.

    For every class holding at least one positive click, the provider is
    prompted with that class's clicks as positives and everything that says
    "not this class" as negatives: the class's own negative clicks plus all
    other classes' positive clicks. Provider failures (None, a raised
    ProviderError, or an uncovered positive) drop that class and are logged.
    """
    if not annotations:
        raise AnnotationError("densify needs at least one annotation")
    classes = sorted({a.class_id for a in annotations if a.polarity == POSITIVE})
    if not classes:
        raise AnnotationError("densify needs at least one positive annotation")
    masks: list[ClassMask] = []
    for class_id in classes:
        positives = [(a.u, a.v) for a in annotations if a.class_id == class_id and a.polarity == POSITIVE]
        negatives = [
            (a.u, a.v)
            for a in annotations
            if (a.class_id == class_id and a.polarity == NEGATIVE)
            or (a.class_id != class_id and a.polarity == POSITIVE)
        ]
        try:
            proposal = provider.propose(image, positives, negatives)
        except ProviderError as exc:
            log.warning("mask provider %s failed for class %d: %s", provider.name, class_id, exc)
            continue
        if proposal is None:
            log.warning("mask provider %s returned no mask for class %d", provider.name, class_id)
            continue
        if not all(proposal.mask[v, u] for u, v in positives):
            log.warning(
                "mask provider %s left a positive click uncovered for class %d; discarding",
                provider.name,
                class_id,
            )
            continue
        masks.append(ClassMask(class_id=class_id, mask=proposal.mask, confidence=proposal.confidence))
    return masks


def select_propagation_depth(
    aepe_by_depth: Mapping[int, float], config: PropagationConfig
) -> int:
    """Deepest prefix of depths whose flow error stays under the threshold.

    A depth qualifies only if every shallower depth also qualifies, so a
    transient error spike halts propagation there. The redundancy margin is
    subtracted afterwards; the result is clamped to [0, depth_cap].
    """
    if not aepe_by_depth:
        raise ValueError("aepe_by_depth must not be empty")
    depths = sorted(aepe_by_depth)
    if depths != list(range(1, len(depths) + 1)):
        raise ValueError("aepe_by_depth must be keyed by consecutive depths starting at 1")
    chosen = 0
    for d in depths:
        if aepe_by_depth[d] < config.aepe_threshold:
            chosen = d
        else:
            break
    return int(np.clip(chosen - config.redundancy_margin, 0, config.depth_cap))


# ---------------------------------------------------------------------------
# built-in providers

class IdentityFlowProvider(FlowProvider):
    """All-zero flow; the do-nothing baseline and a handy test oracle."""

    name = "identity"

    def estimate(self, image_a: np.ndarray, image_b: np.ndarray) -> FlowField:
        h, w = np.asarray(image_a).shape[:2]
        return FlowField(flow=np.zeros((h, w, 2), dtype=np.float32))


def builtin_identity_flow() -> FlowProvider:
    return IdentityFlowProvider()


class EgomotionFlowProvider(FlowProvider):
    """Deterministic flow from LiDAR depth plus a known rigid motion.

    The flow at a pixel is the reprojection displacement of the nearest-depth
    point at that pixel after applying ``pose_delta`` (the transform taking
    frame-t sensor coordinates into the next frame's); pixels without a
    LiDAR return get zero flow. Images passed to ``estimate`` are ignored
    apart from a dimension check.
    """

    name = "egomotion"

    def __init__(self, calib: CameraCalibration, cloud: PointCloud, pose_delta: np.ndarray):
        pose_delta = np.asarray(pose_delta, dtype=np.float64)
        if pose_delta.shape != (4, 4) or not np.allclose(pose_delta[3], [0, 0, 0, 1]):
            raise ValueError("pose_delta must be a 4x4 rigid transform")
        self._calib = calib
        self._flow = self._reprojection_flow(calib, cloud, pose_delta)

    @staticmethod
    def _reprojection_flow(
        calib: CameraCalibration, cloud: PointCloud, pose_delta: np.ndarray
    ) -> np.ndarray:
        flow = np.zeros(calib.dims + (2,), dtype=np.float32)
        if len(cloud) == 0:
            return flow
        pmap = project_cloud(calib, cloud)
        index_map = nearest_point_per_pixel(pmap)
        covered = index_map >= 0
        if not np.any(covered):
            return flow
        chosen = index_map[covered]
        p = cloud.xyz[chosen]
        q = p @ pose_delta[:3, :3].T + pose_delta[:3, 3]
        m = calib.projection_matrix
        ones = np.ones(len(p))

        def proj(pts):
            w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2] * pts[:, 2] + m[2, 3] * ones
            ok = w > Z_EPS
            sw = np.where(ok, w, 1.0)
            u = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2] * pts[:, 2] + m[0, 3] * ones) / sw
            v = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2] * pts[:, 2] + m[1, 3] * ones) / sw
            return u, v, ok

        u0, v0, ok0 = proj(p)
        u1, v1, ok1 = proj(q)
        usable = ok0 & ok1
        du = np.where(usable, u1 - u0, 0.0)
        dv = np.where(usable, v1 - v0, 0.0)
        vec = np.zeros((len(p), 2), dtype=np.float32)
        vec[:, 0] = du
        vec[:, 1] = dv
        flow[covered] = vec
        return flow

    def estimate(self, image_a: np.ndarray, image_b: np.ndarray) -> FlowField:
        if image_a is not None:
            dims = np.asarray(image_a).shape[:2]
            if tuple(dims) != self._calib.dims:
                raise ShapeMismatchError(
                    f"image dims {tuple(dims)} do not match calibration {self._calib.dims}"
                )
        return FlowField(flow=self._flow.copy())


def builtin_egomotion_flow(
    calib: CameraCalibration, cloud: PointCloud, pose_delta: np.ndarray
) -> FlowProvider:
    return EgomotionFlowProvider(calib, cloud, pose_delta)


def _flood_region(
    image: np.ndarray,
    seed: tuple[int, int],
    tolerance: float,
    blocked: Optional[np.ndarray],
) -> np.ndarray:
    """4-connected flood fill against a running region mean.

    Growth happens in breadth-first waves: every unclaimed 4-neighbour of the
    frontier whose color lies within ``tolerance`` of the current region mean
    joins in the same wave, then the mean is refreshed. Wave acceptance makes
    the result independent of any pixel scan order.
    """
    h, w = image.shape[:2]
    su, sv = seed
    region = np.zeros((h, w), dtype=bool)
    region[sv, su] = True
    color_sum = image[sv, su].astype(np.float64).copy()
    count = 1
    tol2 = float(tolerance) * float(tolerance)
    fy = np.array([sv], dtype=np.int64)
    fx = np.array([su], dtype=np.int64)
    while fy.size:
        ny = np.concatenate([fy - 1, fy + 1, fy, fy])
        nx = np.concatenate([fx, fx, fx - 1, fx + 1])
        inb = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        keys = np.unique(ny[inb] * w + nx[inb])
        ny, nx = keys // w, keys % w
        free = ~region[ny, nx]
        if blocked is not None:
            free &= ~blocked[ny, nx]
        ny, nx = ny[free], nx[free]
        if ny.size == 0:
            break
        mean = color_sum / count
        delta = image[ny, nx].astype(np.float64) - mean
        keep = (delta * delta).sum(axis=1) <= tol2
        if not keep.any():
            break
        ay, ax = ny[keep], nx[keep]
        region[ay, ax] = True
        color_sum += image[ay, ax].astype(np.float64).sum(axis=0)
        count += int(ay.size)
        fy, fx = ay, ax
    return region


class RegionGrowMasker(MaskProvider):
    """Deterministic color region growing; the built-in mask provider.

    Negative clicks are grown first with the same rule and their union
    blocks positive growth, so the blocked set does not depend on positive
    ordering. The output is the union of one fill per positive click. Fails
    (returns None) when a positive click is out of frame or sits inside
    blocked territory.
    """

    name = "region_grow"

    def __init__(self, color_tolerance: float = 12.0):
        if color_tolerance < 0:
            raise ValueError("color tolerance must be non-negative")
        self.color_tolerance = float(color_tolerance)

    def propose(
        self,
        image: np.ndarray,
        positives: Sequence[tuple[int, int]],
        negatives: Sequence[tuple[int, int]],
    ) -> Optional[MaskProposal]:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = img[..., None]
        h, w = img.shape[:2]
        if not positives:
            return None
        blocked = np.zeros((h, w), dtype=bool)
        for nu, nv in sorted(set((int(u), int(v)) for u, v in negatives)):
            if 0 <= nu < w and 0 <= nv < h:
                blocked |= _flood_region(img, (nu, nv), self.color_tolerance, None)
        seeds = sorted(set((int(u), int(v)) for u, v in positives))
        for pu, pv in seeds:
            if not (0 <= pu < w and 0 <= pv < h) or blocked[pv, pu]:
                return None
        mask = np.zeros((h, w), dtype=bool)
        for seed in seeds:
            mask |= _flood_region(img, seed, self.color_tolerance, blocked)
        return MaskProposal(mask=mask, confidence=1.0)


def builtin_region_grow_masker(color_tolerance: float = 12.0) -> MaskProvider:
    return RegionGrowMasker(color_tolerance)


# ---------------------------------------------------------------------------
# external subprocess providers

def _split_command(command) -> list[str]:
    if isinstance(command, str):
        return shlex.split(command)
    return list(command)


def _run_command(argv: list[str]) -> None:
    try:
        result = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise ProviderError(f"cannot launch {argv[0]!r}: {exc}") from exc
    if result.returncode != 0:
        raise ProviderError(
            f"{argv[0]!r} exited {result.returncode}: {result.stderr.strip()[:500]}"
        )


class ExternalFlowProvider(FlowProvider):
    """Runs ``<command> image_a.png image_b.png out_base`` in a subprocess.

    The command must write ``out_base.bin`` as little-endian float32 of shape
    (H, W, 2) plus an ``out_base.json`` sidecar; that is the same raw-array
    format the flow cache uses, so a real flow network wraps in a few lines
    of script.
    """

    def __init__(self, command):
        self.command = _split_command(command)
        self.name = f"external:{self.command[0]}"

    def estimate(self, image_a: np.ndarray, image_b: np.ndarray) -> FlowField:
        with tempfile.TemporaryDirectory(prefix="clicklift-flow-") as tmp:
            tmp_path = Path(tmp)
            a_path = tmp_path / "a.png"
            b_path = tmp_path / "b.png"
            save_image(a_path, image_a)
            save_image(b_path, image_b)
            out_base = tmp_path / "flow"
            _run_command(self.command + [str(a_path), str(b_path), str(out_base)])
            try:
                arr, _ = load_raw_array(out_base)
            except Exception as exc:
                raise ProviderError(f"flow command wrote no readable output: {exc}") from exc
        expected = tuple(np.asarray(image_a).shape[:2]) + (2,)
        if arr.shape != expected:
            raise ProviderError(f"flow output shape {arr.shape}, expected {expected}")
        return FlowField(flow=arr)


class ExternalMaskProvider(MaskProvider):
    """Runs ``<command> image.png clicks.json out_base`` in a subprocess.

    ``clicks.json`` holds {"positives": [[u, v], ...], "negatives": [...]};
    the command writes a float32 (H, W) raw array that is thresholded at 0.5,
    with an optional "confidence" key in the sidecar.
    """

    def __init__(self, command):
        self.command = _split_command(command)
        self.name = f"external:{self.command[0]}"

    def propose(
        self,
        image: np.ndarray,
        positives: Sequence[tuple[int, int]],
        negatives: Sequence[tuple[int, int]],
    ) -> Optional[MaskProposal]:
        with tempfile.TemporaryDirectory(prefix="clicklift-mask-") as tmp:
            tmp_path = Path(tmp)
            image_path = tmp_path / "image.png"
            save_image(image_path, image)
            clicks_path = tmp_path / "clicks.json"
            clicks_path.write_text(
                json.dumps(
                    {
                        "positives": [[int(u), int(v)] for u, v in positives],
                        "negatives": [[int(u), int(v)] for u, v in negatives],
                    }
                )
            )
            out_base = tmp_path / "mask"
            _run_command(self.command + [str(image_path), str(clicks_path), str(out_base)])
            try:
                arr, meta = load_raw_array(out_base)
            except Exception as exc:
                raise ProviderError(f"mask command wrote no readable output: {exc}") from exc
        expected = tuple(np.asarray(image).shape[:2])
        if arr.shape != expected:
            raise ProviderError(f"mask output shape {arr.shape}, expected {expected}")
        return MaskProposal(mask=arr > 0.5, confidence=float(meta.get("confidence", 1.0)))


# ---------------------------------------------------------------------------
# flow cache

def save_flow_field(base: Path | str, field: FlowField, provider_name: str) -> None:
    """Cache a field as raw float32 plus a JSON sidecar describing it."""
    save_raw_array(
        base,
        field.flow,
        {
            "height": field.dims[0],
            "width": field.dims[1],
            "channels": 2,
            "source_frame_id": field.source_frame_id,
            "target_frame_id": field.target_frame_id,
            "provider": provider_name,
        },
    )


def load_flow_field(base: Path | str) -> tuple[FlowField, str]:
    arr, meta = load_raw_array(base)
    field = FlowField(
        flow=arr,
        source_frame_id=meta.get("source_frame_id", ""),
        target_frame_id=meta.get("target_frame_id", ""),
    )
    return field, meta.get("provider", "")
