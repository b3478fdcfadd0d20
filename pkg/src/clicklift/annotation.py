"""Click annotations, class taxonomy, projects, and dense-mask merging."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import AnnotationError, ShapeMismatchError
from .geometry import IGNORE_LABEL

if TYPE_CHECKING:
    from .storage import FrameRecord

POSITIVE = "positive"
NEGATIVE = "negative"
MANUAL = "manual"
PROPAGATED = "propagated"

# Human guidance is 1-5 clicks per class; going past it warns but never fails,
# since extra negative prompts are sometimes needed.
MANUAL_CLICK_SOFT_LIMIT = 5

# One extra click per this share of the labeled area, so a class covering the
# whole frame gets the full budget while a speck gets a single click.
AREA_FRACTION_PER_CLICK = 0.05


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class names; class ids are positions in ``names``."""

    names: tuple[str, ...]
    raw_remap: Optional[Mapping[int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise AnnotationError("taxonomy needs at least two classes")
        if len(set(self.names)) != len(self.names):
            raise AnnotationError("taxonomy names must be unique")
        if self.raw_remap is not None:
            for raw, cid in self.raw_remap.items():
                if not 0 <= cid < len(self.names):
                    raise AnnotationError(f"remap target {cid} for raw id {raw} out of range")

    @property
    def count(self) -> int:
        return len(self.names)

    def valid_class(self, class_id: int) -> bool:
        return 0 <= class_id < len(self.names)

    def to_dict(self) -> dict:
        data: dict = {"names": list(self.names)}
        if self.raw_remap is not None:
            data["raw_remap"] = {str(k): v for k, v in self.raw_remap.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ClassTaxonomy":
        remap = data.get("raw_remap")
        if remap is not None:
            remap = {int(k): int(v) for k, v in remap.items()}
        return cls(names=tuple(data["names"]), raw_remap=remap)


@dataclass(frozen=True)
class ScatterAnnotation:
    """One labeled click: a pixel, a class, and a positive/negative prompt role."""

    frame_id: str
    u: int
    v: int
    class_id: int
    polarity: str = POSITIVE
    origin: str = MANUAL
    source_frame_id: str = ""

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise AnnotationError(f"unknown polarity {self.polarity!r}")
        if self.origin not in (MANUAL, PROPAGATED):
            raise AnnotationError(f"unknown origin {self.origin!r}")
        if not self.source_frame_id:
            object.__setattr__(self, "source_frame_id", self.frame_id)
        if self.origin == MANUAL and self.source_frame_id != self.frame_id:
            raise AnnotationError("manual annotations must originate on their own frame")

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "u": int(self.u),
            "v": int(self.v),
            "class_id": int(self.class_id),
            "polarity": self.polarity,
            "origin": self.origin,
            "source_frame_id": self.source_frame_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScatterAnnotation":
        return cls(
            frame_id=data["frame_id"],
            u=int(data["u"]),
            v=int(data["v"]),
            class_id=int(data["class_id"]),
            polarity=data.get("polarity", POSITIVE),
            origin=data.get("origin", MANUAL),
            source_frame_id=data.get("source_frame_id", ""),
        )


@dataclass(eq=False)
class ClassMask:
    """Binary per-pixel mask for one class with a provider confidence."""

    class_id: int
    mask: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ShapeMismatchError(f"mask must be 2D, got shape {self.mask.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise AnnotationError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(eq=False)
class AnnotationProject:
    """Taxonomy + frame registry + click lists + append-only provenance.

    Writers must be serialized per project (the HTTP service holds one lock
    per session); reads of the plain-data fields are snapshot-safe.
    """

    taxonomy: ClassTaxonomy
    frames: dict[str, "FrameRecord"] = field(default_factory=dict)
    annotations: dict[str, list[ScatterAnnotation]] = field(default_factory=dict)
    provenance: list[dict] = field(default_factory=list)

    def register_frame(self, record: "FrameRecord") -> None:
        if record.frame_id in self.frames:
            raise AnnotationError(f"frame {record.frame_id!r} already registered")
        self.frames[record.frame_id] = record

    def record_event(self, event: str, **payload) -> dict:
        entry = {"seq": len(self.provenance), "event": event, **payload}
        self.provenance.append(entry)
        return entry

    def annotations_for(self, frame_id: str) -> list[ScatterAnnotation]:
        return list(self.annotations.get(frame_id, ()))

    def manual_click_count(self, frame_id: str, class_id: int) -> int:
        return sum(
            1
            for a in self.annotations.get(frame_id, ())
            if a.origin == MANUAL and a.class_id == class_id
        )


def add_annotation(project: AnnotationProject, annotation: ScatterAnnotation) -> Optional[str]:
    """Append a click to the project; returns a soft-limit warning or None.

    Raises AnnotationError for an unknown frame, invalid class, or a pixel
    outside the frame. Exceeding the 1-5 guidance for manual clicks of one
    (frame, class) pair warns rather than fails.
    """
    record = project.frames.get(annotation.frame_id)
    if record is None:
        raise AnnotationError(f"unknown frame {annotation.frame_id!r}")
    if not project.taxonomy.valid_class(annotation.class_id):
        raise AnnotationError(
            f"class {annotation.class_id} not in taxonomy of {project.taxonomy.count}"
        )
    if not (0 <= annotation.u < record.image_width and 0 <= annotation.v < record.image_height):
        raise AnnotationError(
            f"click ({annotation.u}, {annotation.v}) outside "
            f"{record.image_width}x{record.image_height} frame"
        )
    project.annotations.setdefault(annotation.frame_id, []).append(annotation)
    warning = None
    if annotation.origin == MANUAL:
        count = project.manual_click_count(annotation.frame_id, annotation.class_id)
        if count > MANUAL_CLICK_SOFT_LIMIT:
            warning = (
                f"frame {annotation.frame_id} class {annotation.class_id} now has "
                f"{count} manual clicks (guidance is at most {MANUAL_CLICK_SOFT_LIMIT})"
            )
    project.record_event(
        "annotation_added", annotation=annotation.to_dict(), warned=warning is not None
    )
    return warning


def click_budget(
    class_pixels: int, labeled_pixels: int, k_min: int = 1, k_max: int = 5
) -> int:
    """Clicks to spend on a class, scaled by its share of the labeled area."""
    if class_pixels <= 0:
        return 0
    fraction = class_pixels / labeled_pixels
    k = math.ceil(fraction / AREA_FRACTION_PER_CLICK)
    return min(max(k, k_min), k_max, class_pixels)


def simulate_manual_annotation(
    gt_label_image: np.ndarray,
    frame_id: str = "",
    k_min: int = 1,
    k_max: int = 5,
    seed: int = 0,
) -> list[ScatterAnnotation]:
    """Sample positive clicks from ground truth, standing in for a human.

    For each class present, picks its click budget's worth of pixels uniformly
    at random without replacement from that class's pixels. Deterministic for
    a fixed seed.
    """
    gt = np.asarray(gt_label_image)
    labeled = gt != IGNORE_LABEL
    total = int(np.count_nonzero(labeled))
    if total == 0:
        raise AnnotationError("ground truth contains no labeled pixels")
    rng = np.random.default_rng(seed)
    clicks: list[ScatterAnnotation] = []
    for class_id in np.unique(gt[labeled]):
        vs, us = np.nonzero(gt == class_id)
        k = click_budget(len(vs), total, k_min=k_min, k_max=k_max)
        picked = rng.choice(len(vs), size=k, replace=False)
        for i in np.sort(picked):
            clicks.append(
                ScatterAnnotation(
                    frame_id=frame_id,
                    u=int(us[i]),
                    v=int(vs[i]),
                    class_id=int(class_id),
                )
            )
    return clicks


def merge_masks(masks: Sequence[ClassMask], dims: tuple[int, int]) -> np.ndarray:
    """Merge per-class masks into one label image.

    Overlaps resolve by higher confidence, then smaller area, then lower
    class id, which hands small foreground objects priority over large
    background masks. Uncovered pixels stay IGNORE_LABEL. The tiebreak is
    total, so the result is independent of input order.
    """
    label = np.full(dims, IGNORE_LABEL, dtype=np.int32)
    for m in masks:
        if m.mask.shape != tuple(dims):
            raise ShapeMismatchError(
                f"mask for class {m.class_id} has shape {m.mask.shape}, frame is {tuple(dims)}"
            )
    # Paint worst-priority first so the winner lands last.
    for m in sorted(masks, key=lambda m: (m.confidence, -m.area, -m.class_id)):
        label[m.mask] = m.class_id
    return label
