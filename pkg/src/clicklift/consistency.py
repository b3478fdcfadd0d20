"""Elementwise confidence math over class-probability maps.

Entropy is Shannon entropy normalized by log(S) so it lands in [0, 1] for any
class count S >= 2; confidence is its complement C = 1 - E. Perceptual weights
gate on a confidence threshold and the clamped confidence gap between a source
and a target map; the weighted mean KL divergence scores how consistently two
maps agree where the source is trusted. Everything here is pure and
elementwise, so arbitrary parallel invocation is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .geometry import IGNORE_LABEL

PIXEL_LAYOUT = "pixel"
POINT_LAYOUT = "point"

# Floor applied to the second KL argument; keeps log(p/q) finite when the
# reference assigns zero mass.
Q_EPS = 1e-12

# Confidence threshold used throughout unless a caller overrides it.
DEFAULT_TAU = 0.7


@dataclass(eq=False)
class ProbabilityMap:
    """Per-element class distributions.

    ``pixel`` layout stores (S, H, W); ``point`` layout stores (N, S). Each
    distribution must be non-negative and sum to 1 within 1e-6.
    """

    values: np.ndarray
    layout: str = PIXEL_LAYOUT

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.layout == PIXEL_LAYOUT:
            if self.values.ndim != 3:
                raise ShapeMismatchError(
                    f"pixel layout needs (S, H, W), got shape {self.values.shape}"
                )
        elif self.layout == POINT_LAYOUT:
            if self.values.ndim != 2:
                raise ShapeMismatchError(
                    f"point layout needs (N, S), got shape {self.values.shape}"
                )
        else:
            raise ValueError(f"unknown layout {self.layout!r}")
        if np.any(self.values < 0.0):
            raise ValueError("probabilities must be non-negative")
        sums = self.values.sum(axis=self.class_axis)
        if sums.size and np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("each distribution must sum to 1 within 1e-6")

    @property
    def class_axis(self) -> int:
        return 0 if self.layout == PIXEL_LAYOUT else 1

    @property
    def num_classes(self) -> int:
        return self.values.shape[self.class_axis]

    @property
    def element_shape(self) -> tuple[int, ...]:
        if self.layout == PIXEL_LAYOUT:
            return self.values.shape[1:]
        return (self.values.shape[0],)


@dataclass(eq=False)
class PerceptualWeights:
    """Per-element gate weights plus the threshold that produced them."""

    values: np.ndarray
    tau: float


def _same_shape(a: ProbabilityMap, b: ProbabilityMap) -> None:
    if a.layout != b.layout or a.values.shape != b.values.shape:
        raise ShapeMismatchError(
            f"probability maps disagree: {a.layout}{a.values.shape} vs {b.layout}{b.values.shape}"
        )


def entropy_map(probs: ProbabilityMap) -> np.ndarray:
    """Normalized Shannon entropy per element: -(1/log S) * sum p log p.

    0 * log 0 is taken as 0, so a one-hot distribution scores exactly 0 and
    the uniform distribution scores 1.
    """
    if probs.num_classes < 2:
        raise ValueError("entropy normalization needs at least two classes")
    p = probs.values
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -plogp.sum(axis=probs.class_axis) / math.log(probs.num_classes)


def confidence_map(entropy: np.ndarray) -> np.ndarray:
    """C = 1 - E, elementwise."""
    return 1.0 - np.asarray(entropy, dtype=np.float64)


def perceptual_weights(
    c_source: np.ndarray, c_target: np.ndarray, tau: float = DEFAULT_TAU
) -> PerceptualWeights:
    """Clamped confidence gap, zeroed wherever the source is not trusted.

    weight = max(c_source - c_target, 0) where c_source > tau, else 0. The
    clamp is a lower bound at zero, not a reduction, so the output keeps the
    input's element shape.
    """
    c_source = np.asarray(c_source, dtype=np.float64)
    c_target = np.asarray(c_target, dtype=np.float64)
    if c_source.shape != c_target.shape:
        raise ShapeMismatchError(
            f"confidence maps disagree: {c_source.shape} vs {c_target.shape}"
        )
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau {tau} outside [0, 1]")
    gap = np.maximum(c_source - c_target, 0.0)
    return PerceptualWeights(values=np.where(c_source > tau, gap, 0.0), tau=tau)


def kl_divergence(p: ProbabilityMap, q: ProbabilityMap) -> np.ndarray:
    """Per-element KL(p || q) with q floored at Q_EPS.

    Terms with p = 0 contribute nothing (0 log 0 convention); the floor keeps
    the result finite and bounded by -log(Q_EPS) when q vanishes where p does
    not. Non-negative up to floating tolerance.
    """
    _same_shape(p, q)
    pv = p.values
    qf = np.maximum(q.values, Q_EPS)
    terms = np.where(
        pv > 0.0,
        pv * (np.log(np.where(pv > 0.0, pv, 1.0)) - np.log(qf)),
        0.0,
    )
    return terms.sum(axis=p.class_axis)


def perceptual_consistency_score(
    source: ProbabilityMap, target: ProbabilityMap, weights: PerceptualWeights
) -> float:
    """Mean of weight * KL(source || target) over all elements.

    The target acts as a fixed reference; nothing differentiable happens
    here, so "do not propagate into the target" is vacuous for this numeric
    evaluation.
    """
    _same_shape(source, target)
    w = np.asarray(weights.values, dtype=np.float64)
    if w.shape != source.element_shape:
        raise ShapeMismatchError(
            f"weights shape {w.shape} does not match elements {source.element_shape}"
        )
    n = w.size
    if n == 0:
        raise ValueError("cannot score an empty map")
    return float((w * kl_divergence(source, target)).sum() / n)


def save_probability_map(base, probs: ProbabilityMap) -> None:
    """Serialize as raw little-endian float32 plus a layout/class-count sidecar."""
    from .storage import save_raw_array

    save_raw_array(
        base, probs.values, {"layout": probs.layout, "classes": probs.num_classes}
    )


def load_probability_map(base) -> ProbabilityMap:
    from .storage import load_raw_array

    arr, meta = load_raw_array(base)
    probs = ProbabilityMap(values=arr, layout=meta.get("layout", PIXEL_LAYOUT))
    declared = meta.get("classes")
    if declared is not None and probs.num_classes != int(declared):
        raise ShapeMismatchError(
            f"sidecar declares {declared} classes but the array holds {probs.num_classes}"
        )
    return probs


def gate_propagated_labels(
    label_image: np.ndarray, probs: ProbabilityMap, tau: float = DEFAULT_TAU
) -> np.ndarray:
    """Blank out labels wherever the distribution is not confident enough.

    Pixels whose confidence (1 - normalized entropy of ``probs``) is <= tau
    become IGNORE_LABEL; everything else passes through unchanged.
    """
    label_image = np.asarray(label_image)
    if probs.layout != PIXEL_LAYOUT:
        raise ShapeMismatchError("gating requires a pixel-layout probability map")
    if probs.element_shape != label_image.shape:
        raise ShapeMismatchError(
            f"probability map {probs.element_shape} does not match labels {label_image.shape}"
        )
    confidence = confidence_map(entropy_map(probs))
    return np.where(confidence > tau, label_image, IGNORE_LABEL).astype(np.int32)
