"""clicklift: sparse image clicks densified into 2D masks and 3D point labels.

Humans drop a handful of clicks per class on an image; the engine carries
those clicks across frames with optical flow, grows them into per-class
masks, merges and confidence-gates the masks into dense label images, and
lifts the labels onto the synchronized LiDAR point cloud. Evaluation
utilities score the produced labels against ground truth.
"""

from .annotation import (
    AnnotationProject,
    ClassMask,
    ClassTaxonomy,
    ScatterAnnotation,
    add_annotation,
    merge_masks,
    simulate_manual_annotation,
)
from .consistency import (
    ProbabilityMap,
    confidence_map,
    entropy_map,
    gate_propagated_labels,
    kl_divergence,
    perceptual_consistency_score,
    perceptual_weights,
)
from .errors import ClickliftError
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    aepe,
    annotation_statistics,
    confusion_matrix,
    iou_per_class,
    miou,
)
from .geometry import (
    IGNORE_LABEL,
    CameraCalibration,
    PointCloud,
    PointPixelMap,
    lift_labels,
    project_cloud,
    project_point,
    projection_features,
)
from .propagation import (
    FlowField,
    FlowProvider,
    MaskProvider,
    PropagationConfig,
    builtin_egomotion_flow,
    builtin_identity_flow,
    builtin_region_grow_masker,
    densify,
    propagate_annotations,
    select_propagation_depth,
)

__version__ = "0.1.0"
