"""Visible-feature-guided post-processing and evaluation for crowd pedestrian detection."""

__version__ = "0.1.0"

from .geometry import BBox, OcclusionStats, area, intersection, iou, occlusion_ratio
from .nms import PairedDetection, ScoredBox, greedy_nms, soft_nms_linear, vfg_nms
from .association import (
    Assignment,
    AssociationResult,
    CostMatrix,
    associate,
    build_cost_distance,
    build_cost_iou,
    eval_association,
    hungarian_solve,
)
from .regression import (
    PairedGroundTruth,
    Proposal,
    RegressionTarget,
    decode_targets,
    encode_targets,
    multi_task_loss,
    smooth_l1,
)
from .evaluation import (
    EvalReport,
    GroundTruthInstance,
    SubsetFilter,
    apply_subset,
    average_precision,
    evaluate,
    log_average_miss_rate,
    match_detections,
    sweep_iou,
)

__all__ = [
    "BBox", "OcclusionStats", "area", "intersection", "iou", "occlusion_ratio",
    "PairedDetection", "ScoredBox", "greedy_nms", "soft_nms_linear", "vfg_nms",
    "Assignment", "AssociationResult", "CostMatrix", "associate", "build_cost_distance",
    "build_cost_iou", "eval_association", "hungarian_solve",
    "PairedGroundTruth", "Proposal", "RegressionTarget", "decode_targets", "encode_targets",
    "multi_task_loss", "smooth_l1",
    "EvalReport", "GroundTruthInstance", "SubsetFilter", "apply_subset", "average_precision",
    "evaluate", "log_average_miss_rate", "match_detections", "sweep_iou",
]
