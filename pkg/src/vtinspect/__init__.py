"""Two-stage visuotactile surface-defect inspection.

A statistical RGB detector stage proposes defect boxes; uncertain ones are
delegated to a tactile stage that classifies heightfield scans by their
measured depth and width. The package also holds the evaluation metrics,
annotation formats, synthetic data generator and a panel inspection
simulator used to study the pipeline.
"""

from .classify import ScanResult, classify_profile, classify_scan, scan_label
from .defects import DEFECT_CLASSES, DefectClass, DefectSpec
from .evaluation import EvalConfig, EvalReport, average_precision, confusion_matrix, evaluate_detections, iou
from .heightfield import Heightfield, load_heightfield, save_heightfield
from .localization import LocalizationConfig, localize
from .sim import InspectionReport, Mode, TimingModel, run_inspection, run_preset
from .synth import SceneRecipe, generate_scene, generate_tactile_suite, stamp_defect
from .vision import BoundingBox, Detection, RoutingConfig, route_detections
from .voc import GroundTruth, parse_voc, write_voc

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "DEFECT_CLASSES", "DefectClass", "DefectSpec", "Detection", "EvalConfig", "EvalReport",
    "GroundTruth", "Heightfield", "InspectionReport", "LocalizationConfig", "Mode", "RoutingConfig",
    "ScanResult", "SceneRecipe", "TimingModel", "average_precision", "classify_profile", "classify_scan",
    "confusion_matrix", "evaluate_detections", "generate_scene", "generate_tactile_suite", "iou",
    "load_heightfield", "localize", "parse_voc", "route_detections", "run_inspection", "run_preset",
    "save_heightfield", "scan_label", "stamp_defect", "write_voc",
]
