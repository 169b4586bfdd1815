"""
crowdmap
Ground-truth density maps for crowd counting, sliding-window augmentation and
multi-stream convolutional networks trained end to end.
"""

__version__ = "1.0.0"

from .annotations import BBox, DetectionSet, ImageAnnotation, Point2D
from .augment import DatasetAugmenter, NoiseSpec, PatchSpec
from .density_core import DensityMap, KernelSpec, KnnConfig, gen_fixed, gen_knn
from .exceptions import CrowdmapError
from .hybrid_gt import FaceGtConfig, gen_face
from .metrics import Evaluator, mae, rmse
from .msnn import MultiStreamNetwork, NetworkSpec, Trainer, preset

__all__ = [
    "BBox",
    "DetectionSet",
    "ImageAnnotation",
    "Point2D",
    "DensityMap",
    "KernelSpec",
    "KnnConfig",
    "gen_fixed",
    "gen_knn",
    "FaceGtConfig",
    "gen_face",
    "DatasetAugmenter",
    "PatchSpec",
    "NoiseSpec",
    "MultiStreamNetwork",
    "NetworkSpec",
    "Trainer",
    "preset",
    "Evaluator",
    "mae",
    "rmse",
    "CrowdmapError",
]
