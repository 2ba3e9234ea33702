"""Divide-and-conquer tooling for large-scene Gaussian splatting.

Turns one structure-from-motion scene into balanced, visibility-augmented
per-cell datasets, drives an external trainer per cell, merges the results
and fits a decoupled appearance model.
"""

__version__ = "0.1.0"

from .errors import CellsplatError
from .geometry import GroundRect, manhattan_align
from .merge import merge_cells, seam_report
from .partition import PartitionConfig, partition_scene
from .scene import CameraView, GaussianModel, SceneBundle, SparsePoint

__all__ = [
    "__version__",
    "CellsplatError",
    "CameraView",
    "GaussianModel",
    "SceneBundle",
    "SparsePoint",
    "GroundRect",
    "PartitionConfig",
    "manhattan_align",
    "partition_scene",
    "merge_cells",
    "seam_report",
]
