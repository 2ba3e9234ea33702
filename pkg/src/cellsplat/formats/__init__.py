"""Readers and writers for COLMAP models, Gaussian PLYs and cell manifests."""

from .colmap import load_colmap_sparse, save_colmap_sparse
from .manifest import load_cell_dataset, write_cell_dataset
from .ply import read_gaussian_ply, write_gaussian_ply

__all__ = [
    "load_colmap_sparse",
    "save_colmap_sparse",
    "read_gaussian_ply",
    "write_gaussian_ply",
    "load_cell_dataset",
    "write_cell_dataset",
]
