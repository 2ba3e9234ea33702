"""Seamless merging of independently trained cells."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import OverlappingCellsError
from .geometry import GroundRect
from .partition import CellSpec
from .scene import GaussianModel


def cull_outside(model: GaussianModel, original: GroundRect) -> GaussianModel:
    """Keep the Gaussians whose ground position (x, z) lies in ``original``.

    Height never culls. Uses the same half-open membership as partitioning,
    so a Gaussian sitting on a shared edge survives in exactly one cell.
    """
    if model.count == 0:
        return model
    keep = original.contains(model.positions[:, 0], model.positions[:, 2])
    return model.take(np.flatnonzero(keep))


def _interiors_overlap(a: GroundRect, b: GroundRect) -> bool:
    return a.min_x < b.max_x and b.min_x < a.max_x and a.min_z < b.max_z and b.min_z < a.max_z


def check_disjoint(specs: Sequence[CellSpec]) -> None:
    for i, a in enumerate(specs):
        for b in specs[i + 1 :]:
            if _interiors_overlap(a.original, b.original):
                raise OverlappingCellsError(f"{a.name} and {b.name} overlap")


def merge_cells(models: Sequence[tuple[GaussianModel, CellSpec]]) -> GaussianModel:
    """Cull every cell to its original bounds and concatenate in row-major order."""
    items = sorted(models, key=lambda ms: (ms[1].row, ms[1].col))
    check_disjoint([spec for _, spec in items])
    return GaussianModel.concatenate([cull_outside(model, spec.original) for model, spec in items])


def _shared_segment(a: CellSpec, b: CellSpec):
    """Boundary between two cells as (axis, coordinate, lo, hi), or None.

    ``axis`` is the coordinate held fixed along the boundary ("x" or "z").
    """
    ra, rb = a.original, b.original
    for axis, (a_max, b_min, lo, hi) in {
        "x": (ra.max_x, rb.min_x, max(ra.min_z, rb.min_z), min(ra.max_z, rb.max_z)),
        "z": (ra.max_z, rb.min_z, max(ra.min_x, rb.min_x), min(ra.max_x, rb.max_x)),
    }.items():
        if a_max == b_min and hi > lo:
            return axis, a_max, lo, hi
    return None


def seam_report(merged: GaussianModel, specs: Sequence[CellSpec], strip_fraction: float = 0.05) -> list[dict]:
    """Gaussian density in thin strips on both sides of every internal boundary.

    Strip width is ``strip_fraction`` times the smaller of the two cells'
    extents across the boundary. ``ratio`` is near-side over far-side density
    (None when the far side is empty); ``flag`` marks empty sides.
    """
    if merged.count == 0:
        return []
    x = merged.positions[:, 0].astype(float)
    z = merged.positions[:, 2].astype(float)
    report = []
    ordered = sorted(specs, key=lambda s: (s.row, s.col))
    for a in ordered:
        for b in ordered:
            if a is b:
                continue
            seg = _shared_segment(a, b)
            if seg is None:
                continue
            axis, c, lo, hi = seg
            if axis == "x":
                width = strip_fraction * min(a.original.width, b.original.width)
                across, along = x, z
            else:
                width = strip_fraction * min(a.original.depth, b.original.depth)
                across, along = z, x
            on_seg = (along >= lo) & (along < hi)
            n_a = int(np.count_nonzero(on_seg & (across >= c - width) & (across < c)))
            n_b = int(np.count_nonzero(on_seg & (across >= c) & (across < c + width)))
            area = width * (hi - lo)
            d_a, d_b = n_a / area, n_b / area
            ratio = d_a / d_b if d_b > 0 else None
            report.append(
                {
                    "cells": [a.name, b.name],
                    "axis": axis,
                    "coordinate": c,
                    "extent": [lo, hi],
                    "strip_width": width,
                    "count": [n_a, n_b],
                    "density": [d_a, d_b],
                    "ratio": ratio,
                    "flag": "empty_side" if (n_a == 0) != (n_b == 0) else ("empty" if n_a == n_b == 0 else None),
                }
            )
    return report
