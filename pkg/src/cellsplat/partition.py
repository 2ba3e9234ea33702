"""Progressive data partitioning of a scene into a grid of training cells.

The stages run in order for every cell:

1. camera-position-based region division (:func:`divide_regions`)
2. boundary expansion (:func:`expand_cell`)
3. position-based camera and point selection (:func:`position_select`)
4. visibility-based camera selection (:func:`visibility_camera_select`)
5. coverage-based point selection (:func:`coverage_point_select`)

:func:`partition_scene` chains them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .errors import EmptyCellError, InvertedBoxError, PartitionError
from .geometry import (
    GroundRect,
    cell_airspace_box,
    clip_polygon_to_rect,
    convex_hull,
    polygon_area,
    project_box,
    project_points,
)
from .scene import CameraView, SceneBundle

log = logging.getLogger(__name__)

VisibilityMode = Literal["airspace_aware", "airspace_agnostic"]
VISIBILITY_MODES = ("airspace_aware", "airspace_agnostic")


@dataclass(frozen=True)
class PartitionConfig:
    m: int = 2
    n: int = 2
    expansion_ratio: float = 0.2
    visibility_threshold: float = 0.25
    visibility_mode: VisibilityMode = "airspace_aware"
    clip_to_image: bool = True
    # None -> percentile of all point heights
    ground_y: Optional[float] = None
    ground_percentile: float = 5.0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.m}x{self.n}")
        if not 0.0 <= self.visibility_threshold <= 1.0:
            # thresholds above 1 are accepted by visibility_camera_select for
            # ablations but not as a pipeline setting
            raise ValueError(f"visibility threshold {self.visibility_threshold} outside [0, 1]")
        if self.expansion_ratio < 0:
            raise ValueError(f"negative expansion ratio {self.expansion_ratio}")
        if self.visibility_mode not in VISIBILITY_MODES:
            raise ValueError(f"unknown visibility mode {self.visibility_mode!r}")


@dataclass(frozen=True)
class CellSpec:
    row: int
    col: int
    original: GroundRect
    expanded: GroundRect

    def __post_init__(self):
        if not self.expanded.contains_rect(self.original):
            raise ValueError("expanded rectangle must contain the original one")

    @property
    def name(self) -> str:
        return f"cell_{self.row}_{self.col}"


@dataclass(frozen=True)
class SelectionRecord:
    visibility: Optional[float]
    reason: Literal["position", "visibility", "rejected"]


@dataclass(frozen=True)
class CellDataset:
    """Cameras and points assigned to one cell; id tuples are sorted."""

    spec: CellSpec
    camera_ids: tuple[int, ...] = ()
    point_ids: tuple[int, ...] = ()
    selection_log: dict[int, SelectionRecord] = field(default_factory=dict)
    coverage_point_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "camera_ids", tuple(sorted(set(int(i) for i in self.camera_ids))))
        object.__setattr__(self, "point_ids", tuple(sorted(set(int(i) for i in self.point_ids))))
        object.__setattr__(
            self, "coverage_point_ids", tuple(sorted(set(int(i) for i in self.coverage_point_ids)))
        )

    @property
    def index(self) -> tuple[int, int]:
        return (self.spec.row, self.spec.col)

    def cameras_by_reason(self, reason: str) -> list[int]:
        return [
            cid for cid in self.camera_ids
            if cid in self.selection_log and self.selection_log[cid].reason == reason
        ]


# ---------------------------------------------------------------------------
# region division


def camera_ground_positions(bundle: SceneBundle) -> np.ndarray:
    """(N, 2) array of camera centers projected onto the ground, as (x, z)."""
    c = bundle.camera_centers
    return c[:, [0, 2]] if len(c) else np.zeros((0, 2))


def _quantile_edges(values: np.ndarray, parts: int, lo: float, hi: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Split sorted-by-(value, index) order into ``parts`` near-equal runs.

    Returns the ``parts + 1`` section edges and each section's member indices.
    Internal edges sit halfway between neighbouring runs.
    """
    order = np.lexsort((np.arange(len(values)), values))
    groups = np.array_split(order, parts)
    edges = [lo]
    for left, right in zip(groups[:-1], groups[1:]):
        edges.append(0.5 * (values[left[-1]] + values[right[0]]))
    edges.append(hi)
    edges = np.asarray(edges, dtype=float)
    # duplicated coordinates can collapse edges; nudge them apart
    step = 1e-9 * max(1.0, float(np.abs(edges).max()))
    for k in range(1, len(edges)):
        if edges[k] <= edges[k - 1]:
            edges[k] = edges[k - 1] + step
    return edges, groups


def divide_regions(bundle: SceneBundle, m: int, n: int) -> list[CellSpec]:
    """Balanced m x n division of the camera bounding rectangle.

    The x axis is cut into ``m`` sections with equal camera counts (up to one),
    then each section is cut along z into ``n`` segments the same way. Cells
    are returned row-major: ``row`` indexes the x section, ``col`` the z one.
    Expanded bounds equal the original ones until :func:`expand_cell`.
    """
    if m < 1 or n < 1:
        raise PartitionError(f"grid must be at least 1x1, got {m}x{n}")
    ground = camera_ground_positions(bundle)
    if len(ground) < m * n:
        raise PartitionError(f"{len(ground)} cameras cannot fill a {m}x{n} grid")
    x, z = ground[:, 0], ground[:, 1]
    x_edges, x_groups = _quantile_edges(x, m, float(x.min()), float(x.max()))
    z_lo, z_hi = float(z.min()), float(z.max())
    if z_hi <= z_lo:
        z_hi = z_lo + 1e-9 * max(1.0, abs(z_lo))
    specs = []
    for i, members in enumerate(x_groups):
        z_edges, _ = _quantile_edges(z[members], n, z_lo, z_hi)
        for j in range(n):
            rect = GroundRect(
                float(x_edges[i]), float(x_edges[i + 1]), float(z_edges[j]), float(z_edges[j + 1]),
                closed_max_x=(i == m - 1), closed_max_z=(j == n - 1),
            )
            specs.append(CellSpec(i, j, rect, rect))
    return specs


def expand_cell(spec: CellSpec, ratio: float) -> CellSpec:
    """Grow the cell's bounds concentrically; each side length becomes ``(1 + ratio)`` times."""
    if ratio < 0:
        raise ValueError(f"negative expansion ratio {ratio}")
    return replace(spec, expanded=spec.original.scaled(1.0 + ratio))


# ---------------------------------------------------------------------------
# selection stages


def position_select(bundle: SceneBundle, spec: CellSpec) -> CellDataset:
    ground = camera_ground_positions(bundle)
    cam_mask = spec.expanded.contains(ground[:, 0], ground[:, 1]) if len(ground) else np.zeros(0, bool)
    pos = bundle.point_positions
    pt_mask = spec.expanded.contains(pos[:, 0], pos[:, 2]) if len(pos) else np.zeros(0, bool)
    cams = bundle.camera_ids[cam_mask]
    log_ = {int(cid): SelectionRecord(None, "position") for cid in cams}
    return CellDataset(spec, tuple(cams.tolist()), tuple(bundle.point_ids[pt_mask].tolist()), log_)


def default_ground_y(bundle: SceneBundle, percentile: float = 5.0) -> float:
    pos = bundle.point_positions
    if len(pos) == 0:
        return 0.0
    return float(np.percentile(pos[:, 1], percentile))


def visibility(
    camera: CameraView,
    cell_points: np.ndarray,
    rect: GroundRect,
    *,
    mode: VisibilityMode = "airspace_aware",
    ground_y: float = 0.0,
    clip_to_image: bool = True,
) -> float:
    """Fraction of the image covered by the projected cell.

    ``airspace_aware`` projects the cell's airspace box (ground plane up to
    the highest cell point, footprint ``rect``); ``airspace_agnostic``
    projects the cell's surface points. The convex hull of the projection is
    clipped to the image before measuring, unless ``clip_to_image`` is off,
    in which case the ratio is capped at 1.
    """
    pts = np.asarray(cell_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCellError("cell has no points to measure visibility against")
    if mode == "airspace_aware":
        uv = project_box(camera, cell_airspace_box(pts, ground_y, rect))
    elif mode == "airspace_agnostic":
        uv, front = project_points(camera, pts)
        uv = uv[front]
    else:
        raise ValueError(f"unknown visibility mode {mode!r}")
    if len(uv) < 3:
        return 0.0
    hull = convex_hull(uv)
    if clip_to_image:
        hull = clip_polygon_to_rect(hull, camera.width, camera.height)
    return min(1.0, polygon_area(hull) / camera.image_area)


def cell_points(bundle: SceneBundle, cell: CellDataset) -> np.ndarray:
    rows = [bundle.point_index[pid] for pid in cell.point_ids]
    return bundle.point_positions[rows] if rows else np.zeros((0, 3))


def visibility_camera_select(
    bundle: SceneBundle,
    cell: CellDataset,
    config: PartitionConfig,
    *,
    threshold: Optional[float] = None,
    ground_y: Optional[float] = None,
) -> CellDataset:
    """Add every not-yet-selected camera whose visibility exceeds the threshold.

    The comparison is strict. Every candidate's value is logged, selected or
    not. A cell without usable geometry adds no cameras.
    """
    th = config.visibility_threshold if threshold is None else threshold
    gy = ground_y if ground_y is not None else (
        config.ground_y if config.ground_y is not None else default_ground_y(bundle, config.ground_percentile)
    )
    pts = cell_points(bundle, cell)
    chosen = set(cell.camera_ids)
    log_ = dict(cell.selection_log)
    added = []
    for cam in bundle.cameras:
        if cam.id in chosen:
            continue
        try:
            vis = visibility(cam, pts, cell.spec.expanded, mode=config.visibility_mode,
                             ground_y=gy, clip_to_image=config.clip_to_image)
        except (EmptyCellError, InvertedBoxError) as exc:
            log.warning("%s: no visibility geometry (%s)", cell.spec.name, exc)
            vis = 0.0
        if vis > th:
            added.append(cam.id)
            log_[cam.id] = SelectionRecord(vis, "visibility")
        else:
            log_[cam.id] = SelectionRecord(vis, "rejected")
    return replace(cell, camera_ids=cell.camera_ids + tuple(added), selection_log=log_)


def coverage_point_select(bundle: SceneBundle, cell: CellDataset) -> CellDataset:
    """Add every point observed by at least one of the cell's cameras."""
    have = set(cell.point_ids)
    rows: set[int] = set()
    for cid in cell.camera_ids:
        rows.update(bundle.points_by_camera.get(cid, ()))
    ids = bundle.point_ids
    new = sorted(int(ids[r]) for r in rows if int(ids[r]) not in have)
    return replace(
        cell,
        point_ids=cell.point_ids + tuple(new),
        coverage_point_ids=cell.coverage_point_ids + tuple(new),
    )


def _process_cell(bundle: SceneBundle, spec: CellSpec, config: PartitionConfig, ground_y: float) -> CellDataset:
    spec = expand_cell(spec, config.expansion_ratio)
    cell = position_select(bundle, spec)
    cell = visibility_camera_select(bundle, cell, config, ground_y=ground_y)
    return coverage_point_select(bundle, cell)


def partition_scene(bundle: SceneBundle, config: PartitionConfig, workers: int = 1) -> list[CellDataset]:
    """Run the full partitioning pipeline; output is row-major and independent of ``workers``."""
    specs = divide_regions(bundle, config.m, config.n)
    gy = config.ground_y if config.ground_y is not None else default_ground_y(bundle, config.ground_percentile)
    # materialise lazy caches before sharing the bundle across threads
    for attr in ("camera_centers", "camera_ids", "point_positions", "point_ids", "point_index", "points_by_camera"):
        getattr(bundle, attr)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda s: _process_cell(bundle, s, config, gy), specs))
    else:
        cells = [_process_cell(bundle, s, config, gy) for s in specs]
    return sorted(cells, key=lambda c: c.index)


def partition_summary(cells: list[CellDataset], bundle: SceneBundle, bins: int = 10) -> dict:
    """Per-cell counts and histograms of candidate visibility values."""
    out = []
    edges = np.linspace(0.0, 1.0, bins + 1)
    for cell in cells:
        vis = [r.visibility for r in cell.selection_log.values() if r.visibility is not None]
        hist, _ = np.histogram(np.clip(vis, 0.0, 1.0), bins=edges)
        out.append(
            {
                "row": cell.spec.row,
                "col": cell.spec.col,
                "name": cell.spec.name,
                "original": cell.spec.original.to_dict(),
                "expanded": cell.spec.expanded.to_dict(),
                "cameras": len(cell.camera_ids),
                "cameras_position": len(cell.cameras_by_reason("position")),
                "cameras_visibility": len(cell.cameras_by_reason("visibility")),
                "points": len(cell.point_ids),
                "points_coverage": len(cell.coverage_point_ids),
                "visibility_histogram": {"edges": edges.tolist(), "counts": hist.tolist()},
            }
        )
    return {
        "version": 1,
        "total_cameras": len(bundle.cameras),
        "total_points": len(bundle.points),
        "cells": out,
    }
