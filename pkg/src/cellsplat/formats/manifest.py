"""On-disk cell datasets.

A cell directory holds::

    manifest.json            # this module's JSON document, "version": 1
    sparse/0/cameras.bin     # COLMAP subset: the cell's cameras
    sparse/0/images.bin
    sparse/0/points3D.bin    # cell points observed by cell cameras
    sparse/0/points3D.ply    # every cell point (position + colour), trainer init

All paths inside the manifest are relative to the cell directory.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np
from plyfile import PlyData, PlyElement

from ..errors import ManifestError
from ..geometry import GroundRect
from ..partition import CellDataset, CellSpec, SelectionRecord
from ..scene import SceneBundle
from .colmap import read_images_binary, save_colmap_sparse

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
SPARSE_DIR = "sparse/0"
POINTS_PLY = "sparse/0/points3D.ply"


def cell_to_dict(cell: CellDataset) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "cell": {"row": cell.spec.row, "col": cell.spec.col, "name": cell.spec.name},
        "original": cell.spec.original.to_dict(),
        "expanded": cell.spec.expanded.to_dict(),
        "camera_ids": list(cell.camera_ids),
        "point_ids": list(cell.point_ids),
        "coverage_point_ids": list(cell.coverage_point_ids),
        "selection_log": [
            {"camera_id": cid, "visibility": rec.visibility, "reason": rec.reason}
            for cid, rec in sorted(cell.selection_log.items())
        ],
        "artifacts": {"sparse": SPARSE_DIR, "points": POINTS_PLY},
    }


def cell_from_dict(doc: dict) -> CellDataset:
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc.get('version')!r}")
    try:
        spec = CellSpec(
            int(doc["cell"]["row"]),
            int(doc["cell"]["col"]),
            GroundRect.from_dict(doc["original"]),
            GroundRect.from_dict(doc["expanded"]),
        )
        log = {
            int(e["camera_id"]): SelectionRecord(
                None if e["visibility"] is None else float(e["visibility"]), e["reason"]
            )
            for e in doc.get("selection_log", [])
        }
        return CellDataset(
            spec,
            tuple(doc["camera_ids"]),
            tuple(doc["point_ids"]),
            log,
            tuple(doc.get("coverage_point_ids", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest: {exc!r}") from None


def write_points_ply(positions: np.ndarray, colors: np.ndarray, path: Path) -> None:
    """Point cloud in the layout 3DGS reads for initialisation."""
    dtype = [(n, "<f4") for n in ("x", "y", "z", "nx", "ny", "nz")] + [
        (n, "u1") for n in ("red", "green", "blue")
    ]
    el = np.zeros(len(positions), dtype=dtype)
    for k, n in enumerate("xyz"):
        el[n] = positions[:, k]
    for k, n in enumerate(("red", "green", "blue")):
        el[n] = colors[:, k]
    PlyData([PlyElement.describe(el, "vertex")], byte_order="<").write(str(path))


def read_points_ply(path) -> tuple[np.ndarray, np.ndarray]:
    v = PlyData.read(str(path))["vertex"].data
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    col = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.uint8)
    return pos.reshape(-1, 3), col.reshape(-1, 3)


def _atomic_write_json(doc: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fid:
        json.dump(doc, fid, indent=2)
        fid.write("\n")
    os.replace(tmp, path)


def write_cell_dataset(cell: CellDataset, directory, bundle: Optional[SceneBundle] = None) -> Path:
    """Write the manifest (and, given the parent bundle, the data subset)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if bundle is not None:
            missing_c = set(cell.camera_ids) - set(bundle.camera_index)
            missing_p = set(cell.point_ids) - set(bundle.point_index)
            if missing_c or missing_p:
                raise ManifestError(
                    f"cell references ids absent from the bundle: cameras {sorted(missing_c)[:5]}, "
                    f"points {sorted(missing_p)[:5]}"
                )
            save_colmap_sparse(bundle.subset(cell.camera_ids, cell.point_ids), directory / SPARSE_DIR)
            rows = [bundle.point_index[p] for p in cell.point_ids]
            write_points_ply(bundle.point_positions[rows].reshape(-1, 3),
                             bundle.point_colors[rows].reshape(-1, 3), directory / POINTS_PLY)
        path = directory / MANIFEST_NAME
        _atomic_write_json(cell_to_dict(cell), path)
    except OSError as exc:
        raise ManifestError(f"cannot write cell dataset to {directory}: {exc}") from None
    return path


def load_cell_dataset(directory, bundle: Optional[SceneBundle] = None) -> CellDataset:
    """Read a cell directory; ids are checked against ``bundle`` when given."""
    directory = Path(directory)
    path = directory / MANIFEST_NAME if directory.is_dir() else directory
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"no manifest at {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    cell = cell_from_dict(doc)
    if bundle is None and (directory / SPARSE_DIR / "images.bin").exists():
        local = read_images_binary(directory / SPARSE_DIR / "images.bin")
        unknown = sorted(set(cell.camera_ids) - {img[0] for img in local})
        if unknown:
            raise ManifestError(f"{path}: camera ids {unknown[:10]} missing from {SPARSE_DIR}")
    if bundle is not None:
        unknown_c = sorted(set(cell.camera_ids) - set(bundle.camera_index))
        unknown_p = sorted(set(cell.point_ids) - set(bundle.point_index))
        if unknown_c or unknown_p:
            raise ManifestError(
                f"{path}: unknown camera ids {unknown_c[:10]} / point ids {unknown_p[:10]}"
            )
    return cell
