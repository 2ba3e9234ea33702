"""Gaussian PLY files in the attribute layout written by 3DGS trainers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from ..errors import PlySchemaError
from ..scene import SH_REST, GaussianModel

POSITION = ["x", "y", "z"]
NORMAL = ["nx", "ny", "nz"]
SH_DC = [f"f_dc_{i}" for i in range(3)]
SH_RESTS = [f"f_rest_{i}" for i in range(SH_REST)]
OPACITY = ["opacity"]
SCALE = [f"scale_{i}" for i in range(3)]
ROTATION = [f"rot_{i}" for i in range(4)]

# (model attribute, ply property names); normals are written as zeros for viewer
# compatibility and ignored on read
GROUPS = [
    ("positions", POSITION),
    ("sh_dc", SH_DC),
    ("sh_rest", SH_RESTS),
    ("opacity", OPACITY),
    ("scales", SCALE),
    ("rotations", ROTATION),
]
WRITE_ORDER = POSITION + NORMAL + SH_DC + SH_RESTS + OPACITY + SCALE + ROTATION


def write_gaussian_ply(model: GaussianModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype = [(name, "<f4") for name in WRITE_ORDER]
    vertices = np.zeros(model.count, dtype=dtype)
    for attr, names in GROUPS:
        values = getattr(model, attr)
        for k, name in enumerate(names):
            vertices[name] = values[:, k]
    el = PlyElement.describe(vertices, "vertex")
    PlyData([el], text=False, byte_order="<").write(str(path))
    return path


def _check_payload_size(ply: PlyData, path: Path) -> None:
    """Binary files with fixed-size rows must end exactly where the header says."""
    if ply.text or any(
        getattr(p, "len_dtype", None) for el in ply.elements for p in el.properties
    ):
        return
    with open(path, "rb") as fid:
        raw = fid.read()
    marker = raw.find(b"end_header")
    header_end = raw.index(b"\n", marker) + 1
    expected = header_end + sum(el.count * el.data.dtype.itemsize for el in ply.elements)
    if len(raw) != expected:
        raise PlySchemaError(
            f"{path}: header declares {expected - header_end} payload bytes, "
            f"file has {len(raw) - header_end}"
        )


def read_gaussian_ply(path) -> GaussianModel:
    path = Path(path)
    try:
        ply = PlyData.read(str(path))
    except PlyParseError as exc:
        raise PlySchemaError(f"{path}: {exc}") from None
    except (ValueError, EOFError) as exc:
        # plyfile raises bare ValueError/EOFError on short payloads
        raise PlySchemaError(f"{path}: payload does not match header ({exc})") from None
    if "vertex" not in ply:
        raise PlySchemaError(f"{path}: no 'vertex' element")
    _check_payload_size(ply, path)
    vertex = ply["vertex"]
    have = {p.name for p in vertex.properties}
    missing = [n for _, names in GROUPS for n in names if n not in have]
    if missing:
        raise PlySchemaError(f"{path}: missing attributes {missing}")
    data = vertex.data
    arrays = {
        attr: np.stack([np.asarray(data[n], dtype=np.float32) for n in names], axis=1)
        .reshape(len(data), len(names))
        for attr, names in GROUPS
    }
    return GaussianModel(**arrays)
