"""COLMAP sparse model I/O (binary and text layouts), pinhole cameras only.

Record layouts follow COLMAP's ``src/colmap/scene/reconstruction_io.cc``.
Every registered image becomes one :class:`CameraView`; on write each view
gets its own camera record whose id equals the image id.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import MalformedRecordError, MissingFileError, UnsupportedCameraModelError
from ..scene import CameraView, SceneBundle, SparsePoint

# model id -> (name, number of params)
CAMERA_MODELS = {
    0: ("SIMPLE_PINHOLE", 3),
    1: ("PINHOLE", 4),
    2: ("SIMPLE_RADIAL", 4),
    3: ("RADIAL", 5),
    4: ("OPENCV", 8),
    5: ("OPENCV_FISHEYE", 8),
    6: ("FULL_OPENCV", 12),
    7: ("FOV", 5),
    8: ("SIMPLE_RADIAL_FISHEYE", 4),
    9: ("RADIAL_FISHEYE", 5),
    10: ("THIN_PRISM_FISHEYE", 12),
}
CAMERA_MODEL_IDS = {name: mid for mid, (name, _) in CAMERA_MODELS.items()}
SUPPORTED_MODELS = ("SIMPLE_PINHOLE", "PINHOLE")


def _intrinsics(model: str, params, camera_id: int) -> tuple[float, float, float, float]:
    if model == "SIMPLE_PINHOLE":
        f, cx, cy = params
        return f, f, cx, cy
    if model == "PINHOLE":
        fx, fy, cx, cy = params
        return fx, fy, cx, cy
    raise UnsupportedCameraModelError(
        f"camera {camera_id} uses {model}; only {', '.join(SUPPORTED_MODELS)} are supported "
        "(undistort the images first)"
    )


def _read(fid: BinaryIO, fmt: str, what: str):
    size = struct.calcsize("<" + fmt)
    data = fid.read(size)
    if len(data) != size:
        raise MalformedRecordError(f"{what}: unexpected end of file")
    return struct.unpack("<" + fmt, data)


def _read_cstring(fid: BinaryIO, what: str) -> str:
    chars = bytearray()
    while True:
        c = fid.read(1)
        if not c:
            raise MalformedRecordError(f"{what}: unterminated image name")
        if c == b"\x00":
            return chars.decode("utf-8")
        chars += c


def _count(fid: BinaryIO, what: str) -> int:
    head = fid.read(8)
    if len(head) == 0:
        return 0
    if len(head) != 8:
        raise MalformedRecordError(f"{what}: truncated header")
    return struct.unpack("<Q", head)[0]


# ---------------------------------------------------------------------------
# binary


def read_cameras_binary(path: Path) -> dict[int, tuple[str, int, int, tuple[float, ...]]]:
    cameras = {}
    with open(path, "rb") as fid:
        for _ in range(_count(fid, path.name)):
            cam_id, model_id, width, height = _read(fid, "iiQQ", path.name)
            if model_id not in CAMERA_MODELS:
                raise MalformedRecordError(f"{path.name}: unknown camera model id {model_id}")
            name, nparams = CAMERA_MODELS[model_id]
            params = _read(fid, "d" * nparams, path.name)
            cameras[cam_id] = (name, width, height, params)
        if fid.read(1):
            raise MalformedRecordError(f"{path.name}: trailing bytes after last record")
    return cameras


def read_images_binary(path: Path) -> list[tuple]:
    images = []
    with open(path, "rb") as fid:
        for _ in range(_count(fid, path.name)):
            image_id, qw, qx, qy, qz, tx, ty, tz, cam_id = _read(fid, "idddddddi", path.name)
            name = _read_cstring(fid, path.name)
            (n2d,) = _read(fid, "Q", path.name)
            fid.seek(24 * n2d, 1)
            images.append((image_id, (qw, qx, qy, qz), (tx, ty, tz), cam_id, name))
        if fid.read(1):
            raise MalformedRecordError(f"{path.name}: trailing bytes after last record")
    return images


def read_points3d_binary(path: Path) -> list[tuple]:
    points = []
    with open(path, "rb") as fid:
        for _ in range(_count(fid, path.name)):
            pid, x, y, z, r, g, b, _err = _read(fid, "QdddBBBd", path.name)
            (tlen,) = _read(fid, "Q", path.name)
            track = _read(fid, "ii" * tlen, path.name)[0::2]
            points.append((pid, (x, y, z), (r, g, b), frozenset(track)))
        if fid.read(1):
            raise MalformedRecordError(f"{path.name}: trailing bytes after last record")
    return points


# ---------------------------------------------------------------------------
# text


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fid:
        for lineno, line in enumerate(fid, 1):
            yield lineno, line.rstrip("\n")


def read_cameras_text(path: Path) -> dict[int, tuple[str, int, int, tuple[float, ...]]]:
    cameras = {}
    for lineno, line in _data_lines(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            elems = line.split()
            cam_id, model = int(elems[0]), elems[1]
            width, height = int(elems[2]), int(elems[3])
            params = tuple(float(v) for v in elems[4:])
        except (ValueError, IndexError) as exc:
            raise MalformedRecordError(f"{path.name}:{lineno}: {exc}") from None
        if model not in CAMERA_MODEL_IDS:
            raise MalformedRecordError(f"{path.name}:{lineno}: unknown camera model {model}")
        if len(params) != CAMERA_MODELS[CAMERA_MODEL_IDS[model]][1]:
            raise MalformedRecordError(f"{path.name}:{lineno}: wrong parameter count for {model}")
        cameras[cam_id] = (model, width, height, params)
    return cameras


def read_images_text(path: Path) -> list[tuple]:
    images = []
    lines = iter(_data_lines(path))
    for lineno, line in lines:
        if not line.strip() or line.startswith("#"):
            continue
        try:
            elems = line.split()
            image_id = int(elems[0])
            q = tuple(float(v) for v in elems[1:5])
            t = tuple(float(v) for v in elems[5:8])
            cam_id = int(elems[8])
            name = " ".join(elems[9:])
            if len(q) != 4 or len(t) != 3 or not name:
                raise ValueError("incomplete image record")
        except (ValueError, IndexError) as exc:
            raise MalformedRecordError(f"{path.name}:{lineno}: {exc}") from None
        # the observation line always follows, possibly empty
        obs = next(lines, None)
        if obs is not None and len(obs[1].split()) % 3:
            raise MalformedRecordError(f"{path.name}:{obs[0]}: POINTS2D not in (x, y, id) triples")
        images.append((image_id, q, t, cam_id, name))
    return images


def read_points3d_text(path: Path) -> list[tuple]:
    points = []
    for lineno, line in _data_lines(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            elems = line.split()
            pid = int(elems[0])
            xyz = tuple(float(v) for v in elems[1:4])
            rgb = tuple(int(v) for v in elems[4:7])
            float(elems[7])
            rest = elems[8:]
            if len(xyz) != 3 or len(rgb) != 3 or len(rest) % 2:
                raise ValueError("incomplete point record")
            track = frozenset(int(v) for v in rest[0::2])
        except (ValueError, IndexError) as exc:
            raise MalformedRecordError(f"{path.name}:{lineno}: {exc}") from None
        points.append((pid, xyz, rgb, track))
    return points


# ---------------------------------------------------------------------------


def _model_files(path: Path) -> tuple[str, dict[str, Path]]:
    for ext in (".bin", ".txt"):
        files = {k: path / f"{k}{ext}" for k in ("cameras", "images", "points3D")}
        if all(f.exists() for f in files.values()):
            return ext, files
    found = sorted(p.name for p in path.glob("*")) if path.is_dir() else []
    raise MissingFileError(
        f"{path}: expected cameras/images/points3D as .bin or .txt, found {found or 'nothing'}"
    )


def load_colmap_sparse(path) -> SceneBundle:
    """Load a COLMAP sparse model directory into a :class:`SceneBundle`.

    Binary files win when both layouts are present. Quaternions are
    renormalised; the world rotation starts as identity.
    """
    path = Path(path)
    ext, files = _model_files(path)
    if ext == ".bin":
        cams = read_cameras_binary(files["cameras"])
        imgs = read_images_binary(files["images"])
        pts = read_points3d_binary(files["points3D"])
    else:
        cams = read_cameras_text(files["cameras"])
        imgs = read_images_text(files["images"])
        pts = read_points3d_text(files["points3D"])

    views = []
    for image_id, q, t, cam_id, name in imgs:
        if cam_id not in cams:
            raise MalformedRecordError(f"image {image_id} references unknown camera {cam_id}")
        model, width, height, params = cams[cam_id]
        fx, fy, cx, cy = _intrinsics(model, params, cam_id)
        qn = np.asarray(q, dtype=float)
        norm = np.linalg.norm(qn)
        if not np.isfinite(norm) or norm == 0:
            raise MalformedRecordError(f"image {image_id}: invalid quaternion {q}")
        qn = tuple(float(v) for v in qn / norm)
        views.append(CameraView(image_id, name, int(width), int(height), float(fx), float(fy),
                                float(cx), float(cy), qn, tuple(float(v) for v in t)))
    views.sort(key=lambda v: v.id)

    known = {v.id for v in views}
    points = []
    for pid, xyz, rgb, track in pts:
        if not track:
            raise MalformedRecordError(f"point {pid} has an empty track")
        if not track <= known:
            raise MalformedRecordError(f"point {pid} observed by unknown images {sorted(track - known)}")
        points.append(SparsePoint(int(pid), tuple(float(v) for v in xyz),
                                  tuple(int(v) for v in rgb), track))
    points.sort(key=lambda p: p.id)
    try:
        return SceneBundle(tuple(views), tuple(points))
    except ValueError as exc:
        raise MalformedRecordError(str(exc)) from None


def _observations(bundle: SceneBundle) -> dict[int, list[tuple[float, float, int]]]:
    """Per-image 2D observations implied by the point tracks."""
    obs: dict[int, list[tuple[float, float, int]]] = {}
    positions = bundle.point_positions
    ids = bundle.point_ids
    for cam in bundle.cameras:
        rows = np.asarray(bundle.points_by_camera[cam.id], dtype=np.int64)
        xc = cam.to_camera(positions[rows]) if len(rows) else np.zeros((0, 3))
        front = xc[:, 2] > 1e-9
        z = np.where(front, xc[:, 2], 1.0)
        u = np.where(front, cam.fx * xc[:, 0] / z + cam.cx, 0.0)
        v = np.where(front, cam.fy * xc[:, 1] / z + cam.cy, 0.0)
        obs[cam.id] = [(float(a), float(b), int(pid)) for a, b, pid in zip(u, v, ids[rows])]
    return obs


def save_colmap_sparse(bundle: SceneBundle, path, binary: bool = True) -> Path:
    """Write ``bundle`` as a COLMAP model; one PINHOLE camera per image."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    obs = _observations(bundle)
    # point id -> {image id: point2D idx}
    idx2d: dict[int, dict[int, int]] = {}
    for cid, rows in obs.items():
        for k, (_, _, pid) in enumerate(rows):
            idx2d.setdefault(pid, {})[cid] = k
    if binary:
        _write_binary(bundle, path, obs, idx2d)
    else:
        _write_text(bundle, path, obs, idx2d)
    return path


def _write_binary(bundle, path, obs, idx2d):
    with open(path / "cameras.bin", "wb") as fid:
        fid.write(struct.pack("<Q", len(bundle.cameras)))
        for c in bundle.cameras:
            fid.write(struct.pack("<iiQQ", c.id, CAMERA_MODEL_IDS["PINHOLE"], c.width, c.height))
            fid.write(struct.pack("<4d", c.fx, c.fy, c.cx, c.cy))
    with open(path / "images.bin", "wb") as fid:
        fid.write(struct.pack("<Q", len(bundle.cameras)))
        for c in bundle.cameras:
            fid.write(struct.pack("<i7di", c.id, *c.rotation, *c.translation, c.id))
            fid.write(c.image_name.encode("utf-8") + b"\x00")
            fid.write(struct.pack("<Q", len(obs[c.id])))
            for u, v, pid in obs[c.id]:
                fid.write(struct.pack("<ddq", u, v, pid))
    with open(path / "points3D.bin", "wb") as fid:
        fid.write(struct.pack("<Q", len(bundle.points)))
        for p in bundle.points:
            fid.write(struct.pack("<Q3d3Bd", p.id, *p.position, *p.color, 0.0))
            track = sorted(p.track)
            fid.write(struct.pack("<Q", len(track)))
            for cid in track:
                fid.write(struct.pack("<ii", cid, idx2d[p.id][cid]))


def _write_text(bundle, path, obs, idx2d):
    with open(path / "cameras.txt", "w", encoding="utf-8") as fid:
        fid.write("# Camera list with one line of data per camera:\n")
        fid.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for c in bundle.cameras:
            fid.write(f"{c.id} PINHOLE {c.width} {c.height} {c.fx!r} {c.fy!r} {c.cx!r} {c.cy!r}\n")
    with open(path / "images.txt", "w", encoding="utf-8") as fid:
        fid.write("# Image list with two lines of data per image:\n")
        fid.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fid.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for c in bundle.cameras:
            vals = " ".join(repr(float(v)) for v in (*c.rotation, *c.translation))
            fid.write(f"{c.id} {vals} {c.id} {c.image_name}\n")
            fid.write(" ".join(f"{u!r} {v!r} {pid}" for u, v, pid in obs[c.id]) + "\n")
    with open(path / "points3D.txt", "w", encoding="utf-8") as fid:
        fid.write("# 3D point list with one line of data per point:\n")
        fid.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for p in bundle.points:
            xyz = " ".join(repr(float(v)) for v in p.position)
            rgb = " ".join(str(int(v)) for v in p.color)
            track = " ".join(f"{cid} {idx2d[p.id][cid]}" for cid in sorted(p.track))
            fid.write(f"{p.id} {xyz} {rgb} 0.0 {track}\n")
