import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellsplat.errors import (
    MalformedRecordError,
    ManifestError,
    MissingFileError,
    PlySchemaError,
    UnsupportedCameraModelError,
)
from cellsplat.formats import (
    load_cell_dataset,
    load_colmap_sparse,
    read_gaussian_ply,
    save_colmap_sparse,
    write_cell_dataset,
    write_gaussian_ply,
)
from cellsplat.formats.images import read_image, write_image
from cellsplat.formats.manifest import POINTS_PLY, read_points_ply
from cellsplat.geometry import GroundRect
from cellsplat.partition import CellDataset, CellSpec, SelectionRecord
from cellsplat.scene import SH_REST, CameraView, GaussianModel, SceneBundle, SparsePoint, qvec_to_rotmat, rotmat_to_qvec

# ---------------------------------------------------------------------------
# a tiny model written by hand in both COLMAP layouts

CAMERAS = [(1, "PINHOLE", 640, 480, (500.0, 510.0, 320.0, 240.0)), (2, "SIMPLE_PINHOLE", 320, 240, (250.0, 160.0, 120.0))]
IMAGES = [
    (1, (1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 1, "a.jpg"),
    (2, (0.7071067811865476, 0.0, 0.7071067811865476, 0.0), (1.0, -2.0, 3.5), 2, "b.jpg"),
]
POINTS = [
    (1, (0.5, 1.0, 4.0), (255, 0, 10), [(1, 0), (2, 0)]),
    (2, (-1.0, 0.0, 6.0), (0, 128, 255), [(1, 1)]),
    (3, (2.0, 2.0, 9.0), (7, 8, 9), [(2, 1)]),
]


def write_text_model(d, cameras=CAMERAS, images=IMAGES, points=POINTS):
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# comment"] + [f"{c} {m} {w} {h} " + " ".join(map(repr, p)) for c, m, w, h, p in cameras]
    (d / "cameras.txt").write_text("\n".join(lines) + "\n")
    lines = ["# comment"]
    for i, q, t, c, n in images:
        lines.append(f"{i} " + " ".join(map(repr, (*q, *t))) + f" {c} {n}")
        lines.append("10.0 20.0 1 30.0 40.0 -1")
    (d / "images.txt").write_text("\n".join(lines) + "\n")
    lines = ["# comment"]
    for i, xyz, rgb, track in points:
        tr = " ".join(f"{a} {b}" for a, b in track)
        lines.append(f"{i} " + " ".join(map(repr, xyz)) + " " + " ".join(map(str, rgb)) + f" 0.5 {tr}")
    (d / "points3D.txt").write_text("\n".join(lines) + "\n")
    return d


MODEL_IDS = {"SIMPLE_PINHOLE": 0, "PINHOLE": 1, "SIMPLE_RADIAL": 2, "OPENCV": 4}


def write_binary_model(d, cameras=CAMERAS, images=IMAGES, points=POINTS):
    d.mkdir(parents=True, exist_ok=True)
    b = struct.pack("<Q", len(cameras))
    for c, m, w, h, p in cameras:
        b += struct.pack("<iiQQ", c, MODEL_IDS[m], w, h) + struct.pack(f"<{len(p)}d", *p)
    (d / "cameras.bin").write_bytes(b)
    b = struct.pack("<Q", len(images))
    for i, q, t, c, n in images:
        b += struct.pack("<i4d3di", i, *q, *t, c) + n.encode() + b"\0"
        b += struct.pack("<Q", 2) + struct.pack("<ddq", 10, 20, 1) + struct.pack("<ddq", 30, 40, -1)
    (d / "images.bin").write_bytes(b)
    b = struct.pack("<Q", len(points))
    for i, xyz, rgb, track in points:
        b += struct.pack("<Q3d3Bd", i, *xyz, *rgb, 0.5) + struct.pack("<Q", len(track))
        for a, k in track:
            b += struct.pack("<ii", a, k)
    (d / "points3D.bin").write_bytes(b)
    return d


def test_text_model_field_by_field(tmp_path):
    b = load_colmap_sparse(write_text_model(tmp_path / "m"))
    assert (len(b.cameras), len(b.points)) == (2, 3)
    c1, c2 = b.cameras
    assert (c1.width, c1.height, c1.fx, c1.fy, c1.cx, c1.cy) == (640, 480, 500.0, 510.0, 320.0, 240.0)
    assert (c2.fx, c2.fy, c2.cx, c2.cy) == (250.0, 250.0, 160.0, 120.0)
    assert c2.image_name == "b.jpg" and c2.translation == (1.0, -2.0, 3.5)
    p1 = b.points[0]
    assert p1.position == (0.5, 1.0, 4.0) and p1.color == (255, 0, 10) and p1.track == {1, 2}
    np.testing.assert_array_equal(b.world_rotation, np.eye(3))


def test_binary_and_text_load_identically(tmp_path):
    t = load_colmap_sparse(write_text_model(tmp_path / "t"))
    b = load_colmap_sparse(write_binary_model(tmp_path / "b"))
    assert t == b


def test_empty_points_file(tmp_path):
    b = load_colmap_sparse(write_text_model(tmp_path / "m", points=[]))
    assert len(b.points) == 0 and len(b.cameras) == 2


def test_missing_file(tmp_path):
    d = write_text_model(tmp_path / "m")
    (d / "images.txt").unlink()
    with pytest.raises(MissingFileError):
        load_colmap_sparse(d)


def test_unsupported_camera_model(tmp_path):
    cams = [(1, "OPENCV", 640, 480, (500.0, 500.0, 320.0, 240.0, 0.1, 0.0, 0.0, 0.0)), CAMERAS[1]]
    with pytest.raises(UnsupportedCameraModelError):
        load_colmap_sparse(write_text_model(tmp_path / "t", cameras=cams))
    with pytest.raises(UnsupportedCameraModelError):
        load_colmap_sparse(write_binary_model(tmp_path / "b", cameras=cams))


def test_truncated_binary(tmp_path):
    d = write_binary_model(tmp_path / "b")
    raw = (d / "points3D.bin").read_bytes()
    (d / "points3D.bin").write_bytes(raw[:-3])
    with pytest.raises(MalformedRecordError):
        load_colmap_sparse(d)


def test_malformed_text_record(tmp_path):
    d = write_text_model(tmp_path / "m")
    (d / "cameras.txt").write_text("1 PINHOLE 640 480 500.0 nope 320 240\n")
    with pytest.raises(MalformedRecordError):
        load_colmap_sparse(d)


def test_unknown_track_camera(tmp_path):
    pts = [(1, (0.0, 0.0, 1.0), (1, 2, 3), [(9, 0)])]
    with pytest.raises(MalformedRecordError):
        load_colmap_sparse(write_text_model(tmp_path / "m", points=pts))


def test_save_then_load_both_layouts(small_scene, tmp_path):
    binary = load_colmap_sparse(save_colmap_sparse(small_scene, tmp_path / "b", binary=True))
    text = load_colmap_sparse(save_colmap_sparse(small_scene, tmp_path / "t", binary=False))
    assert binary == text
    assert len(binary.cameras) == len(small_scene.cameras)
    # quaternions are renormalised on load, so compare poses numerically
    for a, b in zip(small_scene.cameras, binary.cameras):
        np.testing.assert_allclose(a.R, b.R, atol=1e-12)
        assert a.translation == b.translation
    assert [p.position for p in binary.points] == [p.position for p in small_scene.points]


# ---------------------------------------------------------------------------
# scene types


def test_quaternion_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = qvec_to_rotmat(q)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(qvec_to_rotmat(rotmat_to_qvec(R)), R, atol=1e-12)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraView(1, "a", 10, 10, 1, 1, 5, 5, (1.0, 0.1, 0.0, 0.0), (0, 0, 0))
    with pytest.raises(ValueError):
        CameraView(1, "a", 0, 10, 1, 1, 5, 5, (1.0, 0.0, 0.0, 0.0), (0, 0, 0))
    with pytest.raises(ValueError):
        CameraView(1, "a", 10, 10, -1, 1, 5, 5, (1.0, 0.0, 0.0, 0.0), (0, 0, 0))


def test_bundle_invariants():
    cam = CameraView(1, "a", 10, 10, 1, 1, 5, 5, (1.0, 0.0, 0.0, 0.0), (0, 0, 0))
    with pytest.raises(ValueError):
        SceneBundle((cam, cam), ())
    with pytest.raises(ValueError):
        SceneBundle((cam,), (SparsePoint(1, (0, 0, 1), (0, 0, 0), frozenset({2})),))
    with pytest.raises(ValueError):
        SceneBundle((cam,), (), np.diag([1.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        SparsePoint(1, (0, 0, 1), (0, 0, 0), frozenset())


def test_subset_restricts_tracks(small_scene):
    cams = small_scene.camera_ids[:5].tolist()
    sub = small_scene.subset(cams, small_scene.point_ids.tolist())
    assert all(p.track <= set(cams) and p.track for p in sub.points)


def test_gaussian_model_rejects_nan():
    m = random_model(3)
    with pytest.raises(ValueError):
        GaussianModel(m.positions * np.nan, m.sh_dc, m.sh_rest, m.opacity, m.scales, m.rotations)


# ---------------------------------------------------------------------------
# Gaussian PLY


def random_model(n, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianModel(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), rng.normal(size=(n, SH_REST)),
        rng.normal(size=(n, 1)), rng.normal(size=(n, 3)), rng.normal(size=(n, 4)),
    )


def test_ply_roundtrip_bit_exact(tmp_path):
    m = random_model(100)
    back = read_gaussian_ply(write_gaussian_ply(m, tmp_path / "g.ply"))
    assert back == m
    for a, b in zip(m.arrays(), back.arrays()):
        assert a.tobytes() == b.tobytes()


def test_ply_empty_model(tmp_path):
    back = read_gaussian_ply(write_gaussian_ply(GaussianModel.empty(), tmp_path / "e.ply"))
    assert back.count == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 40), st.integers(0, 2**31))
def test_ply_roundtrip_property(tmp_path_factory, n, seed):
    p = tmp_path_factory.mktemp("ply") / "g.ply"
    m = random_model(n, seed)
    assert read_gaussian_ply(write_gaussian_ply(m, p)) == m


def _ply_without(path, drop):
    from plyfile import PlyData, PlyElement

    v = PlyData.read(str(path))["vertex"].data
    keep = [n for n in v.dtype.names if n != drop]
    arr = np.empty(len(v), dtype=[(n, v.dtype[n]) for n in keep])
    for n in keep:
        arr[n] = v[n]
    PlyData([PlyElement.describe(arr, "vertex")], byte_order="<").write(str(path))


def test_ply_missing_rotation_attribute(tmp_path):
    p = write_gaussian_ply(random_model(4), tmp_path / "g.ply")
    _ply_without(p, "rot_3")
    with pytest.raises(PlySchemaError, match="rot_3"):
        read_gaussian_ply(p)


def test_ply_count_mismatch(tmp_path):
    p = write_gaussian_ply(random_model(4), tmp_path / "g.ply")
    raw = p.read_bytes()
    p.write_bytes(raw.replace(b"element vertex 4", b"element vertex 5"))
    with pytest.raises(PlySchemaError):
        read_gaussian_ply(p)
    p.write_bytes(raw.replace(b"element vertex 4", b"element vertex 3"))
    with pytest.raises(PlySchemaError):
        read_gaussian_ply(p)


def test_ply_header_layout(tmp_path):
    p = write_gaussian_ply(random_model(2), tmp_path / "g.ply")
    header = p.read_bytes().split(b"end_header")[0].decode()
    assert "binary_little_endian" in header
    for name in ("x", "f_dc_0", "f_rest_44", "opacity", "scale_2", "rot_3"):
        assert f"property float {name}\n" in header


# ---------------------------------------------------------------------------
# cell manifests


def _cell(cams=(1, 2), pts=(1, 2, 3, 4, 5)):
    r = GroundRect(0.0, 1.5, -2.0, 3.0, closed_max_x=True)
    spec = CellSpec(1, 0, r, r.scaled(1.2))
    log = {c: SelectionRecord(None, "position") for c in cams}
    return CellDataset(spec, cams, pts, log)


def test_manifest_lists_exact_ids(tmp_path):
    cell = _cell()
    path = write_cell_dataset(cell, tmp_path / "c")
    doc = json.loads(path.read_text())
    assert doc["version"] == 1
    assert doc["camera_ids"] == [1, 2] and doc["point_ids"] == [1, 2, 3, 4, 5]
    assert load_cell_dataset(tmp_path / "c") == cell


def test_empty_cell_manifest(tmp_path):
    cell = _cell((), ())
    write_cell_dataset(cell, tmp_path / "c")
    back = load_cell_dataset(tmp_path / "c")
    assert back == cell and back.camera_ids == ()


def test_manifest_unknown_camera(tmp_path, small_scene):
    write_cell_dataset(_cell((1, 99999), ()), tmp_path / "c")
    with pytest.raises(ManifestError):
        load_cell_dataset(tmp_path / "c", small_scene)
    with pytest.raises(ManifestError):
        write_cell_dataset(_cell((1, 99999), ()), tmp_path / "d", small_scene)


def test_manifest_with_data_subset(tmp_path, small_scene):
    cams = tuple(small_scene.camera_ids[:6].tolist())
    pts = tuple(small_scene.point_ids[:40].tolist())
    cell = _cell(cams, pts)
    d = tmp_path / "c"
    write_cell_dataset(cell, d, small_scene)
    assert load_cell_dataset(d) == cell
    sub = load_colmap_sparse(d / "sparse/0")
    assert {c.id for c in sub.cameras} == set(cams)
    pos, col = read_points_ply(d / POINTS_PLY)
    rows = [small_scene.point_index[p] for p in pts]
    np.testing.assert_array_equal(pos, small_scene.point_positions[rows].astype(np.float32))
    np.testing.assert_array_equal(col, small_scene.point_colors[rows])


def test_manifest_is_relocatable(tmp_path, small_scene):
    cell = _cell(tuple(small_scene.camera_ids[:3].tolist()), ())
    write_cell_dataset(cell, tmp_path / "a", small_scene)
    (tmp_path / "a").rename(tmp_path / "b")
    assert load_cell_dataset(tmp_path / "b") == cell
    assert str(tmp_path) not in (tmp_path / "b" / "manifest.json").read_text()


def test_manifest_bad_version_and_json(tmp_path):
    d = tmp_path / "c"
    write_cell_dataset(_cell(), d)
    doc = json.loads((d / "manifest.json").read_text())
    doc["version"] = 2
    (d / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_cell_dataset(d)
    (d / "manifest.json").write_text("{")
    with pytest.raises(ManifestError):
        load_cell_dataset(d)
    with pytest.raises(ManifestError):
        load_cell_dataset(tmp_path / "nowhere")


# ---------------------------------------------------------------------------
# images


def test_image_roundtrip_quantizes(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(7, 9, 3))
    back = read_image(write_image(img, tmp_path / "x.png"))
    assert back.shape == (7, 9, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_missing_image(tmp_path):
    with pytest.raises(MissingFileError):
        read_image(tmp_path / "nope.png")
