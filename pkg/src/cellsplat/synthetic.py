"""Synthetic aerial scenes and a z-buffered point renderer.

Scenes are small stand-ins for a drone capture: a textured ground plane with
box buildings, observed by oblique pinhole cameras flying at roughly constant
height. Everything is seeded and deterministic.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .geometry import project_points, rotate_bundle
from .scene import CameraView, GaussianModel, SceneBundle, SparsePoint, qvec_to_rotmat, rotmat_to_qvec

SH_C0 = 0.28209479177387814


def look_at(center, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera ``(R, t)`` for a camera at ``center`` looking at ``target``.

    Camera axes follow COLMAP: x right, y down, z forward.
    """
    c, p, u = (np.asarray(v, float) for v in (center, target, up))
    f = p - c
    f /= np.linalg.norm(f)
    down = -(u - (u @ f) * f)
    n = np.linalg.norm(down)
    if n < 1e-9:
        raise ValueError("view direction is parallel to the up vector")
    down /= n
    right = np.cross(down, f)
    R = np.stack([right, down, f])
    return R, -R @ c


def make_camera(cid: int, center, target, width=160, height=120, focal=100.0, name=None) -> CameraView:
    R, t = look_at(center, target)
    return CameraView(
        id=cid,
        image_name=name or f"img_{cid:05d}.png",
        width=width,
        height=height,
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        rotation=tuple(rotmat_to_qvec(R)),
        translation=tuple(t),
    )


def observe(cameras: Sequence[CameraView], positions: np.ndarray, max_depth: Optional[float] = None) -> list[set]:
    """Per-point set of camera ids whose image contains the point (no occlusion test)."""
    tracks = [set() for _ in range(len(positions))]
    for cam in cameras:
        uv, front = project_points(cam, positions)
        ok = front & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
        if max_depth is not None:
            ok &= cam.to_camera(positions)[:, 2] <= max_depth
        for k in np.flatnonzero(ok):
            tracks[k].add(cam.id)
    return tracks


def bundle_from_arrays(cameras, positions, colors, tracks, point_id_start: int = 1) -> SceneBundle:
    """Points with empty tracks are dropped."""
    points = []
    pid = point_id_start
    for p, col, tr in zip(positions, colors, tracks):
        if tr:
            points.append(SparsePoint(pid, tuple(map(float, p)), tuple(int(c) for c in col), frozenset(tr)))
        pid += 1
    return SceneBundle(tuple(cameras), tuple(points), np.eye(3))


def _texture(p: np.ndarray, hue: np.ndarray) -> np.ndarray:
    base = 0.5 + 0.25 * np.sin(0.21 * p[:, [0]] + np.array([0.0, 2.1, 4.2])) * np.cos(0.17 * p[:, [2]])
    return np.clip(255.0 * (0.6 * base + 0.4 * hue), 0, 255).astype(np.uint8)


def aerial_scene(
    n_cameras: int = 200,
    n_points: int = 10_000,
    extent: float = 200.0,
    altitude: float = 30.0,
    n_buildings: int = 12,
    seed: int = 0,
    image_size: tuple[int, int] = (160, 120),
    focal: float = 140.0,
    misalign: bool = True,
) -> SceneBundle:
    """Ground plane plus box buildings under a jittered grid of oblique cameras.

    Ground is ``y = 0`` before misalignment; with ``misalign`` the whole scene
    is rotated by a random rotation, as an unaligned SfM output would be.
    Returns ``n_points`` observed points when the cameras cover enough of the
    ground (they do at the defaults); sparse rigs return fewer.
    """
    rng = np.random.default_rng(seed)
    half = extent / 2.0
    side = int(np.ceil(np.sqrt(n_cameras)))
    grid = (np.arange(side) + 0.5) / side * extent - half
    gx, gz = np.meshgrid(grid, grid, indexing="ij")
    slots = np.stack([gx.ravel(), gz.ravel()], 1)[rng.permutation(side * side)[:n_cameras]]
    slots += rng.uniform(-0.3, 0.3, slots.shape) * (extent / side)
    cameras = []
    for k, (x, z) in enumerate(slots):
        yaw = rng.uniform(0, 2 * np.pi)
        h = altitude * rng.uniform(0.9, 1.1)
        reach = 0.8 * h
        target = (x + reach * np.cos(yaw), 0.0, z + reach * np.sin(yaw))
        cameras.append(make_camera(k + 1, (x, h, z), target, *image_size, focal=focal))

    n_b = n_buildings
    b_center = rng.uniform(-0.75 * half, 0.75 * half, (n_b, 2))
    b_half = rng.uniform(0.02, 0.05, (n_b, 2)) * extent
    b_height = rng.uniform(0.1, 0.4, n_b) * altitude
    b_hue = rng.uniform(0, 1, (n_b, 3))
    # oversample; unobserved candidates are discarded below
    n_cand = int(n_points * 1.2) + 10
    n_build = n_cand // 3 if n_b else 0
    n_ground = n_cand - n_build

    ground = np.column_stack(
        [rng.uniform(-0.95 * half, 0.95 * half, n_ground), np.zeros(n_ground), rng.uniform(-0.95 * half, 0.95 * half, n_ground)]
    )
    g_col = _texture(ground, np.full((n_ground, 3), 0.5))
    parts, cols = [ground], [g_col]
    if n_build:
        which = rng.integers(0, n_b, n_build)
        u = rng.uniform(-1, 1, (n_build, 2))
        on_roof = rng.uniform(size=n_build) < 0.4
        # wall points: push one footprint coordinate onto the boundary
        axis = rng.integers(0, 2, n_build)
        wall = ~on_roof
        u[wall, axis[wall]] = np.sign(u[wall, axis[wall]])
        xz = b_center[which] + u * b_half[which]
        y = np.where(on_roof, b_height[which], rng.uniform(0, 1, n_build) * b_height[which])
        pts = np.column_stack([xz[:, 0], y, xz[:, 1]])
        parts.append(pts)
        cols.append(_texture(pts, b_hue[which]))
    positions = np.concatenate(parts)
    colors = np.concatenate(cols)
    order = rng.permutation(len(positions))
    positions, colors = positions[order], colors[order]

    tracks = observe(cameras, positions, max_depth=4.0 * altitude)
    seen = np.flatnonzero([bool(t) for t in tracks])[:n_points]
    bundle = bundle_from_arrays(cameras, positions[seen], colors[seen], [tracks[k] for k in seen])
    if misalign:
        q = rng.normal(size=4)
        bundle = rotate_bundle(bundle, qvec_to_rotmat(q / np.linalg.norm(q)))
    return bundle


# ---------------------------------------------------------------------------
# rendering


def gaussian_colors(model: GaussianModel) -> np.ndarray:
    """RGB in [0, 1] from the degree-0 SH coefficients."""
    return np.clip(model.sh_dc.astype(np.float64) * SH_C0 + 0.5, 0.0, 1.0)


def render_points(
    camera: CameraView,
    positions: np.ndarray,
    colors: np.ndarray,
    radius: int = 1,
    background=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Nearest-point z-buffer splat; each point covers a (2r+1)^2 pixel square.

    ``colors`` are floats in [0, 1]. Depth ties break on point order, so the
    output is deterministic.
    """
    h, w = camera.height, camera.width
    img = np.empty((h, w, 3))
    img[:] = background
    if len(positions) == 0:
        return img
    uv, front = project_points(camera, np.asarray(positions, float))
    depth = camera.to_camera(np.asarray(positions, float))[:, 2]
    idx = np.flatnonzero(front)
    if len(idx) == 0:
        return img
    px = np.floor(uv[idx]).astype(np.int64)
    offs = np.arange(-radius, radius + 1)
    du, dv = np.meshgrid(offs, offs, indexing="ij")
    u = (px[:, 0:1] + du.ravel()).ravel()
    v = (px[:, 1:2] + dv.ravel()).ravel()
    src = np.repeat(idx, du.size)
    ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u, v, src = u[ok], v[ok], src[ok]
    flat = v * w + u
    order = np.lexsort((src, depth[src], flat))
    flat, src = flat[order], src[order]
    first = np.ones(len(flat), bool)
    first[1:] = flat[1:] != flat[:-1]
    img.reshape(-1, 3)[flat[first]] = np.asarray(colors, float)[src[first]]
    return img
