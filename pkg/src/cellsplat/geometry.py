"""Planar and projective geometry used by partitioning and visibility.

Coordinates follow the aligned-world convention: ``y`` is up and the ground
plane is spanned by ``x`` and ``z``. Image coordinates are pixels with the
origin at the top-left corner of the image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateGeometryError, EmptyCellError, InvertedBoxError
from .scene import CameraView, SceneBundle, SparsePoint, rotmat_to_qvec

EPS_DEPTH = 1e-6


@dataclass(frozen=True)
class GroundRect:
    """Axis-aligned rectangle on the ground plane.

    Membership is half-open, ``[min, max)``, so rectangles sharing an edge
    never both claim a point on it. The grid's outermost cells close their
    far edge (``closed_max_x`` / ``closed_max_z``) so the extreme camera still
    belongs to a cell.
    """

    min_x: float
    max_x: float
    min_z: float
    max_z: float
    closed_max_x: bool = False
    closed_max_z: bool = False

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_z < self.max_z):
            raise ValueError(f"empty or inverted rectangle {self}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def depth(self) -> float:
        return self.max_z - self.min_z

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.min_x + self.max_x), 0.5 * (self.min_z + self.max_z))

    def contains(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        in_x = (x >= self.min_x) & ((x <= self.max_x) if self.closed_max_x else (x < self.max_x))
        in_z = (z >= self.min_z) & ((z <= self.max_z) if self.closed_max_z else (z < self.max_z))
        return in_x & in_z

    def contains_rect(self, other: "GroundRect") -> bool:
        return (
            self.min_x <= other.min_x
            and other.max_x <= self.max_x
            and self.min_z <= other.min_z
            and other.max_z <= self.max_z
        )

    def scaled(self, factor: float) -> "GroundRect":
        """Concentric copy with both side lengths multiplied by ``factor``."""
        if factor == 1.0:
            return self
        cx, cz = self.center
        hx = 0.5 * self.width * factor
        hz = 0.5 * self.depth * factor
        bounds = dict(min_x=cx - hx, max_x=cx + hx, min_z=cz - hz, max_z=cz + hz)
        if factor > 1.0:
            # rounding must never shrink a grown rectangle below the original
            bounds = dict(
                min_x=min(bounds["min_x"], self.min_x), max_x=max(bounds["max_x"], self.max_x),
                min_z=min(bounds["min_z"], self.min_z), max_z=max(bounds["max_z"], self.max_z),
            )
        return replace(self, **bounds)

    def to_dict(self) -> dict:
        return {
            "min_x": self.min_x,
            "max_x": self.max_x,
            "min_z": self.min_z,
            "max_z": self.max_z,
            "closed_max_x": self.closed_max_x,
            "closed_max_z": self.closed_max_z,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundRect":
        return cls(
            float(d["min_x"]), float(d["max_x"]), float(d["min_z"]), float(d["max_z"]),
            bool(d.get("closed_max_x", False)), bool(d.get("closed_max_z", False)),
        )


@dataclass(frozen=True)
class Aabb3:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.min, self.max)):
            raise ValueError(f"inverted box {self}")

    @property
    def height(self) -> float:
        return self.max[1] - self.min[1]

    def corners(self) -> np.ndarray:
        lo, hi = np.asarray(self.min, dtype=float), np.asarray(self.max, dtype=float)
        idx = np.array([[i >> 2 & 1, i >> 1 & 1, i & 1] for i in range(8)])
        return np.where(idx == 1, hi, lo)


# corner index pairs differing in exactly one bit
BOX_EDGES = [(i, i ^ (1 << b)) for i in range(8) for b in range(3) if not i & (1 << b)]


@dataclass(frozen=True, eq=False)
class Polygon2:
    """Convex polygon in pixel coordinates, counter-clockwise when non-degenerate."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    def __eq__(self, other):
        if not isinstance(other, Polygon2):
            return NotImplemented
        return self.vertices.shape == other.vertices.shape and np.array_equal(
            self.vertices, other.vertices
        )

    __hash__ = None

    @property
    def area(self) -> float:
        return polygon_area(self)

    @classmethod
    def empty(cls) -> "Polygon2":
        return cls(np.zeros((0, 2)))


class BehindCamera:
    """Returned by :func:`project_point` when the point is not in front of the camera."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "BEHIND_CAMERA"


BEHIND_CAMERA = BehindCamera()


# ---------------------------------------------------------------------------
# projection


def project_camera_points(camera: CameraView, xc: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points (depth assumed positive)."""
    xc = np.asarray(xc, dtype=float).reshape(-1, 3)
    u = camera.fx * xc[:, 0] / xc[:, 2] + camera.cx
    v = camera.fy * xc[:, 1] / xc[:, 2] + camera.cy
    return np.stack([u, v], axis=1)


def project_points(camera: CameraView, points: np.ndarray, eps: float = EPS_DEPTH):
    """Vectorised projection; returns ``(uv, in_front)`` with NaN rows behind the camera."""
    xc = camera.to_camera(np.asarray(points, dtype=float).reshape(-1, 3))
    front = xc[:, 2] > eps
    uv = np.full((len(xc), 2), np.nan)
    if front.any():
        uv[front] = project_camera_points(camera, xc[front])
    return uv, front


def project_point(camera: CameraView, p, eps: float = EPS_DEPTH):
    uv, front = project_points(camera, np.asarray(p, dtype=float).reshape(1, 3), eps)
    if not front[0]:
        return BEHIND_CAMERA
    return uv[0]


def clip_box_near_plane(camera: CameraView, box: Aabb3, eps: float = EPS_DEPTH) -> np.ndarray:
    """Vertices (camera frame) of the box intersected with the half-space ``z >= eps``.

    Only the vertex set matters: their projection's convex hull is the
    projection of the clipped box.
    """
    xc = camera.to_camera(box.corners())
    z = xc[:, 2]
    keep = [xc[z >= eps]]
    for i, j in BOX_EDGES:
        zi, zj = z[i], z[j]
        if (zi < eps) != (zj < eps):
            s = (eps - zi) / (zj - zi)
            keep.append((xc[i] + s * (xc[j] - xc[i]))[None])
    return np.concatenate(keep, axis=0)


def project_box(camera: CameraView, box: Aabb3, eps: float = EPS_DEPTH) -> np.ndarray:
    pts = clip_box_near_plane(camera, box, eps)
    if len(pts) == 0:
        return np.zeros((0, 2))
    return project_camera_points(camera, pts)


# ---------------------------------------------------------------------------
# planar polygons


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence) -> Polygon2:
    """Andrew's monotone chain; CCW output without collinear vertices."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return Polygon2.empty()
    # lexsort keys are applied last-first: x, then y, then index
    order = np.lexsort((np.arange(len(pts)), pts[:, 1], pts[:, 0]))
    uniq = []
    for x, y in pts[order].tolist():
        if not uniq or uniq[-1] != (x, y):
            uniq.append((x, y))
    if len(uniq) <= 2:
        return Polygon2(np.array(uniq))

    lower: list = []
    for p in uniq:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(uniq):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return Polygon2(np.array(hull))


def polygon_area(poly: Polygon2) -> float:
    v = poly.vertices if isinstance(poly, Polygon2) else np.asarray(poly, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return abs(0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_half_plane(verts: list, inside, intersect) -> list:
    out = []
    n = len(verts)
    for k in range(n):
        cur, prev = verts[k], verts[k - 1]
        cin, pin = inside(cur), inside(prev)
        if cin:
            if not pin:
                out.append(intersect(prev, cur))
            out.append(cur)
        elif pin:
            out.append(intersect(prev, cur))
    return out


def _axis_clipper(axis: int, bound: float, keep_greater: bool):
    def inside(p):
        return p[axis] >= bound if keep_greater else p[axis] <= bound

    def intersect(a, b):
        t = (bound - a[axis]) / (b[axis] - a[axis])
        q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        q[axis] = bound
        return tuple(q)

    return inside, intersect


def clip_polygon_to_rect(poly: Polygon2, w: float, h: float) -> Polygon2:
    """Sutherland-Hodgman clip of a convex polygon against ``[0, w] x [0, h]``."""
    verts = [tuple(v) for v in poly.vertices.tolist()]
    if len(verts) < 3:
        # degenerate input carries no area; keep only points inside the frame
        return Polygon2(np.array([v for v in verts if 0 <= v[0] <= w and 0 <= v[1] <= h]))
    for axis, bound, greater in ((0, 0.0, True), (0, float(w), False), (1, 0.0, True), (1, float(h), False)):
        if not verts:
            break
        verts = _clip_half_plane(verts, *_axis_clipper(axis, bound, greater))
    # drop consecutive duplicates produced by vertices lying on a clip edge
    cleaned = []
    for v in verts:
        if not cleaned or cleaned[-1] != v:
            cleaned.append(v)
    if len(cleaned) > 1 and cleaned[0] == cleaned[-1]:
        cleaned.pop()
    if len(cleaned) < 3:
        return Polygon2(np.array(cleaned).reshape(-1, 2))
    return Polygon2(np.array(cleaned))


def point_in_convex_polygon(poly: Polygon2, pts: np.ndarray) -> np.ndarray:
    """Vectorised containment test (boundary counts as inside)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    v = poly.vertices
    if len(v) < 3:
        return np.zeros(len(pts), dtype=bool)
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        inside &= (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0]) >= 0
    return inside


# ---------------------------------------------------------------------------
# cell volumes


def cell_airspace_box(points_in_cell, ground_y: float, rect: GroundRect) -> Aabb3:
    """Box over ``rect`` from the ground plane up to the highest cell point."""
    pts = np.asarray(points_in_cell, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCellError("cannot build an airspace box without points")
    top = float(pts[:, 1].max())
    if top <= ground_y:
        raise InvertedBoxError(f"highest point y={top} does not rise above ground y={ground_y}")
    return Aabb3((rect.min_x, float(ground_y), rect.min_z), (rect.max_x, top, rect.max_z))


# ---------------------------------------------------------------------------
# world alignment

UP = np.array([0.0, 1.0, 0.0])


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if c >= 1.0 - 1e-15:
        return np.eye(3)
    if c <= -1.0 + 1e-15:
        # half turn about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 0.0, 1.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def estimate_up(bundle: SceneBundle) -> np.ndarray:
    """Normal of the least-squares plane through the camera centers.

    The sign is chosen so that most cameras' own up vectors (image ``-y``)
    point into the same hemisphere.
    """
    centers = bundle.camera_centers
    if len(centers) < 3:
        raise DegenerateGeometryError("need at least 3 cameras to estimate the up axis")
    centered = centers - centers.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] <= 1e-12 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometryError(
            "camera centers are collinear; pass an explicit up hint"
        )
    normal = vt[2]
    cam_up = np.stack([-c.R[1] for c in bundle.cameras])
    dots = cam_up @ normal
    votes = np.sign(dots).sum()
    if votes < 0 or (votes == 0 and dots.sum() < 0):
        normal = -normal
    return normal / np.linalg.norm(normal)


def manhattan_align(bundle: SceneBundle, up_hint: Optional[Sequence[float]] = None) -> SceneBundle:
    """Rotate the scene so the (estimated or hinted) up direction becomes +y."""
    if up_hint is not None:
        up = np.asarray(up_hint, dtype=float)
        if up.shape != (3,) or not np.isfinite(up).all() or np.linalg.norm(up) == 0:
            raise DegenerateGeometryError(f"invalid up hint {up_hint!r}")
        up = up / np.linalg.norm(up)
    else:
        up = estimate_up(bundle)
    Q = rotation_between(up, UP)
    return rotate_bundle(bundle, Q)


def rotate_bundle(bundle: SceneBundle, Q: np.ndarray) -> SceneBundle:
    """Apply world rotation ``Q`` (new = Q @ old) to poses and points."""
    Q = np.asarray(Q, dtype=float)
    cameras = []
    for c in bundle.cameras:
        q = rotmat_to_qvec(c.R @ Q.T)
        cameras.append(replace(c, rotation=tuple(float(v) for v in q)))
    positions = bundle.point_positions @ Q.T
    points = [
        SparsePoint(p.id, tuple(float(v) for v in pos), p.color, p.track)
        for p, pos in zip(bundle.points, positions)
    ]
    wr = Q @ bundle.world_rotation
    # re-orthonormalise to keep accumulated rotations within tolerance
    u, _, vt = np.linalg.svd(wr)
    return SceneBundle(tuple(cameras), tuple(points), u @ vt)
