"""Core scene containers: cameras, sparse points, bundles and Gaussian models."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

QUAT_TOL = 1e-9


def qvec_to_rotmat(q: Sequence[float]) -> np.ndarray:
    """Rotation matrix of a unit quaternion in (w, x, y, z) order."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ]
    )


def rotmat_to_qvec(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`qvec_to_rotmat`; returns the quaternion with w >= 0."""
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R, dtype=float).flat
    K = np.array(
        [
            [Rxx - Ryy - Rzz, 0, 0, 0],
            [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
            [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
            [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
        ]
    ) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class CameraView:
    """One registered pinhole view; pose maps world points into the camera frame."""

    id: int
    image_name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple[float, float, float, float]
    translation: tuple[float, float, float]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.id}: image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"camera {self.id}: focal lengths must be positive")
        norm = float(np.linalg.norm(self.rotation))
        if abs(norm - 1.0) > QUAT_TOL:
            raise ValueError(f"camera {self.id}: quaternion norm {norm!r} is not 1")

    @cached_property
    def R(self) -> np.ndarray:
        return qvec_to_rotmat(self.rotation)

    @cached_property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=float)

    @cached_property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    @property
    def image_area(self) -> float:
        return float(self.width * self.height)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World -> camera frame for an (N, 3) array."""
        return np.asarray(points, dtype=float) @ self.R.T + self.t


@dataclass(frozen=True)
class SparsePoint:
    id: int
    position: tuple[float, float, float]
    color: tuple[int, int, int]
    track: frozenset[int]

    def __post_init__(self):
        if not self.track:
            raise ValueError(f"point {self.id}: empty track")


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """Cameras, sparse points and the world rotation already applied to both."""

    cameras: tuple[CameraView, ...]
    points: tuple[SparsePoint, ...]
    world_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "points", tuple(self.points))
        wr = np.array(self.world_rotation, dtype=float)
        wr.setflags(write=False)
        object.__setattr__(self, "world_rotation", wr)
        if len({c.id for c in self.cameras}) != len(self.cameras):
            raise ValueError("duplicate camera ids")
        if len({p.id for p in self.points}) != len(self.points):
            raise ValueError("duplicate point ids")
        if wr.shape != (3, 3) or not np.allclose(wr @ wr.T, np.eye(3), atol=1e-9, rtol=0):
            raise ValueError("world_rotation is not orthonormal")
        known = {c.id for c in self.cameras}
        for p in self.points:
            if not p.track <= known:
                missing = sorted(p.track - known)
                raise ValueError(f"point {p.id}: track references unknown cameras {missing}")

    def __eq__(self, other):
        if not isinstance(other, SceneBundle):
            return NotImplemented
        return (
            self.cameras == other.cameras
            and self.points == other.points
            and np.array_equal(self.world_rotation, other.world_rotation)
        )

    __hash__ = None

    @cached_property
    def camera_index(self) -> dict[int, CameraView]:
        return {c.id: c for c in self.cameras}

    @cached_property
    def point_index(self) -> dict[int, int]:
        """Point id -> row in :attr:`point_positions`."""
        return {p.id: i for i, p in enumerate(self.points)}

    @cached_property
    def camera_ids(self) -> np.ndarray:
        return np.array([c.id for c in self.cameras], dtype=np.int64)

    @cached_property
    def camera_centers(self) -> np.ndarray:
        if not self.cameras:
            return np.zeros((0, 3))
        return np.stack([c.center for c in self.cameras])

    @cached_property
    def point_ids(self) -> np.ndarray:
        return np.array([p.id for p in self.points], dtype=np.int64)

    @cached_property
    def point_positions(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3))
        return np.array([p.position for p in self.points], dtype=float)

    @cached_property
    def point_colors(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3), dtype=np.uint8)
        return np.array([p.color for p in self.points], dtype=np.uint8)

    @cached_property
    def points_by_camera(self) -> dict[int, list[int]]:
        """Camera id -> rows of the points it observes."""
        out: dict[int, list[int]] = {c.id: [] for c in self.cameras}
        for row, p in enumerate(self.points):
            for cid in p.track:
                out[cid].append(row)
        return out

    def subset(self, camera_ids: Iterable[int], point_ids: Iterable[int]) -> "SceneBundle":
        """Sub-bundle; point tracks are restricted to the kept cameras.

        Points whose restricted track would be empty are dropped, so the
        result always satisfies the bundle invariants.
        """
        cams = set(camera_ids)
        wanted = set(point_ids)
        points = []
        for p in self.points:
            if p.id in wanted:
                track = p.track & cams
                if track:
                    points.append(replace(p, track=frozenset(track)))
        return SceneBundle(
            cameras=tuple(c for c in self.cameras if c.id in cams),
            points=tuple(points),
            world_rotation=self.world_rotation,
        )


SH_REST = 45


@dataclass(eq=False)
class GaussianModel:
    """Per-Gaussian attribute arrays in the 3DGS storage convention (float32).

    ``opacity`` holds pre-sigmoid logits and ``scales`` are log-space.
    """

    positions: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    opacity: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        n = len(self.positions)
        shapes = {
            "positions": 3,
            "sh_dc": 3,
            "sh_rest": SH_REST,
            "opacity": 1,
            "scales": 3,
            "rotations": 4,
        }
        for name, width in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float32).reshape(-1, width)
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf")
            setattr(self, name, arr)

    @property
    def count(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other):
        if not isinstance(other, GaussianModel):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    __hash__ = None

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.positions, self.sh_dc, self.sh_rest, self.opacity, self.scales, self.rotations)

    def take(self, rows) -> "GaussianModel":
        return GaussianModel(*(a[rows] for a in self.arrays()))

    @classmethod
    def empty(cls) -> "GaussianModel":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, SH_REST)),
            np.zeros((0, 1)), np.zeros((0, 3)), np.zeros((0, 4)),
        )

    @classmethod
    def concatenate(cls, models: Sequence["GaussianModel"]) -> "GaussianModel":
        if not models:
            return cls.empty()
        cols = zip(*(m.arrays() for m in models))
        return cls(*(np.concatenate(c, axis=0) for c in cols))
