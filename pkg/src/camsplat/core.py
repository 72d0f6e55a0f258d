"""Geometric primitives and the shared domain types.

Vectors are plain ``numpy`` arrays of shape ``(3,)``; helpers here validate and
normalize them. Collections of splats are kept as stacked arrays (``Splats``)
because every hot path is vectorized over splats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

UNIT_TOL = 1e-9
WORLD_UP = np.array([0.0, 1.0, 0.0])
FALLBACK_UP = np.array([1.0, 0.0, 0.0])


def vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"expected 3 components, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a}")
    return a


def unit(v) -> np.ndarray:
    """Return ``v / |v|``; raises on zero or non-finite input."""
    a = vec3(v)
    n = np.sqrt(a @ a)
    if n == 0.0:
        raise ValueError("cannot normalize a zero-length vector")
    return a / n


def normalize_rows(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero-length vector")
    return a / n


def angular_distance(a, b) -> float:
    """Angle in radians between two unit vectors (dot clamped to [-1, 1])."""
    d = float(np.dot(a, b))
    return float(np.arccos(min(1.0, max(-1.0, d))))


def look_at_frame(axis, world_up=WORLD_UP) -> np.ndarray:
    """Camera-to-world rotation whose columns are (right, up, forward).

    The third column equals ``axis``. When ``axis`` is (anti)parallel to
    ``world_up`` the +X axis is used as the up hint instead.
    """
    f = np.asarray(axis, dtype=np.float64)
    up = np.asarray(world_up, dtype=np.float64)
    if abs(f @ up) > 1.0 - 1e-6:
        up = FALLBACK_UP if abs(f @ FALLBACK_UP) <= 1.0 - 1e-6 else np.array([0.0, 0.0, 1.0])
    right = np.cross(up, f)
    right /= np.linalg.norm(right)
    true_up = np.cross(f, right)
    true_up /= np.linalg.norm(true_up)
    return np.column_stack([right, true_up, f])


@dataclass(frozen=True)
class DirectionBasis:
    """Unit direction samples shared by all omnidirectional point-camera renders."""

    directions: np.ndarray  # (K, 3)

    @property
    def k(self) -> int:
        return self.directions.shape[0]

    @property
    def solid_angle_per_sample(self) -> float:
        return 4.0 * np.pi / self.k

    def nearest(self, dirs: np.ndarray) -> np.ndarray:
        """Index of the nearest basis sample for each row of ``dirs`` (..., 3)."""
        d = self.directions
        dots = (dirs[..., None, 0] * d[:, 0] + dirs[..., None, 1] * d[:, 1]
                + dirs[..., None, 2] * d[:, 2])
        return np.argmax(dots, axis=-1)


def fibonacci_directions(k: int) -> DirectionBasis:
    """Spherical Fibonacci lattice with ``k`` points (deterministic)."""
    if k < 4:
        raise ValueError(f"need at least 4 direction samples, got {k}")
    i = np.arange(k, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / k
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden_angle = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden_angle * i
    dirs = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return DirectionBasis(normalize_rows(dirs))


@dataclass(frozen=True)
class SplatGlobals:
    """Parameters shared by every camera splat."""

    angular_scale: float = 0.4
    fov: float = 1.0
    opacity: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.angular_scale < np.pi / 2:
            raise ValueError(f"angular_scale must lie in (0, pi/2), got {self.angular_scale}")
        if not 0.0 < self.fov <= np.pi:
            raise ValueError(f"fov must lie in (0, pi], got {self.fov}")
        if not 0.0 < self.opacity < 1.0:
            raise ValueError(f"opacity must lie in (0, 1), got {self.opacity}")


@dataclass(frozen=True)
class CameraSplat:
    center: np.ndarray
    axis: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        object.__setattr__(self, "axis", unit(self.axis))


@dataclass
class Splats:
    """Stacked camera-splat state, the form the renderer and optimizer work on."""

    centers: np.ndarray  # (M, 3)
    axes: np.ndarray  # (M, 3), unit rows
    frozen: np.ndarray = field(default=None)  # (M,) bool

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(-1, 3)
        if self.frozen is None:
            self.frozen = np.zeros(len(self.centers), dtype=bool)
        self.frozen = np.asarray(self.frozen, dtype=bool).reshape(-1)
        if not (len(self.centers) == len(self.axes) == len(self.frozen)):
            raise ValueError("centers, axes and frozen flags must have equal length")

    def __len__(self) -> int:
        return len(self.centers)

    @classmethod
    def from_list(cls, splats: Iterable[CameraSplat]) -> "Splats":
        splats = list(splats)
        if not splats:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=bool))
        return cls(
            np.stack([s.center for s in splats]),
            np.stack([s.axis for s in splats]),
            np.array([s.frozen for s in splats], dtype=bool),
        )

    def to_list(self) -> list[CameraSplat]:
        return [CameraSplat(c, a, bool(f)) for c, a, f in zip(self.centers, self.axes, self.frozen)]

    def copy(self) -> "Splats":
        return Splats(self.centers.copy(), self.axes.copy(), self.frozen.copy())

    @staticmethod
    def concat(parts: Sequence["Splats"]) -> "Splats":
        return Splats(
            np.concatenate([p.centers for p in parts]) if parts else np.zeros((0, 3)),
            np.concatenate([p.axes for p in parts]) if parts else np.zeros((0, 3)),
            np.concatenate([p.frozen for p in parts]) if parts else np.zeros(0, dtype=bool),
        )


def as_splats(splats) -> Splats:
    if isinstance(splats, Splats):
        return splats
    return Splats.from_list(splats)


@dataclass(frozen=True)
class PointCamera:
    """Omnidirectional probe on the proxy surface.

    ``occlusion_mask`` has one flag per basis direction; directions below the
    surface tangent plane are always 0.
    """

    position: np.ndarray
    normal: np.ndarray
    vds: float
    occlusion_mask: np.ndarray  # (K,) bool
    index: int = -1  # proxy point index it was placed on

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "normal", unit(self.normal))
        object.__setattr__(self, "occlusion_mask", np.asarray(self.occlusion_mask, dtype=bool))
        if not (np.isfinite(self.vds) and self.vds >= 0):
            raise ValueError(f"vds must be finite and >= 0, got {self.vds}")
