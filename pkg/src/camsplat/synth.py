"""Synthetic proxy scenes for tests and ablations."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import fibonacci_directions
from .scene_io import ProxyPoint, default_radii, write_proxy_ply


@dataclass
class SyntheticScene:
    proxy: list
    labels: list
    kind: str
    params: dict = field(default_factory=dict)


def _points(pos, nrm, vds):
    radii = default_radii(pos)
    return [ProxyPoint(pos[i], nrm[i], float(vds[i]), float(radii[i])) for i in range(len(pos))]


def make_vds_sphere(n_points: int = 500, radius: float = 1.0, vds_high: float = 4.0,
                    vds_low: float = 2.0, seed: int = 0) -> SyntheticScene:
    """Fibonacci sphere; the z >= 0 hemisphere gets ``vds_high``, the rest ``vds_low``.

    The lattice is deterministic, so ``seed`` has no effect on the output.
    """
    if n_points < 8:
        raise ValueError("need at least 8 points")
    if not vds_high > vds_low >= 0:
        raise ValueError("need vds_high > vds_low >= 0")
    nrm = fibonacci_directions(n_points).directions
    pos = radius * nrm
    high = pos[:, 2] >= 0.0
    vds = np.where(high, vds_high, vds_low)
    labels = ["high" if h else "low" for h in high]
    return SyntheticScene(_points(pos, nrm, vds), labels, "vds-sphere",
                          dict(n_points=n_points, radius=radius, vds_high=vds_high,
                               vds_low=vds_low, seed=seed))


def _plane_xy(n_points, extent, seed):
    side = int(round(np.sqrt(n_points)))
    if side * side == n_points:
        g = np.linspace(0.0, extent, side)
        x, y = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([x.ravel(), y.ravel()])
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, extent, size=(n_points, 2))


def make_plane(n_points: int = 400, extent: float = 1.0, vds: float = 1.0, seed: int = 0) -> SyntheticScene:
    """Points on z=0 over [0, extent]^2 with +Z normals (a grid when n is square)."""
    if n_points < 4:
        raise ValueError("need at least 4 points")
    xy = _plane_xy(n_points, extent, seed)
    pos = np.column_stack([xy, np.zeros(len(xy))])
    nrm = np.tile([0.0, 0.0, 1.0], (len(xy), 1))
    return SyntheticScene(_points(pos, nrm, np.full(len(xy), vds)), ["all"] * len(xy), "plane",
                          dict(n_points=n_points, extent=extent, vds=vds, seed=seed))


def make_facing_planes(gap: float = 0.5, n_points: int = 400, vds: float = 1.0, seed: int = 0,
                       extent: float = 1.0) -> SyntheticScene:
    """Plane at z=0 facing up and a copy at z=gap facing down (``n_points`` each)."""
    if not gap > 0:
        raise ValueError("gap must be positive")
    xy = _plane_xy(n_points, extent, seed)
    n = len(xy)
    pos = np.vstack([np.column_stack([xy, np.zeros(n)]), np.column_stack([xy, np.full(n, gap)])])
    nrm = np.vstack([np.tile([0.0, 0.0, 1.0], (n, 1)), np.tile([0.0, 0.0, -1.0], (n, 1))])
    # radius from in-plane spacing; the gap must not inflate it
    r = default_radii(np.column_stack([xy, np.zeros(n)]))
    pts = [ProxyPoint(pos[i], nrm[i], float(vds), float(r[i % n])) for i in range(2 * n)]
    labels = ["lower"] * n + ["upper"] * n
    return SyntheticScene(pts, labels, "facing-planes",
                          dict(gap=gap, n_points=n_points, vds=vds, seed=seed, extent=extent))


def write_labels_csv(labels, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "group"])
        for i, g in enumerate(labels):
            w.writerow([i, g])


def read_labels_csv(path) -> list:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [r["group"] for r in sorted(rows, key=lambda r: int(r["index"]))]


def write_scene(scene: SyntheticScene, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_proxy_ply(scene.proxy, out / "proxy.ply")
    write_labels_csv(scene.labels, out / "labels.csv")
