"""Point-camera placement, self-occlusion masks and ground-truth targets."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DirectionBasis, PointCamera, SplatGlobals
from .scene_io import ProxyArrays, proxy_arrays

log = logging.getLogger(__name__)

# proxies larger than this use the grid accelerator by default
GRID_THRESHOLD = 4000


def farthest_point_sample(proxy, n: int, seed: int = 0) -> np.ndarray:
    """Greedy max-min subset of proxy point indices.

    The first index is drawn uniformly from ``seed``; ties go to the lowest index.
    """
    pos = proxy_arrays(proxy).positions
    if not 1 <= n <= len(pos):
        raise ValueError(f"cannot sample {n} of {len(pos)} proxy points")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(pos)))
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = first
    taken = np.zeros(len(pos), dtype=bool)
    taken[first] = True
    min_d = np.sum((pos - pos[first]) ** 2, axis=1)
    for k in range(1, n):
        cand = np.where(taken, -1.0, min_d)
        nxt = int(np.argmax(cand))
        chosen[k] = nxt
        taken[nxt] = True
        min_d = np.minimum(min_d, np.sum((pos - pos[nxt]) ** 2, axis=1))
    return chosen


def _ray_disk_hits(rel_c, dirs, normals, radii, eps_self):
    """Elementwise ray/disk predicate.

    ``rel_c`` is disk centre minus ray origin. A hit needs the intersection
    with the disk plane to lie ahead of the origin by more than ``eps_self``
    and within the disk radius. Arguments broadcast against each other.
    """
    denom = dirs[..., 0] * normals[..., 0] + dirs[..., 1] * normals[..., 1] + dirs[..., 2] * normals[..., 2]
    num = rel_c[..., 0] * normals[..., 0] + rel_c[..., 1] * normals[..., 1] + rel_c[..., 2] * normals[..., 2]
    ok = np.abs(denom) > 1e-12
    t = np.where(ok, num / np.where(ok, denom, 1.0), -1.0)
    dx = t * dirs[..., 0] - rel_c[..., 0]
    dy = t * dirs[..., 1] - rel_c[..., 1]
    dz = t * dirs[..., 2] - rel_c[..., 2]
    return ok & (t > eps_self) & (dx * dx + dy * dy + dz * dz <= radii * radii)


def occlusion_hits_brute(origin, dirs, proxy: ProxyArrays, eps_self: float) -> np.ndarray:
    """(K,) bool: does each ray hit any proxy disk beyond ``eps_self``."""
    rel = proxy.positions - origin
    hits = _ray_disk_hits(rel[None, :, :], dirs[:, None, :], proxy.normals[None, :, :],
                          proxy.radii[None, :], eps_self)
    return hits.any(axis=1)


class DiskGrid:
    """Uniform grid over proxy disks for conservative ray candidate gathering.

    Disks are inserted into every cell their bounding sphere, dilated by half
    the ray marching step, overlaps. Marching a ray at that step therefore
    visits a cell holding every disk the ray can hit; the final decision uses
    the same predicate as the brute-force path.
    """

    def __init__(self, proxy: ProxyArrays, cell: float | None = None):
        self.proxy = proxy
        r = proxy.radii
        if cell is None:
            cell = 4.0 * float(np.median(r))
        self.cell = cell
        self.step = 0.5 * cell
        pad = float(r.max()) + cell
        self.lo = proxy.positions.min(axis=0) - pad
        hi = proxy.positions.max(axis=0) + pad
        self.shape = np.maximum(1, np.ceil((hi - self.lo) / cell).astype(np.int64))
        self.hi = self.lo + self.shape * cell
        reach = r + 0.5 * self.step * (1.0 + 1e-6)
        cmin = np.floor((proxy.positions - reach[:, None] - self.lo) / cell).astype(np.int64)
        cmax = np.floor((proxy.positions + reach[:, None] - self.lo) / cell).astype(np.int64)
        cmin = np.clip(cmin, 0, self.shape - 1)
        cmax = np.clip(cmax, 0, self.shape - 1)
        cells, owners = [], []
        for i in range(len(r)):
            xs = np.arange(cmin[i, 0], cmax[i, 0] + 1)
            ys = np.arange(cmin[i, 1], cmax[i, 1] + 1)
            zs = np.arange(cmin[i, 2], cmax[i, 2] + 1)
            g = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), -1).reshape(-1, 3)
            cells.append(self._flat(g))
            owners.append(np.full(len(g), i))
        cells = np.concatenate(cells)
        owners = np.concatenate(owners)
        order = np.argsort(cells, kind="stable")
        self.cell_ids = cells[order]
        self.owners = owners[order]
        n_cells = int(np.prod(self.shape))
        self.start = np.searchsorted(self.cell_ids, np.arange(n_cells), side="left")
        self.stop = np.searchsorted(self.cell_ids, np.arange(n_cells), side="right")

    def _flat(self, ijk):
        return (ijk[..., 0] * self.shape[1] + ijk[..., 1]) * self.shape[2] + ijk[..., 2]

    def candidates(self, origin, dirs):
        """Return (ray index, disk index) candidate pairs, possibly with duplicates."""
        diag = float(np.linalg.norm(self.hi - self.lo))
        far = np.linalg.norm(origin - 0.5 * (self.lo + self.hi)) + diag
        ts = np.arange(0.0, far + self.step, self.step)
        pts = origin[None, None, :] + ts[None, :, None] * dirs[:, None, :]
        ijk = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        inside = np.all((ijk >= 0) & (ijk < self.shape), axis=-1)
        ray_idx = np.broadcast_to(np.arange(len(dirs))[:, None], inside.shape)[inside]
        flat = self._flat(ijk[inside])
        pair = np.unique(ray_idx * (int(np.prod(self.shape))) + flat)
        n_cells = int(np.prod(self.shape))
        ray_idx, flat = pair // n_cells, pair % n_cells
        counts = self.stop[flat] - self.start[flat]
        rays = np.repeat(ray_idx, counts)
        starts = np.repeat(self.start[flat], counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        disks = self.owners[starts + offs]
        return rays, disks

    def hits(self, origin, dirs, eps_self: float) -> np.ndarray:
        rays, disks = self.candidates(origin, dirs)
        p = self.proxy
        rel = p.positions[disks] - origin
        h = _ray_disk_hits(rel, dirs[rays], p.normals[disks], p.radii[disks], eps_self)
        out = np.zeros(len(dirs), dtype=bool)
        out[rays[h]] = True
        return out


def occlusion_mask(position, normal, basis: DirectionBasis, proxy: ProxyArrays, eps_self: float,
                   grid: DiskGrid | None = None) -> np.ndarray:
    dirs = basis.directions
    above = dirs @ normal > 0.0
    mask = above.copy()
    if above.any():
        sub = dirs[above]
        hit = grid.hits(position, sub, eps_self) if grid is not None else \
            occlusion_hits_brute(position, sub, proxy, eps_self)
        mask[above] = ~hit
    return mask


def build_point_cameras(proxy, indices, basis: DirectionBasis, eps_normal: float, eps_self: float,
                        use_grid: bool | None = None) -> list[PointCamera]:
    """Place point cameras at ``indices`` (offset along the normal) and mask them.

    ``eps_normal`` and ``eps_self`` are in scene units.
    """
    pa = proxy_arrays(proxy)
    if use_grid is None:
        use_grid = len(pa) > GRID_THRESHOLD
    grid = DiskGrid(pa) if use_grid else None
    out = []
    for i in np.asarray(indices, dtype=np.int64):
        n = pa.normals[i]
        p = pa.positions[i] + eps_normal * n
        m = occlusion_mask(p, n, basis, pa, eps_self, grid)
        if not m.any():
            log.warning("point camera on proxy point %d is fully occluded", i)
        out.append(PointCamera(p, n, float(pa.vds[i]), m, int(i)))
    return out


def write_mask_csv(pc: PointCamera, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["direction", "flag"])
        for d, v in enumerate(pc.occlusion_mask):
            w.writerow([d, int(v)])


def vdsf(vds, coeffs=(1.0, 0.0, 0.0, 0.0), clamp=(1.0, 5.0)):
    """Clamped cubic polynomial of the view-dependency score (scalar or array)."""
    c0, c1, c2, c3 = coeffs
    v = np.asarray(vds, dtype=np.float64)
    val = c0 + v * (c1 + v * (c2 + v * c3))
    out = np.clip(val, clamp[0], clamp[1])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GroundTruthTarget:
    intensity: float


def ground_truth(pc: PointCamera, globals_: SplatGlobals, config) -> GroundTruthTarget:
    return GroundTruthTarget(vdsf(pc.vds, config.vdsf_coeffs, config.vdsf_clamp) * globals_.opacity)


def targets_for(pcs: Sequence[PointCamera], globals_: SplatGlobals, config) -> np.ndarray:
    vds = np.array([pc.vds for pc in pcs])
    return vdsf(vds, config.vdsf_coeffs, config.vdsf_clamp) * globals_.opacity
