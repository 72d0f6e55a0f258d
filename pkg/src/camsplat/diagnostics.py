"""Monte-Carlo spherical Voronoi statistics and scene coverage ratio."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import DirectionBasis, PointCamera, SplatGlobals, Splats, as_splats, normalize_rows
from .losses import coverage_batch
from .optimizer import stack_point_cameras
from .renderer import forward_batch

log = logging.getLogger(__name__)


@dataclass
class VoronoiEntry:
    areas: np.ndarray  # steradians, one per visible splat
    splat_indices: np.ndarray
    label: str = ""
    empty: bool = False

    @property
    def mean(self) -> float:
        return float(self.areas.mean()) if len(self.areas) else float("nan")

    @property
    def std(self) -> float:
        return float(self.areas.std()) if len(self.areas) else float("nan")


def visible_splats(pc: PointCamera, splats, globals_: SplatGlobals, basis: DirectionBasis,
                   eps_depth: float = 1e-9):
    """Indices and unit directions of splats whose FoV contains ``pc`` and whose
    direction falls on an unmasked basis sample."""
    sp = as_splats(splats)
    if len(sp) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3))
    fw = forward_batch(pc.position[None, :], sp, globals_, basis.directions, eps_depth)
    near = fw.nearest_direction()[0]
    ok = fw.visible[0] & pc.occlusion_mask[near]
    idx = np.nonzero(ok)[0]
    return idx, fw.u[0, idx]


def _sample_sphere(k: int, rng) -> np.ndarray:
    return normalize_rows(rng.normal(size=(k, 3)))


def voronoi_cell_areas(pc: PointCamera, splats, globals_: SplatGlobals, basis: DirectionBasis,
                       k_mc: int = 20000, seed: int = 0, label: str = "",
                       eps_depth: float = 1e-9, _tree=None) -> VoronoiEntry:
    """Per visible splat, the solid angle of its spherical Voronoi cell restricted
    to the point camera's unmasked directions, by Monte-Carlo sampling."""
    idx, dirs = visible_splats(pc, splats, globals_, basis, eps_depth)
    if len(idx) == 0:
        return VoronoiEntry(np.zeros(0), idx, label, empty=True)
    return _cell_areas(dirs, idx, pc.occlusion_mask, basis, k_mc, np.random.default_rng(seed), label, _tree)


def _cell_areas(dirs, idx, mask, basis, k_mc, rng, label, tree=None):
    samples = _sample_sphere(k_mc, rng)
    tree = tree if tree is not None else cKDTree(basis.directions)
    _, nb = tree.query(samples)
    samples = samples[mask[nb]]
    counts = np.zeros(len(idx), dtype=np.int64)
    step = 8192
    for a in range(0, len(samples), step):
        s = samples[a:a + step]
        dots = s[:, None, 0] * dirs[:, 0] + s[:, None, 1] * dirs[:, 1] + s[:, None, 2] * dirs[:, 2]
        counts += np.bincount(np.argmax(dots, axis=1), minlength=len(idx))
    return VoronoiEntry(counts / k_mc * 4.0 * np.pi, idx, label)


def voronoi_stats(pcs: Sequence[PointCamera], splats, globals_: SplatGlobals, basis: DirectionBasis,
                  labels: Sequence[str], k_mc: int = 20000, seed: int = 0,
                  eps_depth: float = 1e-9) -> list[VoronoiEntry]:
    """One entry per point camera; camera ``i`` uses the MC stream seeded by ``(seed, i)``."""
    tree = cKDTree(basis.directions)
    return [voronoi_cell_areas(pc, splats, globals_, basis, k_mc, seed=[seed, i], label=lab,
                               eps_depth=eps_depth, _tree=tree)
            for i, (pc, lab) in enumerate(zip(pcs, labels))]


def group_summary(entries: Sequence[VoronoiEntry], groups: Sequence[str]) -> dict:
    """``{group: (mean of per-camera mean area, mean of per-camera std)}``.

    Groups without any non-empty entry are omitted with a warning.
    """
    out = {}
    for g in groups:
        sel = [e for e in entries if e.label == g and not e.empty]
        if not sel:
            log.warning("no point cameras with visible splats in group %r; omitted", g)
            continue
        out[g] = (float(np.mean([e.mean for e in sel])), float(np.mean([e.std for e in sel])))
    return out


def pc_coverages(pcs: Sequence[PointCamera], splats, globals_: SplatGlobals, basis: DirectionBasis,
                 targets, eps_depth: float = 1e-9, chunk: int = 16) -> np.ndarray:
    sp = as_splats(splats)
    batch = stack_point_cameras(pcs, targets)
    out = np.zeros(len(pcs))
    for a in range(0, len(pcs), chunk):
        sl = slice(a, a + chunk)
        fw = forward_batch(batch.positions[sl], sp, globals_, basis.directions, eps_depth)
        out[sl] = coverage_batch(fw.intensity, batch.targets[sl], batch.masks[sl])
    return out


def coverage_ratio(pcs: Sequence[PointCamera], splats, globals_: SplatGlobals, basis: DirectionBasis,
                   targets, tau: float = 0.8, eps_depth: float = 1e-9) -> float:
    """Fraction of point cameras whose coverage reaches ``tau``."""
    if not len(pcs):
        raise ValueError("no point cameras")
    return float(np.mean(pc_coverages(pcs, splats, globals_, basis, targets, eps_depth) >= tau))


@dataclass
class DiagRecord:
    iteration: int
    coverage_ratio: float
    groups: dict = field(default_factory=dict)  # group -> (mean_area, std_area)


def emit_report(records: Sequence[DiagRecord], out_dir) -> None:
    """Write ``voronoi.csv`` (iteration, group, mean_area, std_area; areas in sr)
    and ``coverage.csv`` (iteration, ratio)."""
    if not records:
        raise ValueError("no diagnostics to report")
    out = Path(out_dir)
    with open(out / "voronoi.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "group", "mean_area", "std_area"])
        for r in records:
            for g in sorted(r.groups):
                mean, std = r.groups[g]
                w.writerow([r.iteration, g, repr(mean), repr(std)])
    with open(out / "coverage.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "ratio"])
        for r in records:
            w.writerow([r.iteration, repr(r.coverage_ratio)])


def median_labels(pcs: Sequence[PointCamera]) -> list[str]:
    vds = np.array([pc.vds for pc in pcs])
    med = np.median(vds)
    return ["high" if v > med else "low" for v in vds]
