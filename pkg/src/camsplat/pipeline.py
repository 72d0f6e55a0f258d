"""End-to-end wiring: proxy + config -> point cameras -> optimize -> diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DirectionBasis, PointCamera, SplatGlobals, Splats, as_splats, fibonacci_directions
from .diagnostics import DiagRecord, coverage_ratio, group_summary, median_labels, voronoi_stats
from .losses import SceneBounds
from .optimizer import OptimizeResult, optimize, scene_bounds
from .pointcam import build_point_cameras, farthest_point_sample, targets_for
from .scene_io import OptimizationConfig, proxy_arrays


@dataclass
class Problem:
    proxy: object
    config: OptimizationConfig
    basis: DirectionBasis
    globals_: SplatGlobals
    bounds: SceneBounds
    pcs: list
    labels: list
    targets: np.ndarray
    groups: tuple = ("high", "low")

    @property
    def eps_depth(self) -> float:
        return 1e-4 * self.bounds.proxy_radius


def build_problem(proxy, config: OptimizationConfig, labels: Sequence[str] | None = None) -> Problem:
    """Place and mask point cameras. ``labels`` are per proxy point; without them
    cameras are split into high/low groups at the median VDS."""
    pa = proxy_arrays(proxy)
    basis = fibonacci_directions(config.direction_samples)
    globals_ = config.splat_globals()
    bounds = scene_bounds(pa, config.boundary)
    r_med = float(np.median(pa.radii))
    n = min(config.n_point_cameras, len(pa))
    idx = farthest_point_sample(pa, n, config.seed)
    pcs = build_point_cameras(pa, idx, basis, config.eps_normal * r_med, config.eps_self * r_med)
    if labels is not None:
        pc_labels = [labels[pc.index] for pc in pcs]
        groups = tuple(sorted(set(labels)))
    else:
        pc_labels = median_labels(pcs)
        groups = ("high", "low")
    return Problem(pa, config, basis, globals_, bounds, pcs, pc_labels,
                   targets_for(pcs, globals_, config), groups)


def diagnose(problem: Problem, splats, iteration: int) -> DiagRecord:
    cfg = problem.config
    ratio = coverage_ratio(problem.pcs, splats, problem.globals_, problem.basis, problem.targets,
                           cfg.coverage_tau, problem.eps_depth)
    entries = voronoi_stats(problem.pcs, splats, problem.globals_, problem.basis, problem.labels,
                            cfg.k_mc, cfg.seed, problem.eps_depth)
    return DiagRecord(iteration, ratio, group_summary(entries, problem.groups))


def run(problem: Problem, fixed=(), init: Splats | None = None, threads: int = 1,
        diagnostics: bool = True, snapshot=None) -> tuple[OptimizeResult, list]:
    """Optimize and collect diagnostics records at the configured cadence.

    ``snapshot(iteration, splats)`` is called every ``snapshot_every`` iterations.
    """
    records = []
    cfg = problem.config

    def cb(it, splats):
        due = lambda every: bool(every) and it % every == 0
        if diagnostics and (it == 0 or it == cfg.iterations or due(cfg.diag_every)):
            records.append(diagnose(problem, splats, it))
        if snapshot is not None and it > 0 and due(cfg.snapshot_every):
            snapshot(it, splats)

    res = optimize(problem.proxy, problem.pcs, fixed, cfg, init=init, threads=threads, callback=cb)
    return res, records
