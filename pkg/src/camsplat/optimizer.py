"""Splat initialization and the minibatched Adam loop."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import DirectionBasis, PointCamera, Splats, as_splats, fibonacci_directions, normalize_rows
from .losses import LossBreakdown, PointCameraBatch, SceneBounds, total_loss_and_grads
from .pointcam import targets_for
from .scene_io import OptimizationConfig, proxy_arrays

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class NumericalError(RuntimeError):
    pass


def _due(it: int, every: int) -> bool:
    return bool(every) and it % every == 0


def scene_bounds(proxy, factors=(1.1, 2.5)) -> SceneBounds:
    pos = proxy_arrays(proxy).positions
    c = pos.mean(axis=0)
    radius = float(np.max(np.linalg.norm(pos - c, axis=1)))
    if radius <= 0:
        raise ValueError("degenerate proxy: all points coincide")
    return SceneBounds(c, radius, factors[0] * radius, factors[1] * radius)


def _tangent_basis(a: np.ndarray):
    """Two unit vectors orthogonal to each row of ``a`` (M, 3)."""
    helper = np.where(np.abs(a[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = normalize_rows(np.cross(a, helper))
    t2 = np.cross(a, t1)
    return t1, t2


def initialize_splats(bounds: SceneBounds, n: int, seed: int = 0, fixed=(),
                      max_perturb_deg: float = 10.0) -> Splats:
    """``n`` free splats on the mid-boundary sphere looking roughly at the centre,
    followed by the ``fixed`` splats (frozen, unchanged)."""
    if n < 1:
        raise ValueError("need at least one new splat")
    rng = np.random.default_rng(seed)
    dirs = normalize_rows(rng.normal(size=(n, 3)))
    radius = 0.5 * (bounds.r_min + bounds.r_max)
    centers = bounds.center + radius * dirs
    axes = -dirs
    tilt = np.deg2rad(max_perturb_deg) * rng.uniform(size=n)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    if max_perturb_deg > 0:
        t1, t2 = _tangent_basis(axes)
        t = np.cos(phase)[:, None] * t1 + np.sin(phase)[:, None] * t2
        axes = normalize_rows(np.cos(tilt)[:, None] * axes + np.sin(tilt)[:, None] * t)
    new = Splats(centers, axes, np.zeros(n, dtype=bool))
    fixed = as_splats(fixed)
    if len(fixed):
        fixed = Splats(fixed.centers, fixed.axes, np.ones(len(fixed), dtype=bool))
        return Splats.concat([new, fixed])
    return new


def initialize_coincident(bounds: SceneBounds, n: int, seed: int = 0, jitter: float = 1e-3) -> Splats:
    """``n`` free splats sharing one position on the mid-boundary sphere and one
    axis aimed at the centre.

    ``jitter`` (fraction of the proxy radius) displaces the centres by a seeded
    isotropic offset; with ``jitter=0`` every splat receives identical
    gradients forever and the set can never separate.
    """
    rng = np.random.default_rng(seed)
    d = normalize_rows(rng.normal(size=(1, 3)))[0]
    radius = 0.5 * (bounds.r_min + bounds.r_max)
    center = bounds.center + radius * d
    centers = np.repeat(center[None, :], n, axis=0)
    if jitter > 0:
        centers = centers + jitter * bounds.proxy_radius * rng.normal(size=(n, 3))
    axes = np.repeat(-d[None, :], n, axis=0)
    return Splats(centers, axes, np.zeros(n, dtype=bool))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, lr, unit_keys=("axes",),
              index_map: np.ndarray | None = None):
    """One bias-corrected Adam update; rows under ``unit_keys`` are renormalized.

    ``lr`` is a float or a dict keyed like ``params``. Returns ``(params, state)``
    as new objects.
    """
    for k, g in grads.items():
        bad = ~np.all(np.isfinite(g), axis=-1)
        if bad.any():
            row = int(np.nonzero(bad)[0][0])
            splat = int(index_map[row]) if index_map is not None else row
            raise NumericalError(f"non-finite gradient for splat {splat} ({k})")
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = BETA1 * state.m[k] + (1.0 - BETA1) * g
        v = BETA2 * state.v[k] + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1 ** t)
        v_hat = v / (1.0 - BETA2 ** t)
        step_lr = lr[k] if isinstance(lr, dict) else lr
        q = p - step_lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if k in unit_keys:
            q = normalize_rows(q)
        new_p[k], new_m[k], new_v[k] = q, m, v
    return new_p, AdamState(new_m, new_v, t)


class EpochSampler:
    """Minibatches without replacement; reshuffled every epoch.

    The last batch of an epoch may be smaller than ``batch_size`` so that every
    index is visited exactly once per epoch.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._perm = np.zeros(0, dtype=np.int64)
        self._pos = 0
        self.epoch = 0

    def next(self) -> np.ndarray:
        if self._pos >= len(self._perm):
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
            self.epoch += 1
        out = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += len(out)
        return out


def stack_point_cameras(pcs: Sequence[PointCamera], targets) -> PointCameraBatch:
    return PointCameraBatch(
        np.array([pc.position for pc in pcs]).reshape(-1, 3),
        np.array([pc.occlusion_mask for pc in pcs], dtype=bool),
        np.asarray(targets, dtype=np.float64),
    )


@dataclass
class LogRow:
    iteration: int
    losses: LossBreakdown
    mean_coverage: float
    min_coverage: float


@dataclass
class OptimizeResult:
    splats: Splats
    log: list = field(default_factory=list)


def optimize(proxy, pcs: Sequence[PointCamera], fixed, config: OptimizationConfig,
             init: Splats | None = None, threads: int = 1,
             callback: Callable[[int, Splats], None] | None = None) -> OptimizeResult:
    """Run ``config.iterations`` Adam steps over free splat centres and axes.

    ``callback(iteration, splats)`` fires before the first step (iteration 0),
    every ``config.diag_every`` and ``config.snapshot_every`` iterations, and
    after the last one.
    """
    if not pcs:
        raise ValueError("no point cameras")
    bounds = scene_bounds(proxy, config.boundary)
    globals_ = config.splat_globals()
    basis = fibonacci_directions(config.direction_samples)
    eps_depth = 1e-4 * bounds.proxy_radius
    if init is None:
        splats = initialize_splats(bounds, config.n_new_splats, config.seed, fixed)
    else:
        splats = init.copy()
    all_batch = stack_point_cameras(pcs, targets_for(pcs, globals_, config))
    eligible = np.nonzero(all_batch.masks.any(axis=1))[0]
    if len(eligible) == 0:
        raise ValueError("every point camera is fully occluded")
    if len(eligible) < len(pcs):
        log.warning("%d fully occluded point camera(s) excluded from batching", len(pcs) - len(eligible))

    free_idx = np.nonzero(~splats.frozen)[0]
    params = {"centers": splats.centers[free_idx].copy(), "axes": splats.axes[free_idx].copy()}
    state = AdamState.zeros_like(params)
    lrs = {"centers": config.lr_position * bounds.proxy_radius, "axes": config.lr_axis}
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    sampler = EpochSampler(len(eligible), config.batch_size, np.random.default_rng(seeds[1]))

    result = OptimizeResult(splats.copy())
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    T = config.iterations
    try:
        if callback is not None:
            callback(0, splats.copy())
        for it in range(1, T + 1):
            batch = all_batch.subset(eligible[sampler.next()])
            res = total_loss_and_grads(splats, batch, globals_, config, bounds, basis,
                                       eps_depth=eps_depth, pool=pool)
            if not np.isfinite(res.breakdown.total):
                raise NumericalError(f"non-finite total loss at iteration {it}")
            grads = {"centers": res.center_grad[free_idx], "axes": res.axis_grad[free_idx]}
            try:
                params, state = adam_step(params, grads, state, lrs, index_map=free_idx)
            except NumericalError as e:
                raise NumericalError(f"iteration {it}: {e}") from e
            splats.centers[free_idx] = params["centers"]
            splats.axes[free_idx] = params["axes"]
            result.log.append(LogRow(it, res.breakdown, float(res.coverages.mean()),
                                     float(res.coverages.min())))
            if callback is not None and (it == T or _due(it, config.diag_every) or _due(it, config.snapshot_every)):
                callback(it, splats.copy())
    finally:
        if pool is not None:
            pool.shutdown()
    result.splats = splats
    return result
