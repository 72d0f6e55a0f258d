"""Image loss, coverage weights, directional and boundary regularizers.

All gradients are analytic. By default the optimizer's gradient is assembled
as image + boundary terms for the centres and the directional term for the
axes (projected onto each axis' tangent plane), so the regularizer only steers
orientations. ``exact=True`` additionally includes the directional term's
dependence on the centres, directly and through the coverage weights, which
gives the true gradient of the total loss.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .core import DirectionBasis, SplatGlobals, Splats
from .renderer import BatchForward, backward_batch, forward_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    image: float
    directional: float
    boundary: float

    @property
    def total(self) -> float:
        return self.image + self.directional + self.boundary


@dataclass(frozen=True)
class SceneBounds:
    center: np.ndarray
    proxy_radius: float
    r_min: float
    r_max: float

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError("bounds need 0 < r_min < r_max")


def image_loss(images, targets, masks):
    """Masked per-camera MSE averaged over cameras with any unmasked direction.

    Returns ``(loss, upstream)`` where ``upstream[i, d] = dL/dI[i, d]``.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    m = np.atleast_2d(np.asarray(masks, dtype=bool))
    gt = np.asarray(targets, dtype=np.float64).reshape(-1)
    k_eff = m.sum(axis=1)
    used = k_eff > 0
    if not used.all():
        log.warning("%d point camera(s) with no unmasked direction excluded from the image loss",
                    int((~used).sum()))
    n = int(used.sum())
    upstream = np.zeros_like(images)
    if n == 0:
        return 0.0, upstream
    diff = np.where(m, images - gt[:, None], 0.0)
    per_cam = np.where(used, np.sum(diff * diff, axis=1) / np.maximum(k_eff, 1), 0.0)
    loss = float(np.sum(per_cam) / n)
    upstream = np.where(used[:, None], 2.0 * diff / (n * np.maximum(k_eff, 1))[:, None], 0.0)
    return loss, upstream


def _coverage_raw(images, targets, masks):
    m = np.asarray(masks, dtype=bool)
    k_eff = m.sum(axis=-1)
    tot = np.sum(np.where(m, images, 0.0), axis=-1)
    return np.where(k_eff > 0, tot / (np.maximum(k_eff, 1) * np.asarray(targets)), 0.0), k_eff


def coverage(image, target, mask) -> float:
    """Mean of ``I / target`` over unmasked directions, clamped to [0, 1]."""
    raw, _ = _coverage_raw(np.asarray(image, dtype=np.float64), float(target), mask)
    return float(np.clip(raw, 0.0, 1.0))


def coverage_batch(images, targets, masks) -> np.ndarray:
    raw, _ = _coverage_raw(np.asarray(images, dtype=np.float64), np.asarray(targets, dtype=np.float64), masks)
    return np.clip(raw, 0.0, 1.0)


def coverage_weights(coverages, gamma: float) -> np.ndarray:
    """``(1 - c)^gamma`` normalized to sum 1; all zeros when every camera is covered."""
    c = np.asarray(coverages, dtype=np.float64)
    raw = (1.0 - c) ** gamma
    total = raw.sum()
    if total <= 0.0:
        return np.zeros_like(c)
    return raw / total


@dataclass
class DirectionalTerm:
    value: float
    axis_grad: np.ndarray  # (M, 3), tangential
    center_grad: np.ndarray  # (M, 3)
    weight_grad: np.ndarray  # (B,) dL/dw_i


def directional_regularizer(splats: Splats, positions, weights, masks, lambda_reg: float,
                            basis: DirectionBasis | None = None, nearest=None,
                            eps_depth: float = 1e-9) -> DirectionalTerm:
    """``lambda * sum_i sum_j m_ij w_i cos(r_j, v_ij)``, ``v_ij`` from camera i to splat j.

    ``m_ij`` is camera i's occlusion flag at the basis direction nearest to
    ``v_ij``. Pass ``nearest`` (B, M) to reuse a lookup from the renderer.
    Frozen splats contribute to the value but get zero gradients.
    """
    P = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    rel = splats.centers[None, :, :] - P[:, None, :]
    dist = np.sqrt(np.sum(rel * rel, axis=2))
    valid = dist > eps_depth
    v = rel / np.where(valid, dist, 1.0)[..., None]
    if nearest is None:
        nearest = basis.nearest(v)
    m = valid & np.take_along_axis(masks, nearest, axis=1)
    cos = np.sum(v * splats.axes[None, :, :], axis=2)
    mc = np.where(m, cos, 0.0)
    per_cam = np.sum(mc, axis=1)
    value = float(lambda_reg * np.sum(w * per_cam))
    coef = lambda_reg * w[:, None] * m  # (B, M)
    # d cos / d r = v (projected onto the tangent plane); d cos / d mu = (r - cos v) / dist
    g_axis_raw = np.sum(coef[..., None] * v, axis=0)
    r = splats.axes
    axis_grad = g_axis_raw - np.sum(g_axis_raw * r, axis=1, keepdims=True) * r
    inv = np.where(valid, 1.0 / np.where(valid, dist, 1.0), 0.0)
    center_grad = np.sum((coef * inv)[..., None] * (r[None, :, :] - cos[..., None] * v), axis=0)
    free = ~splats.frozen
    axis_grad = axis_grad * free[:, None]
    center_grad = center_grad * free[:, None]
    return DirectionalTerm(value, axis_grad, center_grad, lambda_reg * per_cam)


def boundary_regularizer(splats: Splats, bounds: SceneBounds, lambda_bound: float):
    """One-sided quadratic shell penalty on free splat distances from the scene centre."""
    rel = splats.centers - bounds.center
    d = np.sqrt(np.sum(rel * rel, axis=1))
    free = ~splats.frozen
    over = np.maximum(0.0, d - bounds.r_max)
    under = np.maximum(0.0, bounds.r_min - d)
    value = float(lambda_bound * np.sum(np.where(free, over * over + under * under, 0.0)))
    dl_dd = 2.0 * lambda_bound * (over - under)
    grad = np.where((free & (d > 0))[:, None], (dl_dd / np.where(d > 0, d, 1.0))[:, None] * rel, 0.0)
    return value, grad


@dataclass
class PointCameraBatch:
    positions: np.ndarray  # (B, 3)
    masks: np.ndarray  # (B, K) bool
    targets: np.ndarray  # (B,)

    def __len__(self):
        return len(self.positions)

    def subset(self, idx) -> "PointCameraBatch":
        return PointCameraBatch(self.positions[idx], self.masks[idx], self.targets[idx])


@dataclass
class LossResult:
    breakdown: LossBreakdown
    center_grad: np.ndarray  # (M, 3)
    axis_grad: np.ndarray  # (M, 3)
    coverages: np.ndarray  # (B,)
    weights: np.ndarray  # (B,)
    images: np.ndarray  # (B, K)


def _chunks(n: int, size: int):
    return [slice(i, min(n, i + size)) for i in range(0, n, size)]


def render_batch(batch: PointCameraBatch, splats: Splats, globals_: SplatGlobals,
                 basis: DirectionBasis, eps_depth: float, pool: Executor | None = None,
                 chunk: int = 8) -> list[BatchForward]:
    parts = _chunks(len(batch), chunk)

    def run(sl):
        return forward_batch(batch.positions[sl], splats, globals_, basis.directions, eps_depth)

    return list(pool.map(run, parts)) if pool is not None else [run(sl) for sl in parts]


def total_loss_and_grads(splats: Splats, batch: PointCameraBatch, globals_: SplatGlobals,
                         config, bounds: SceneBounds, basis: DirectionBasis,
                         eps_depth: float = 1e-9, pool: Executor | None = None,
                         chunk: int = 8, exact: bool = False) -> LossResult:
    """Total loss for one minibatch of point cameras and its gradients.

    With ``exact=True`` the centre gradient also carries the directional
    term's dependence on splat centres (directly and through the coverage
    weights); the default leaves the directional term to the axes.
    """
    if len(batch) == 0:
        raise ValueError("empty point-camera batch")
    fws = render_batch(batch, splats, globals_, basis, eps_depth, pool, chunk)
    images = np.concatenate([fw.intensity for fw in fws])
    nearest = np.concatenate([fw.nearest_direction() for fw in fws])
    masks, gt = batch.masks, batch.targets

    l_img, up = image_loss(images, gt, masks)

    raw_cov, k_eff = _coverage_raw(images, gt, masks)
    cov = np.clip(raw_cov, 0.0, 1.0)
    gamma = config.coverage_gamma
    raw_w = (1.0 - cov) ** gamma
    s_w = raw_w.sum()
    w = raw_w / s_w if s_w > 0 else np.zeros_like(raw_w)

    reg = directional_regularizer(splats, batch.positions, w, masks, config.lambda_reg,
                                  nearest=nearest, eps_depth=eps_depth)
    if exact and s_w > 0 and config.lambda_reg > 0:
        # chain dL/dw -> raw weights -> clamped coverage -> rendered intensities
        g = reg.weight_grad
        dl_draw = (g - np.sum(w * g)) / s_w
        live = (raw_cov < 1.0) & (k_eff > 0)
        dcov = np.where(live, -gamma * np.where(live, 1.0 - cov, 1.0) ** (gamma - 1.0), 0.0)
        per_cam = dl_draw * dcov / (np.maximum(k_eff, 1) * gt)
        up = up + np.where(masks, per_cam[:, None], 0.0)

    l_bound, g_bound = boundary_regularizer(splats, bounds, config.lambda_bound)

    parts = _chunks(len(batch), chunk)

    def back(i):
        return backward_batch(fws[i], up[parts[i]])

    idx = range(len(fws))
    grads = list(pool.map(back, idx)) if pool is not None else [back(i) for i in idx]
    g_center = np.zeros_like(splats.centers)
    for g in grads:
        g_center += g
    g_center += g_bound
    if exact:
        g_center += reg.center_grad
    free = ~splats.frozen
    g_center *= free[:, None]
    return LossResult(LossBreakdown(l_img, reg.value, l_bound), g_center, reg.axis_grad, cov, w, images)
