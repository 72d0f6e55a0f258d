"""Opacity rendering of camera splats at omnidirectional point cameras.

Each splat has a fixed angular footprint ``exp(-d^2 / 2s^2)`` around its
direction as seen from the point camera (truncated at ``3s``), gated by the
splat's field-of-view cone. Per direction sample the accumulated opacity is
``1 - prod_j (1 - a_j)``, which equals front-to-back alpha compositing of
unit-colour splats in any depth order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import DirectionBasis, PointCamera, SplatGlobals, Splats, angular_distance, as_splats

ALPHA_MAX = 0.99
CUTOFF_SIGMAS = 3.0


def visibility(splat, pc_position, globals_: SplatGlobals) -> int:
    """1 if the point camera lies inside the splat's FoV cone (boundary inclusive)."""
    v = np.asarray(pc_position, dtype=np.float64) - splat.center
    v = v / np.linalg.norm(v)
    return int(angular_distance(splat.axis, v) <= 0.5 * globals_.fov)


def footprint(direction, splat, pc_position, globals_: SplatGlobals) -> float:
    u = splat.center - np.asarray(pc_position, dtype=np.float64)
    u = u / np.linalg.norm(u)
    delta = angular_distance(direction, u)
    s = globals_.angular_scale
    if delta > CUTOFF_SIGMAS * s:
        return 0.0
    return float(np.exp(-delta * delta / (2.0 * s * s)))


def composite_front_to_back(alphas, depths) -> float:
    """Sequential ``sum_j T_j a_j`` over splats sorted by increasing depth."""
    alphas = np.asarray(alphas, dtype=np.float64)
    order = np.argsort(np.asarray(depths), kind="stable")
    acc, trans = 0.0, 1.0
    for j in order:
        acc += trans * alphas[j]
        trans *= 1.0 - alphas[j]
    return acc


def accumulate(alphas: np.ndarray, axis: int = -1) -> np.ndarray:
    """``1 - prod(1 - a)`` along ``axis``; factors are sorted first so the
    result is bit-identical under any permutation of the inputs."""
    f = np.sort(1.0 - np.moveaxis(alphas, axis, -1), axis=-1)
    return 1.0 - np.prod(f, axis=-1)


@dataclass
class BatchForward:
    """Forward-pass state for B point cameras against M splats over K directions."""

    positions: np.ndarray  # (B, 3)
    centers: np.ndarray  # (M, 3) snapshot
    axes: np.ndarray  # (M, 3) snapshot
    dist: np.ndarray  # (B, M)
    u: np.ndarray  # (B, M, 3) unit direction point camera -> splat
    valid: np.ndarray  # (B, M) depth above eps_depth
    visible: np.ndarray  # (B, M) FoV mask (and valid)
    cosang: np.ndarray  # (B, M, K) clipped u . omega
    delta: np.ndarray  # (B, M, K) angular offsets (0 outside the footprint)
    gauss: np.ndarray  # (B, M, K) footprint values, 0 outside cutoff or invisible
    alpha: np.ndarray  # (B, M, K)
    clamped: np.ndarray  # (B, M, K) alpha hit ALPHA_MAX
    intensity: np.ndarray  # (B, K)
    globals_: SplatGlobals
    dirs: np.ndarray  # (K, 3)

    @property
    def n_skipped(self) -> np.ndarray:
        return np.sum(~self.valid, axis=1)

    def nearest_direction(self) -> np.ndarray:
        """(B, M) index of the basis sample closest to each splat direction."""
        return np.argmax(self.cosang, axis=2)


def forward_batch(positions, splats: Splats, globals_: SplatGlobals, dirs: np.ndarray,
                  eps_depth: float = 1e-9) -> BatchForward:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    c, r = splats.centers, splats.axes
    s = globals_.angular_scale
    rel = c[None, :, :] - positions[:, None, :]
    dist = np.sqrt(np.sum(rel * rel, axis=2))
    valid = dist > eps_depth
    u = rel / np.where(valid, dist, 1.0)[..., None]
    # angle between axis and splat->camera vector (-u)
    fov_cos = np.clip(-np.sum(u * r[None, :, :], axis=2), -1.0, 1.0)
    visible = valid & (np.arccos(fov_cos) <= 0.5 * globals_.fov)

    cosang = (u[..., 0, None] * dirs[:, 0] + u[..., 1, None] * dirs[:, 1]
              + u[..., 2, None] * dirs[:, 2])
    np.clip(cosang, -1.0, 1.0, out=cosang)
    cut = CUTOFF_SIGMAS * s
    cand = visible[..., None] & (cosang >= np.cos(cut) - 1e-9)
    delta = np.zeros_like(cosang)
    gauss = np.zeros_like(cosang)
    d = np.arccos(cosang[cand])
    inside = d <= cut
    g = np.where(inside, np.exp(-d * d / (2.0 * s * s)), 0.0)
    delta[cand] = np.where(inside, d, 0.0)
    gauss[cand] = g
    alpha = globals_.opacity * gauss
    clamped = alpha > ALPHA_MAX
    if clamped.any():
        alpha = np.minimum(alpha, ALPHA_MAX)
    intensity = accumulate(alpha, axis=1)
    return BatchForward(positions, c.copy(), r.copy(), dist, u, valid, visible, cosang, delta,
                        gauss, alpha, clamped, intensity, globals_, dirs)


def backward_batch(fw: BatchForward, upstream: np.ndarray, per_camera: bool = False) -> np.ndarray:
    """Gradient of ``sum_{b,d} upstream[b,d] * I[b,d]`` w.r.t. splat centres.

    FoV visibility, the footprint cutoff and the alpha clamp are constants of
    the forward pass. Returns (M, 3), or (B, M, 3) when ``per_camera``.
    """
    g = fw.globals_
    s2 = g.angular_scale ** 2
    upstream = np.asarray(upstream, dtype=np.float64).reshape(fw.intensity.shape)
    trans = 1.0 - fw.intensity  # prod_k (1 - a_k)
    active = (fw.gauss > 0.0) & ~fw.clamped
    # dI/da_j = prod_{k != j} (1 - a_k)
    dI_da = np.where(active, trans[:, None, :] / (1.0 - fw.alpha), 0.0)
    d, c = fw.delta, fw.cosang
    sin_d = np.sqrt(np.maximum(0.0, 1.0 - c * c))
    small = d < 1e-6
    ratio = np.where(small, 1.0 + d * d / 6.0, d / np.where(small, 1.0, sin_d))
    # a = alpha0 * exp(-d^2/2s^2), d = arccos(c): da/dc = alpha0 * G * (d / sin d) / s^2
    coef = upstream[:, None, :] * dI_da * (g.opacity * fw.gauss / s2) * ratio
    w_dir = coef @ fw.dirs  # (B, M, 3): sum_d coef * omega_d
    w_cos = np.sum(coef * c, axis=2)  # (B, M)
    inv = np.where(fw.valid, 1.0 / np.where(fw.valid, fw.dist, 1.0), 0.0)
    grad = (w_dir - w_cos[..., None] * fw.u) * inv[..., None]
    return grad if per_camera else np.sum(grad, axis=0)


@dataclass
class RenderedImage:
    """Rendered opacity of one point camera plus the per-splat intermediates.

    ``gauss[j, d]`` and ``alpha[j, d]`` are zero for splats not contributing to
    direction ``d``.
    """

    intensities: np.ndarray  # (K,)
    gauss: np.ndarray  # (M, K)
    alpha: np.ndarray  # (M, K)
    n_skipped: int
    _fw: BatchForward

    def contributors(self, d: int) -> np.ndarray:
        return np.nonzero(self.gauss[:, d] > 0.0)[0]


def render(pc: PointCamera, splats, globals_: SplatGlobals, basis: DirectionBasis,
           eps_depth: float = 1e-9) -> RenderedImage:
    sp = as_splats(splats)
    fw = forward_batch(pc.position[None, :], sp, globals_, basis.directions, eps_depth)
    return RenderedImage(fw.intensity[0], fw.gauss[0], fw.alpha[0], int(fw.n_skipped[0]), fw)


def render_backward(image: RenderedImage, upstream, pc: PointCamera, splats,
                    globals_: SplatGlobals) -> np.ndarray:
    """(M, 3) gradient of ``sum_d upstream[d] * I[d]`` w.r.t. splat centres."""
    sp = as_splats(splats)
    fw = image._fw
    if (len(sp) != len(fw.centers) or not np.array_equal(sp.centers, fw.centers)
            or not np.array_equal(sp.axes, fw.axes)
            or not np.array_equal(pc.position, fw.positions[0]) or globals_ != fw.globals_):
        raise ValueError("render_backward: image was rendered from different inputs")
    return backward_batch(fw, np.asarray(upstream, dtype=np.float64)[None, :])


def write_intensity_csv(image: RenderedImage, basis: DirectionBasis, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["direction", "wx", "wy", "wz", "intensity"])
        for d, (om, v) in enumerate(zip(basis.directions, image.intensities)):
            w.writerow([d, repr(float(om[0])), repr(float(om[1])), repr(float(om[2])), repr(float(v))])
