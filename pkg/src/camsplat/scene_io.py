"""Reading proxy geometry and cameras, writing configs and camera transforms."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from plyfile import PlyData, PlyElement
from scipy.spatial import cKDTree

from .core import CameraSplat, SplatGlobals, Splats, as_splats, look_at_frame, normalize_rows

log = logging.getLogger(__name__)


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProxyPoint:
    position: np.ndarray
    normal: np.ndarray
    vds: float = 1.0
    radius: float = 1.0


@dataclass
class ProxyArrays:
    positions: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3)
    vds: np.ndarray  # (N,)
    radii: np.ndarray  # (N,)

    def __len__(self):
        return len(self.positions)


def proxy_arrays(proxy) -> ProxyArrays:
    if isinstance(proxy, ProxyArrays):
        return proxy
    proxy = list(proxy)
    return ProxyArrays(
        np.array([p.position for p in proxy], dtype=np.float64).reshape(-1, 3),
        np.array([p.normal for p in proxy], dtype=np.float64).reshape(-1, 3),
        np.array([p.vds for p in proxy], dtype=np.float64),
        np.array([p.radius for p in proxy], dtype=np.float64),
    )


def default_radii(positions: np.ndarray) -> np.ndarray:
    """Half the median nearest-neighbour distance, broadcast to every point."""
    if len(positions) < 2:
        return np.ones(len(positions))
    d, _ = cKDTree(positions).query(positions, k=2)
    return np.full(len(positions), 0.5 * float(np.median(d[:, 1])))


def load_proxy_ply(path) -> list[ProxyPoint]:
    ply = PlyData.read(str(path))
    if "vertex" not in ply:
        raise FormatError(f"{path}: no vertex element")
    v = ply["vertex"].data
    names = v.dtype.names or ()
    for prop in ("x", "y", "z", "nx", "ny", "nz"):
        if prop not in names:
            raise FormatError(f"{path}: missing vertex property '{prop}'")
    if len(v) == 0:
        raise FormatError(f"{path}: empty vertex list")
    pos = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    nrm = normalize_rows(np.column_stack([v["nx"], v["ny"], v["nz"]]).astype(np.float64))
    vds = np.asarray(v["vds"], dtype=np.float64) if "vds" in names else np.ones(len(v))
    radius = np.asarray(v["radius"], dtype=np.float64) if "radius" in names else default_radii(pos)
    if not np.all(np.isfinite(vds)) or np.any(vds < 0):
        raise FormatError(f"{path}: vds must be finite and non-negative")
    if np.any(radius <= 0):
        raise FormatError(f"{path}: radius must be positive")
    return [ProxyPoint(pos[i], nrm[i], float(vds[i]), float(radius[i])) for i in range(len(v))]


def write_proxy_ply(proxy, path, binary: bool = True, with_radius: bool = True) -> None:
    pa = proxy_arrays(proxy)
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8"), ("nx", "f8"), ("ny", "f8"), ("nz", "f8"), ("vds", "f8")]
    if with_radius:
        fields.append(("radius", "f8"))
    arr = np.empty(len(pa), dtype=fields)
    for i, k in enumerate("xyz"):
        arr[k] = pa.positions[:, i]
        arr["n" + k] = pa.normals[:, i]
    arr["vds"] = pa.vds
    if with_radius:
        arr["radius"] = pa.radii
    el = PlyElement.describe(arr, "vertex")
    PlyData([el], text=not binary, byte_order="<").write(str(path))


def load_cameras_json(path) -> list[CameraSplat]:
    """Initial-capture cameras, ``[{"position": [...], "forward": [...]}, ...]``; all frozen."""
    with open(path) as f:
        records = json.load(f)
    if not isinstance(records, list):
        raise FormatError(f"{path}: expected a JSON array of camera records")
    out = []
    for i, r in enumerate(records):
        try:
            pos, fwd = r["position"], r["forward"]
        except (KeyError, TypeError) as e:
            raise FormatError(f"{path}: camera {i} lacks position/forward") from e
        fwd = np.asarray(fwd, dtype=np.float64)
        if fwd.shape != (3,) or np.linalg.norm(fwd) == 0.0:
            raise FormatError(f"{path}: camera {i} has a zero-length or malformed forward vector")
        out.append(CameraSplat(pos, fwd, frozen=True))
    return out


def transforms_document(splats, globals_: SplatGlobals) -> dict:
    s = as_splats(splats)
    frames = []
    for c, a, fz in zip(s.centers, s.axes, s.frozen):
        m = np.eye(4)
        m[:3, :3] = look_at_frame(a)
        m[:3, 3] = c
        frames.append({"transform_matrix": m.tolist(), "fixed": bool(fz)})
    return {"camera_angle_x": float(globals_.fov), "frames": frames}


def export_transforms(splats, globals_: SplatGlobals, path) -> None:
    """Write camera-to-world matrices; column 3 of the rotation is the optical axis."""
    doc = transforms_document(splats, globals_)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_transforms(path) -> list[CameraSplat]:
    doc = json.loads(Path(path).read_text())
    out = []
    for i, fr in enumerate(doc.get("frames", [])):
        m = np.asarray(fr["transform_matrix"], dtype=np.float64)
        if m.shape != (4, 4):
            raise FormatError(f"{path}: frame {i} matrix is not 4x4")
        out.append(CameraSplat(m[:3, 3], m[:3, 2], frozen=bool(fr.get("fixed", False))))
    return out


def load_camera_file(path) -> list[CameraSplat]:
    """Accept either the camera-record array or a transforms document."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "frames" in doc:
        return load_transforms(path)
    return load_cameras_json(path)


@dataclass
class OptimizationConfig:
    n_new_splats: int = 100
    direction_samples: int = 256
    angular_scale: float = 0.4
    fov: float = 1.0
    opacity: float = 0.1
    vdsf_coeffs: list = field(default_factory=lambda: [1.0, 0.0, 0.0, 0.0])
    vdsf_clamp: list = field(default_factory=lambda: [1.0, 5.0])
    lambda_reg: float = 0.05
    lambda_bound: float = 10.0
    coverage_gamma: float = 2.0
    batch_size: int = 32
    iterations: int = 1000
    lr_position: float = 0.01  # x proxy radius
    lr_axis: float = 0.02
    boundary: list = field(default_factory=lambda: [1.1, 2.5])  # x proxy radius
    n_point_cameras: int = 200
    eps_normal: float = 0.5  # x median proxy point radius
    eps_self: float = 2.0  # x median proxy point radius
    seed: int = 0
    snapshot_every: int = 0
    diag_every: int = 100
    k_mc: int = 20000
    coverage_tau: float = 0.8

    def validate(self) -> "OptimizationConfig":
        for name in ("n_new_splats", "batch_size", "n_point_cameras", "k_mc"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("iterations", "snapshot_every", "diag_every"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.direction_samples < 4:
            raise ConfigError("direction_samples must be >= 4")
        if len(self.vdsf_coeffs) != 4:
            raise ConfigError("vdsf_coeffs needs exactly 4 values")
        if len(self.vdsf_clamp) != 2 or len(self.boundary) != 2:
            raise ConfigError("vdsf_clamp and boundary take two values")
        v_min, v_max = self.vdsf_clamp
        if v_min < 1 or v_max < v_min:
            raise ConfigError("vdsf_clamp must satisfy 1 <= v_min <= v_max")
        if not 0 < self.opacity < 1:
            raise ConfigError("opacity must lie in (0, 1)")
        if self.opacity * v_max >= 1:
            raise ConfigError(
                f"unreachable target intensity: opacity*v_max = {self.opacity * v_max:g} >= 1")
        if not 0 < self.boundary[0] < self.boundary[1]:
            raise ConfigError("boundary factors must satisfy 0 < R_min < R_max")
        for name in ("lambda_reg", "lambda_bound"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("coverage_gamma", "lr_position", "lr_axis", "eps_normal", "eps_self", "coverage_tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        try:
            self.splat_globals()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def splat_globals(self) -> SplatGlobals:
        return SplatGlobals(self.angular_scale, self.fov, self.opacity)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_INT_KEYS = {"n_new_splats", "direction_samples", "batch_size", "iterations", "n_point_cameras",
             "seed", "snapshot_every", "diag_every", "k_mc"}


def config_from_dict(d: dict) -> OptimizationConfig:
    known = {f.name for f in dataclasses.fields(OptimizationConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    vals = {}
    for k, v in d.items():
        if k in _INT_KEYS:
            if isinstance(v, bool) or float(v) != int(v):
                raise ConfigError(f"{k} must be an integer")
            v = int(v)
        elif isinstance(v, list):
            v = [float(x) for x in v]
        else:
            v = float(v)
        vals[k] = v
    return OptimizationConfig(**vals).validate()


def load_config(path) -> OptimizationConfig:
    with open(path) as f:
        d = json.load(f)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(d)


def save_config(cfg: OptimizationConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
