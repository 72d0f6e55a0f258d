"""Command-line driver: ``synth``, ``optimize``, ``eval`` and ``export``.

Exit codes: 0 success, 2 bad input or configuration, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .core import Splats, as_splats
from .diagnostics import DiagRecord, emit_report
from .optimizer import NumericalError, initialize_splats
from .pipeline import build_problem, diagnose, run
from .scene_io import (FormatError, OptimizationConfig, config_from_dict, export_transforms, load_camera_file,
                       load_cameras_json, load_proxy_ply)
from .synth import make_facing_planes, make_plane, make_vds_sphere, read_labels_csv, write_scene

log = logging.getLogger("camsplat")

EXIT_INPUT, EXIT_NUMERIC = 2, 3

SCENES = {"vds-sphere": make_vds_sphere, "plane": make_plane, "facing-planes": make_facing_planes}


class UsageError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"expected key=value, got {item!r}")
        out[key.strip()] = _parse_value(val)
    return out


def merged_config(args) -> OptimizationConfig:
    """Config file, then ``--set`` overrides, then dedicated flags."""
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            base = json.load(f)
        if not isinstance(base, dict):
            raise FormatError(f"{args.config}: config must be a JSON object")
    base.update(_pairs(getattr(args, "set", None)))
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        base["iterations"] = args.iterations
    return config_from_dict(base)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json_atomic(doc: dict, path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_log_csv(rows, path) -> None:
    """Per-iteration loss breakdown; timings live in the manifest so the file is reproducible."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "image", "directional", "boundary", "total", "mean_coverage", "min_coverage"])
        for r in rows:
            b = r.losses
            w.writerow([r.iteration, repr(b.image), repr(b.directional), repr(b.boundary), repr(b.total),
                        repr(r.mean_coverage), repr(r.min_coverage)])


def _inputs(args, *names) -> dict:
    out = {}
    for name in names:
        p = getattr(args, name, None)
        if p:
            out[name] = {"path": str(p), "sha256": sha256_file(p)}
    return out


def _manifest(command, cfg, inputs, threads, timings) -> dict:
    return {"command": command, "version": __version__, "seed": cfg.seed, "threads": threads,
            "config": cfg.to_dict(), "inputs": inputs, "wall_clock_s": timings}


def _load_labels(args):
    return read_labels_csv(args.labels) if getattr(args, "labels", None) else None


def cmd_synth(args) -> int:
    params = _pairs(args.param)
    if args.seed is not None:
        params["seed"] = args.seed
    try:
        scene = SCENES[args.kind](**params)
    except TypeError as e:
        raise UsageError(f"bad parameter for {args.kind}: {e}") from e
    write_scene(scene, args.out)
    log.info("wrote %d points to %s", len(scene.proxy), args.out)
    return 0


def cmd_optimize(args) -> int:
    t0 = time.perf_counter()
    cfg = merged_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    proxy = load_proxy_ply(args.proxy)
    fixed = load_cameras_json(args.cameras) if args.cameras else []
    problem = build_problem(proxy, cfg, _load_labels(args))
    t1 = time.perf_counter()

    def snapshot(it, splats):
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        export_transforms(splats, problem.globals_, snap / f"transforms_{it:06d}.json")

    init = initialize_splats(problem.bounds, cfg.n_new_splats, cfg.seed, fixed)
    result, records = run(problem, init=init, threads=args.threads, snapshot=snapshot)
    t2 = time.perf_counter()
    export_transforms(result.splats, problem.globals_, out / "transforms.json")
    write_log_csv(result.log, out / "log.csv")
    emit_report(records, out)
    timings = {"setup": t1 - t0, "optimize": t2 - t1, "total": time.perf_counter() - t0}
    write_json_atomic(_manifest("optimize", cfg, _inputs(args, "proxy", "cameras", "config", "labels"),
                                args.threads, timings), out / "manifest.json")
    if records:
        log.info("final coverage ratio %.3f", records[-1].coverage_ratio)
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cfg = merged_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    proxy = load_proxy_ply(args.proxy)
    cams = as_splats(load_camera_file(args.cameras))
    problem = build_problem(proxy, cfg, _load_labels(args))
    if len(cams):
        rec = diagnose(problem, cams, 0)
    else:
        log.warning("empty camera set")
        rec = DiagRecord(0, 0.0, {})
    emit_report([rec], out)
    timings = {"total": time.perf_counter() - t0}
    write_json_atomic(_manifest("eval", cfg, _inputs(args, "proxy", "cameras", "config", "labels"), 1, timings),
                      out / "manifest.json")
    print(f"coverage_ratio {rec.coverage_ratio!r}")
    return 0


def cmd_export(args) -> int:
    cfg = merged_config(args)
    splats: Splats = as_splats(load_camera_file(args.cameras))
    out = Path(args.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "transforms.json"
    export_transforms(splats, cfg.splat_globals(), out)
    return 0


def _common(p, out_required=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (1 is bit-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="camsplat", description="Camera placement by camera-splat optimization.")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic proxy scene")
    p.add_argument("kind", choices=sorted(SCENES))
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="scene parameter, e.g. n_points=500")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="optimize camera splats for a proxy")
    p.add_argument("proxy")
    p.add_argument("--cameras", help="initial capture cameras (kept fixed)")
    p.add_argument("--labels", help="per-point group labels CSV (index,group)")
    p.add_argument("--iterations", type=int)
    _common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="coverage and Voronoi statistics for a fixed camera set")
    p.add_argument("proxy")
    p.add_argument("--cameras", required=True)
    p.add_argument("--labels")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="convert camera records to a transforms file")
    p.add_argument("--cameras", required=True)
    _common(p)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        ap.error("--threads must be >= 1")
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"camsplat: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as e:
        print(f"camsplat: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
