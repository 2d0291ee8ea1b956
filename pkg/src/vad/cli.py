"""Command-line front end: ``vad run | offsets | sdf | eval | ablate``.

Exit codes: 0 success, 2 parse or configuration error, 3 degenerate input
(including non-watertight input in signed mode), 4 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from .core import Config, DegenerateCloud, EmptyCloud, PointCloud, VadError, normalize_to_unit_box
from . import extract, grid as G, io, metrics, pipeline, udf
from .grid import SolverDiverged
from .optimize import NonFiniteEnergy
from .sdfext import PropagationStalled
from .voronoi import BudgetTooSmall, DegenerateInput

log = logging.getLogger("vad")

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_SOLVER = 0, 2, 3, 4
DEFAULT_ISOS = (0.02, 0.04, 0.06, 0.08, 0.10)
_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(VadError):
    pass


# configuration --------------------------------------------------------------

_FLAG_TO_FIELD = {
    "grid": "grid_resolution", "denoise": "denoise", "denoise_rounds": "denoise_rounds",
    "lambda_d": "lambda_d", "lambda_g": "lambda_g", "lambda_a": "lambda_a", "lambda_p": "lambda_p",
    "lr": "learning_rate", "iters": "max_iterations", "seed": "rng_seed",
    "budget": "bisector_sample_budget", "align_variant": "align_variant", "eps_grid_auto": "eps_grid_auto",
    "t": "diffusion_time_t", "epsilon": "epsilon_split",
}


def _coerce(name, raw):
    ftype = {f.name: f.type for f in dataclasses.fields(Config)}[name]
    text = str(raw).strip()
    try:
        if "bool" in str(ftype):
            low = text.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("1", "true", "yes", "on")
        if "int" in str(ftype):
            return int(text)
        if "float" in str(ftype):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {name}") from None


def read_config_file(path):
    """``key = value`` lines (Config field names; ``#`` comments)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            parser.read_string("[vad]\n" + fh.read(), source=str(path))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    names = {f.name for f in dataclasses.fields(Config)}
    out = {}
    for key, value in parser["vad"].items():
        if key not in names:
            raise ConfigError(f"{path}: unknown key {key!r}")
        out[key] = _coerce(key, value.strip().strip('"'))
    return out


def build_config(args):
    values = {}
    if getattr(args, "noisy", False):
        values.update(dataclasses.asdict(Config.noisy()))
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for flag, fname in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is None or (v is False and fname in ("denoise", "eps_grid_auto")):
            continue
        values[fname] = v
    try:
        return Config(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# subcommands ----------------------------------------------------------------

def _write_profile(path, stages, wall, cfg, extra=None):
    doc = {"stages": stages, "wall_time": wall, "config": dataclasses.asdict(cfg)}
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=float)


def cmd_run(args):
    cfg = build_config(args)
    cloud = io.read_point_cloud(args.input)
    constraints = io.read_constraints(args.constraints) if args.constraints else None
    t0 = time.perf_counter()
    res = pipeline.run_udf(cloud, cfg, constraints)
    wall = time.perf_counter() - t0
    prefix = args.output
    transform = pipeline.to_original_grid_transform(res.cloud)
    io.write_grid(res.udf.u, prefix + ".udf.raw", transform)
    positions = res.cloud.to_original(res.cloud.points)
    io.write_point_cloud(prefix + ".normals.ply", positions, normals=res.normals.vectors, fmt="ply")
    res.trace.write_csv(prefix + ".trace.csv")
    _write_profile(prefix + ".profile.json", res.timings, wall, res.config,
                   {"diagnostics": res.udf.diagnostics, "n_points": len(res.cloud),
                    "iterations": len(res.trace.rows)})
    log.info("wrote %s.{udf.raw,udf.raw.json,normals.ply,trace.csv,profile.json}", prefix)
    return EXIT_OK


def _parse_isos(text):
    try:
        isos = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad iso list {text!r}") from None
    if not isos:
        raise ConfigError("empty iso list")
    return isos


def cmd_offsets(args):
    grid, transform = io.read_grid(args.prefix + ".udf.raw")
    scale, translation = transform
    for iso in _parse_isos(args.iso):
        mesh = extract.marching_cubes(grid, iso)
        mesh = io.TriangleMesh((mesh.vertices - translation) / scale, mesh.triangles)
        path = f"{args.prefix}.offset_{iso:g}.obj"
        io.write_mesh(path, mesh)
        _, ncomp = extract.components(mesh)
        print(f"{path}: {len(mesh.triangles)} triangles, {ncomp} components")
    return EXIT_OK


def cmd_sdf(args):
    cfg = build_config(args)
    cloud = io.read_point_cloud(args.input)
    t0 = time.perf_counter()
    cloud, oriented, res, trace, cfg = pipeline.run_sdf(cloud, cfg)
    wall = time.perf_counter() - t0
    prefix = args.output
    transform = pipeline.to_original_grid_transform(cloud)
    io.write_grid(res.u, prefix + ".sdf.raw", transform)
    io.write_point_cloud(prefix + ".normals.ply", cloud.to_original(cloud.points), normals=oriented, fmt="ply")
    mesh = extract.marching_cubes(res.u, 0.0, signed=True)
    io.write_mesh(prefix + ".sdf.obj", io.TriangleMesh(cloud.to_original(mesh.vertices), mesh.triangles))
    trace.write_csv(prefix + ".trace.csv")
    stages = {k: trace.timings.get(k, 0.0) for k in ("voronoi", "sampling", "adam", "orientation",
                                                      "diffusion+integration")}
    _write_profile(prefix + ".profile.json", stages, wall, cfg, {"diagnostics": res.diagnostics})
    return EXIT_OK


def _read_reference(path):
    """Reference as a mesh (when it has faces) or a point cloud."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        return io.read_mesh(path)
    if ext == ".ply":
        ply = io.read_ply(path)
        if ply.get("face") and len(next(iter(ply["face"].values()), [])):
            return io.read_mesh(path)
    return io.read_point_cloud(path)


def cmd_eval(args):
    ref = _read_reference(args.reference)
    grid, (scale, translation) = io.read_grid(args.prefix + ".udf.raw")
    result_cloud = io.read_point_cloud(args.prefix + ".normals.ply")
    rows = []
    # normal consistency
    if isinstance(ref, PointCloud):
        if ref.gt_normals is not None and len(ref) == len(result_cloud):
            nc = metrics.normal_consistency(result_cloud.gt_normals, ref.gt_normals)
            rows += [("normal_consistency_mean", nc["mean"]), ("normal_consistency_median", nc["median"]),
                     ("normal_consistency_min", nc["min"])]
        ref_pts = ref.points
    else:
        which, _ = metrics.closest_triangle(ref, result_cloud.points)
        nc = metrics.normal_consistency(result_cloud.gt_normals, metrics.triangle_normals(ref)[which])
        rows += [("normal_consistency_mean", nc["mean"]), ("normal_consistency_median", nc["median"]),
                 ("normal_consistency_min", nc["min"])]
        ref_pts = metrics.sample_mesh(ref, args.samples, seed=args.seed).points
    cd, hd = metrics.chamfer_hausdorff(result_cloud.points * scale, ref_pts * scale)
    rows += [("chamfer_x1e3", cd), ("hausdorff_x1e3", hd)]
    # UDF against the exact distance, in normalized units
    rng = np.random.default_rng(args.seed)
    nodes = grid.node_positions()
    pick = rng.choice(len(nodes), size=min(args.nodes, len(nodes)), replace=False)
    x = nodes[pick]
    target = ref if not isinstance(ref, PointCloud) else ref.points
    if isinstance(target, io.TriangleMesh):
        target = io.TriangleMesh(target.vertices * scale + translation, target.triangles)
    else:
        target = target * scale + translation
    oracle = metrics.udf_oracle(target, x)
    u = grid.flat()[pick].astype(np.float64)
    off = oracle > grid.spacing
    err = np.abs(u - oracle)[off]
    rows += [("udf_abs_err_max", float(err.max()) if err.size else float("nan")),
             ("udf_abs_err_mean", float(err.mean()) if err.size else float("nan")),
             ("udf_abs_err_max_over_spacing", float(err.max() / grid.spacing) if err.size else float("nan"))]
    zs = np.flatnonzero(grid.flat() <= 0)
    if zs.size:
        med, iqr = udf.eikonal_stats(G.VoxelGrid(grid.data.astype(np.float64), grid.origin, grid.spacing), zs)
        rows += [("eikonal_median", med), ("eikonal_iqr", iqr)]
    out_csv = args.output or args.prefix + ".eval.csv"
    with open(out_csv, "w") as fh:
        fh.write("metric,value\n")
        for k, v in rows:
            fh.write(f"{k},{v!r}\n")
    ures = udf.UdfResult(G.VoxelGrid(grid.data.astype(np.float64), grid.origin, grid.spacing), None, zs)
    probe = udf.line_probe(ures, [-0.5, 0.0, 0.0], [0.5, 0.0, 0.0], 201)
    udf.write_probe_csv(args.prefix + ".probe.csv", probe)
    for k, v in rows:
        print(f"{k},{v!r}")
    return EXIT_OK


def cmd_ablate(args):
    cloud = io.read_point_cloud(args.input)
    if cloud.gt_normals is None:
        raise ConfigError("ablation needs an input with reference normals")
    cfg = build_config(args)
    combos = metrics.read_combos(args.combos) if args.combos else metrics.DEFAULT_COMBOS
    rows = metrics.ablation_sweep(normalize_to_unit_box(cloud), combos, cfg, seed=cfg.rng_seed)
    metrics.write_ablation_csv(args.output, rows)
    for r in rows:
        print(f"{r['lambda_a']:g},{r['lambda_d']:g},{r['lambda_g']:g},{r['mean_cos']:.4f}")
    return EXIT_OK


# argument parsing -----------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key=value file of Config fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    p.add_argument("--lambda-d", dest="lambda_d", type=float)
    p.add_argument("--lambda-g", dest="lambda_g", type=float)
    p.add_argument("--lambda-a", dest="lambda_a", type=float)
    p.add_argument("--lambda-p", dest="lambda_p", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--align-variant", dest="align_variant", choices=("orthogonal", "verbatim"))
    p.add_argument("--noisy", action="store_true", help="start from the noisy-input weights")


def make_parser():
    ap = argparse.ArgumentParser(prog="vad", description="Unsigned distance fields from unoriented point clouds.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="cloud -> normals + UDF grid")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    _add_common(p)
    p.add_argument("--grid", type=int)
    p.add_argument("--denoise", action="store_true")
    p.add_argument("--denoise-rounds", dest="denoise_rounds", type=int)
    p.add_argument("--constraints")
    p.add_argument("--eps-grid-auto", dest="eps_grid_auto", action="store_true")
    p.add_argument("--t", type=float, help="diffusion time (default h^2)")
    p.add_argument("--epsilon", type=float, help="split offset (default 1e-4 h)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("offsets", help="offset surfaces of a UDF grid")
    p.add_argument("prefix")
    p.add_argument("--iso", default=",".join(f"{v:g}" for v in DEFAULT_ISOS),
                   help="comma-separated iso values in normalized units")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_offsets)

    p = sub.add_parser("sdf", help="signed field for watertight inputs")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.add_argument("--grid", type=int)
    p.set_defaults(func=cmd_sdf)

    p = sub.add_parser("eval", help="metrics of a run against a reference")
    p.add_argument("prefix")
    p.add_argument("reference")
    p.add_argument("--output")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--nodes", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="weight ablation sweep")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--combos")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def _setup_logging():
    level = _LOG_LEVELS.get(os.environ.get("VAD_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    _setup_logging()
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        with threadpool_limits(limits=args.threads) if args.threads else contextlib.nullcontext():
            return args.func(args)
    except PropagationStalled as exc:
        print(f"error: {exc} (the signed extension requires a closed, watertight surface)", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DegenerateCloud, EmptyCloud, DegenerateInput, BudgetTooSmall) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (SolverDiverged, NonFiniteEnergy) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, io.ParseError, io.IndexOutOfRange, io.DuplicateIndex, extract.DegenerateIso,
            extract.IsoOutOfRange, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
