"""Command-line entry point: ``sqdec {fit,scene,eval,plan}``.

Exit codes: 0 success, 2 bad input or arguments, 3 decomposition fell back
to a single ellipsoid (output still written), 4 planning timed out.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import tomli

from . import metrics, planner
from .decomposer import DecomposeConfig, decompose_object, hierarchical_decompose
from .geometry import PointCloud, sample_surface
from .io_scene import (
    SceneDecomposition,
    SceneNode,
    SceneObject,
    canonical_json,
    export_obj,
    load_point_cloud,
    load_scene_json,
    save_scene_json,
    split_instances,
)

EXIT_INPUT = 2
EXIT_FALLBACK = 3
EXIT_TIMEOUT = 4

log = logging.getLogger("sqdec")

# flag dest -> DecomposeConfig field ("lm." prefix: nested LMSettings field)
CONFIG_FLAGS = {
    "p": "P", "s": "S", "k": "K", "eps_exist": "eps_exist", "lpar": "lambda_par",
    "lexist": "lambda_exist", "beta": "beta", "outer_iters": "outer_iters",
    "lm_iters": "lm.max_iters", "hierarchy": "hierarchy_depth", "seed": "seed",
}


class InputError(Exception):
    pass


def _default_threads() -> int:
    try:
        return max(int(os.environ.get("SQDEC_THREADS", "1")), 1)
    except ValueError:
        return 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("decomposition config (overrides --config)")
    g.add_argument("--config", type=Path, help="TOML file with DecomposeConfig keys")
    g.add_argument("--p", type=int, help="initial primitive count")
    g.add_argument("--s", type=int, help="surface samples per primitive")
    g.add_argument("--k", type=int, help="coverage samples in the LM residual")
    g.add_argument("--eps-exist", type=float, help="pruning threshold on expected point count")
    g.add_argument("--lpar", type=float, help="parsimony weight")
    g.add_argument("--lexist", type=float, help="existence loss weight")
    g.add_argument("--beta", type=float, help="initial soft-assignment sharpness")
    g.add_argument("--outer-iters", type=int, help="assignment/refinement rounds")
    g.add_argument("--lm-iters", type=int, help="LM iterations per refinement")
    g.add_argument("--hierarchy", type=int, help="hierarchy depth (1 = flat)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help="worker threads (default $SQDEC_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args) -> DecomposeConfig:
    data = {}
    if getattr(args, "config", None) is not None:
        try:
            data = tomli.loads(args.config.read_text())
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(data) - set(DecomposeConfig.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
    data.setdefault("lm", {})
    for flag, key in CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key.startswith("lm."):
            data["lm"][key[3:]] = value
        else:
            data[key] = value
    try:
        return DecomposeConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None


def _load_cloud(path) -> PointCloud:
    try:
        return load_point_cloud(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load {path}: {exc}") from None


def _load_scene(path) -> SceneDecomposition:
    try:
        return load_scene_json(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load scene {path}: {exc}") from None


def _decompose(X, config: DecomposeConfig, threads: int):
    """Returns ``(SceneNode, fallback)``."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if config.hierarchy_depth > 1:
            tree = hierarchical_decompose(X, config, threads=threads)
            node, fallback = SceneNode.from_hierarchy(tree), tree.decomposition.fallback
        else:
            dec = decompose_object(X, config, threads)
            node, fallback = SceneNode.from_decomposition(dec), dec.fallback
    for w in caught:
        log.warning("%s", w.message)
    return node, fallback


def _leaves(node: SceneNode) -> list:
    return node.level(64)


def _summary(X, sqs, S) -> str:
    row = metrics.evaluate(X, sqs, S)
    return f"L1x100={row.l1_x100:.4f} L2x100={row.l2_x100:.4f} n_prim={row.n_prim}"


def _source(path, pc) -> dict:
    return {"path": str(path), "n_points": len(pc)}


def _parse_sweep(text: str) -> np.ndarray:
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"--sweep-lpar expects start:stop:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise InputError("--sweep-lpar needs step > 0 and stop >= start")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    return np.round(a + step * np.arange(n), 12)


# --- commands -------------------------------------------------------------------


def cmd_fit(args) -> int:
    pc = _load_cloud(args.input)
    config = build_config(args)
    if args.sweep_lpar:
        return _sweep(args, pc, config)
    node, fallback = _decompose(pc.positions, config, args.threads)
    scene = SceneDecomposition([SceneObject(0, node)], _source(args.input, pc), config.to_dict())
    out = Path(args.output or Path(args.input).with_suffix(".json"))
    save_scene_json(scene, out)
    if args.obj:
        export_obj(scene, args.obj, args.resolution)
    print(f"{Path(args.input).name}: {_summary(pc.positions, _leaves(node), config.S)}")
    return EXIT_FALLBACK if fallback else 0


def _sweep(args, pc, config) -> int:
    lines = [f"# config {json.dumps(config.to_dict(), sort_keys=True)}", "lambda_par,n_prim,l1_x100,l2_x100"]
    for lp in _parse_sweep(args.sweep_lpar):
        cfg = DecomposeConfig.from_dict({**config.to_dict(), "lambda_par": float(lp)})
        dec = decompose_object(pc.positions, cfg, args.threads)
        row = metrics.evaluate(pc.positions, dec.superquadrics, cfg.S)
        lines.append(f"{float(lp)!r},{row.n_prim},{float(row.l1_x100)!r},{float(row.l2_x100)!r}")
        log.info("lambda_par=%g: %d primitives", lp, row.n_prim)
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_scene(args) -> int:
    pc = _load_cloud(args.input)
    config = build_config(args)
    if args.single_object:
        objects = [(0, pc)]
        skipped = []
    else:
        try:
            split = split_instances(pc)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        objects, skipped = split.objects, split.skipped
        for iid, count in skipped:
            log.warning("instance %d skipped: only %d points", iid, count)
        if split.background:
            log.info("%d background points ignored", split.background)
    if not objects:
        raise InputError("no instance has enough points to decompose")

    def work(item):
        iid, obj = item
        return iid, _decompose(obj.positions, config, 1)

    if args.threads > 1 and len(objects) > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(work, objects))
    else:
        results = [work(o) for o in objects]
    results.sort(key=lambda r: r[0])
    scene = SceneDecomposition([SceneObject(iid, node) for iid, (node, _) in results],
                               _source(args.input, pc), config.to_dict())
    out = Path(args.output or Path(args.input).with_suffix(".json"))
    save_scene_json(scene, out)
    obj_path = Path(args.obj) if args.obj else out.with_suffix(".obj")
    export_obj(scene, obj_path, args.resolution)
    n_prim = sum(len(_leaves(o.node)) for o in scene.objects)
    print(f"{len(scene.objects)} objects, {n_prim} primitives, {len(skipped)} skipped -> {out}")
    return EXIT_FALLBACK if any(fb for _, (_, fb) in results) else 0


def cmd_eval(args) -> int:
    pc = _load_cloud(args.input)
    scene = _load_scene(args.scene)
    if args.single_object or pc.instance_ids is None:
        if len(scene.objects) != 1:
            ids = [o.instance_id for o in scene.objects]
            raise InputError(f"whole-cloud evaluation needs a single-object scene, got objects {ids}")
        dataset = [(str(scene.objects[0].instance_id), pc.positions, _leaves(scene.objects[0].node))]
    else:
        present = set(int(i) for i in np.unique(pc.instance_ids))
        missing = [o.instance_id for o in scene.objects if o.instance_id not in present]
        if missing:
            raise InputError(f"instance ids missing from the point cloud: {missing}")
        dataset = [(str(o.instance_id), pc.positions[pc.instance_ids == o.instance_id], _leaves(o.node))
                   for o in scene.objects]
    rows = metrics.eval_report(dataset, args.samples)
    text = metrics.report_json(rows) if args.format == "json" else metrics.report_csv(rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def scene_bounds(points, extra=(), pad_empty: float = 1.0) -> planner.Bounds:
    """Axis box around geometry and the query points; degenerate axes get padding."""
    P = np.vstack([np.asarray(points, dtype=float).reshape(-1, 3)] + [np.reshape(e, (-1, 3)) for e in extra])
    if len(P) == 0:
        raise InputError("cannot infer bounds: no geometry and no query points")
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = np.where(hi - lo < 1e-9, 0.5, 0.0) + (pad_empty if len(points) == 0 else 0.0)
    return planner.Bounds(lo - pad, hi + pad)


def _plan_inputs(args):
    """Scene primitives and reference points from the positional input and --points/--scene."""
    sqs, pts = None, None
    if str(args.input).endswith(".json"):
        sqs = _load_scene(args.input).all_superquadrics()
    else:
        pts = _load_cloud(args.input).positions
    if args.scene:
        sqs = _load_scene(args.scene).all_superquadrics()
    if args.points:
        pts = _load_cloud(args.points).positions
    if pts is None:
        # no scan given: the reference grid comes from the primitives' surfaces
        pts = np.vstack([sample_surface(sq, 4096) for sq in sqs]) if sqs else np.empty((0, 3))
    return sqs, pts


def _make_rep(name, sqs, pts, bounds, margin, cell):
    if name == "superquadrics":
        if sqs is None:
            raise InputError("the superquadric representation needs a scene JSON (input or --scene)")
        return planner.SuperquadricSet(sqs, bounds, margin)
    if name == "points":
        return planner.RawPoints(pts, bounds)
    if name == "voxels":
        return planner.VoxelGrid(pts, bounds, cell)
    return planner.OccupancyGrid(pts, bounds, cell)


def cmd_plan(args) -> int:
    sqs, pts = _plan_inputs(args)
    seed = 0 if args.seed is None else args.seed
    settings = planner.PlannerSettings(seed=seed, max_samples=args.max_samples)
    echo = {"seed": seed, "collision_radius": args.collision_radius, "time_budget": args.time_budget,
            "waypoint_step": args.waypoint_step, "clearance_margin": args.clearance_margin,
            "cell": args.cell, "max_samples": args.max_samples}
    if args.bench:
        bounds = scene_bounds(pts)
        occ = planner.OccupancyGrid(pts, bounds, args.cell)
        queries, rejected = planner.reference_queries(occ, args.queries, seed, args.collision_radius, settings,
                                                      args.time_budget, args.waypoint_step)
        reps = [_make_rep(n, sqs, pts, bounds, args.clearance_margin, args.cell)
                for n in ("superquadrics", "points", "voxels") if n != "superquadrics" or sqs is not None]
        rows = planner.benchmark(reps, queries, occ, settings, args.collision_radius, args.time_budget,
                                 args.waypoint_step)
        text = f"# config {json.dumps({**echo, 'queries': args.queries}, sort_keys=True)}\n"
        text += planner.bench_csv(rows, timing=not args.no_timing)
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
        for name, s in planner.bench_summary(rows).items():
            print(f"{name}: success={100 * s['success']:.1f}% check={s['check_time_ms']:.4f}ms "
                  f"optimality={s['optimality']:.3f} memory={s['memory_bytes']}B", file=sys.stderr)
        if rejected:
            log.info("%d candidate queries unsolved by the occupancy reference", rejected)
        return 0

    if args.start is None or args.goal is None:
        raise InputError("--start and --goal are required unless --bench is given")
    start, goal = np.array(args.start), np.array(args.goal)
    bounds = scene_bounds(pts, (start, goal))
    rep = _make_rep(args.rep or ("superquadrics" if sqs is not None else "occupancy"),
                    sqs, pts, bounds, args.clearance_margin, args.cell)
    query = planner.PlanQuery(start, goal, args.collision_radius, args.time_budget, args.waypoint_step)
    try:
        result = planner.plan(rep, query, settings)
    except planner.InvalidEndpointError as exc:
        raise InputError(str(exc)) from None
    except planner.PlanningTimeout as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    occ = rep if isinstance(rep, planner.OccupancyGrid) else planner.OccupancyGrid(pts, bounds, args.cell)
    check = planner.validate_path(result.path, occ, args.collision_radius, args.waypoint_step)
    doc = {
        "config": {**echo, "rep": rep.name},
        "start": start.tolist(), "goal": goal.tolist(),
        "path": result.path.tolist(),
        "length": result.length,
        "validation": {"passed": check.passed, "violation_fraction": check.violation_fraction,
                       "waypoints": check.n_waypoints},
    }
    text = canonical_json(doc) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"path with {len(result.path)} vertices, length {result.length:.3f} m, "
          f"validation {'pass' if check.passed else 'fail'} ({100 * check.violation_fraction:.1f}% violations)",
          file=sys.stderr)
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqdec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="decompose a single object")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="decomposition JSON (default: input with .json suffix)")
    p.add_argument("--obj", help="also write an OBJ mesh here")
    p.add_argument("--resolution", type=int, default=16, help="mesh resolution for --obj")
    p.add_argument("--sweep-lpar", metavar="A:B:STEP", help="sweep lambda_par and write a CSV curve")
    _add_config_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scene", help="decompose every instance of a labelled scan")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="scene JSON (default: input with .json suffix)")
    p.add_argument("--obj", help="OBJ path (default: output with .obj suffix)")
    p.add_argument("--resolution", type=int, default=16)
    p.add_argument("--single-object", action="store_true", help="treat the whole cloud as one object")
    _add_config_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("eval", help="Chamfer and primitive-count report")
    p.add_argument("input", help="point cloud")
    p.add_argument("scene", help="decomposition JSON")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--samples", type=int, default=4096, help="surface samples per primitive")
    p.add_argument("--single-object", action="store_true", help="ignore instance ids in the point cloud")
    p.add_argument("-o", "--output")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="RRT* planning and the representation benchmark")
    p.add_argument("input", help="scene JSON or point cloud")
    p.add_argument("--scene", help="scene JSON providing the superquadrics")
    p.add_argument("--points", help="point cloud for the raw, voxel and occupancy representations")
    p.add_argument("--start", type=float, nargs=3)
    p.add_argument("--goal", type=float, nargs=3)
    p.add_argument("--rep", choices=("superquadrics", "points", "voxels", "occupancy"))
    p.add_argument("--bench", action="store_true", help="compare all representations on seeded queries")
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--no-timing", action="store_true", help="blank the timing column (byte-stable CSV)")
    p.add_argument("--collision-radius", type=float, default=0.25)
    p.add_argument("--time-budget", type=float, default=2.0)
    p.add_argument("--waypoint-step", type=float, default=0.05)
    p.add_argument("--clearance-margin", type=float, default=1.0)
    p.add_argument("--cell", type=float, default=0.1, help="grid cell size")
    p.add_argument("--max-samples", type=int, default=planner.PlannerSettings.max_samples)
    p.add_argument("-o", "--output")
    _add_common(p)
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
