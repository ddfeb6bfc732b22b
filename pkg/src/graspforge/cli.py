"""``graspforge`` command line.

Every subcommand accepts ``--seed``, ``--config`` (JSON) and ``--out``.
Exit codes: 0 success, 1 user error, 2 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assets import GRIPPER, GRIPPER_COUNTS, TOY_HAND, TOY_HAND_COUNTS
from .errors import GraspForgeError, InvariantViolation

log = logging.getLogger("graspforge")

BUILTIN_ROBOTS = {"toy_hand": (TOY_HAND, TOY_HAND_COUNTS), "gripper": (GRIPPER, GRIPPER_COUNTS)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------
# shared helpers


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    from .io import read_json

    cfg = read_json(args.config)
    if not isinstance(cfg, dict):
        raise GraspForgeError(f"{args.config}: config must be a JSON object")
    return cfg


def _config_dir(args) -> Path:
    return Path(args.config).resolve().parent if getattr(args, "config", None) else Path.cwd()


def _robot(spec: str):
    from .kinematics import load_robot

    path = BUILTIN_ROBOTS[spec][0] if spec in BUILTIN_ROBOTS else spec
    return load_robot(path)


def _point_set(robot_spec: str, robot, total: int | None, counts: str | None, seed: int):
    from .kinematics import allocate_counts, sample_link_points

    if counts:
        c = [int(x) for x in counts.split(",")]
    elif total is not None:
        c = allocate_counts(robot, total)
    elif robot_spec in BUILTIN_ROBOTS:
        c = BUILTIN_ROBOTS[robot_spec][1]
    else:
        c = allocate_counts(robot, 512)
    return sample_link_points(robot, c, seed)


def _robot_and_points(args, cfg: dict | None = None):
    cfg = cfg or {}
    spec = args.robot or cfg.get("robot")
    if not spec:
        raise GraspForgeError("a robot is required (--robot or config 'robot')")
    if spec not in BUILTIN_ROBOTS and cfg.get("robot") == spec:
        spec = str(_config_dir(args) / spec)
    robot = _robot(spec)
    pcfg = cfg.get("points", {})
    total = getattr(args, "points", None) or pcfg.get("total")
    counts = getattr(args, "counts", None) or (",".join(map(str, pcfg["counts"])) if "counts" in pcfg else None)
    pseed = pcfg.get("seed", args.point_seed if getattr(args, "point_seed", None) is not None else 0)
    return robot, _point_set(spec, robot, total, counts, pseed)


def _emit(args, payload, text: str | None = None):
    """JSON to ``--out`` (or stdout); an optional human table goes to stderr when writing a file."""
    body = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    if args.out:
        Path(args.out).write_text(body)
        if text:
            sys.stderr.write(text)
    else:
        sys.stdout.write(text if text else body)


def _check(cond: bool, message: str):
    if not cond:
        raise InvariantViolation(message)


def _within_limits(robot, q) -> bool:
    return bool(np.all(q.angles >= robot.lower - 1e-9) and np.all(q.angles <= robot.upper + 1e-9))


# ----------------------------------------------------------------------------
# robot


def cmd_robot(args):
    robot = _robot(args.robot)
    if args.action == "info":
        info = {
            "name": robot.name,
            "dof": robot.dof,
            "links": [l.name for l in robot.links],
            "joints": [
                {"name": robot.joints[j].name, "type": robot.joints[j].type, "lower": float(lo), "upper": float(hi)}
                for j, lo, hi in zip(robot.actuated, robot.lower, robot.upper)
            ],
            "keypoints": [k.label for k in robot.keypoints],
            "finger_links": [robot.links[i].name for i in robot.finger_indices()],
        }
        _emit(args, info)
    else:
        from .geometry import PointCloud
        from .io import write_ply

        pts = _point_set(args.robot, robot, args.points, args.counts, args.seed)
        if not args.out:
            raise GraspForgeError("robot sample needs --out (PLY)")
        write_ply(args.out, PointCloud(pts.points, pts.labels))
        sys.stderr.write(f"wrote {len(pts)} points (identity {pts.identity_hash():016x}) to {args.out}\n")


# ----------------------------------------------------------------------------
# mesh


def cmd_mesh(args):
    from .geometry import PointCloud, d2_descriptor, icp_align, load_mesh, sample_surface, signed_distance, wasserstein_1d
    from .io import read_points, write_ply

    mesh = load_mesh(args.mesh)
    if args.action == "sample":
        cloud = sample_surface(mesh, args.n, args.seed)
        if not args.out:
            raise GraspForgeError("mesh sample needs --out (PLY)")
        write_ply(args.out, cloud)
    elif args.action == "sdf":
        if not args.points:
            raise GraspForgeError("mesh sdf needs --points")
        P = read_points(args.points).points
        _emit(args, {"sdf": np.atleast_1d(signed_distance(mesh, P)).tolist()})
    elif args.action == "icp":
        if not args.target:
            raise GraspForgeError("mesh icp needs --target")
        target = load_mesh(args.target) if args.target.endswith(".obj") else read_points(args.target).points
        src = sample_surface(mesh, args.n, args.seed).points
        T, res = icp_align(src, target, estimate_scale=args.scale)
        _emit(args, {"transform": T.to_dict(), "residual": res})
    else:
        cloud = sample_surface(mesh, args.n, args.seed)
        h = d2_descriptor(cloud, args.pairs, args.bins, seed=args.seed)
        out = {"histogram": h.to_dict()}
        if args.target:
            other = sample_surface(load_mesh(args.target), args.n, args.seed)
            h2 = d2_descriptor(other, args.pairs, args.bins, range_max=float(h.edges[-1]), seed=args.seed)
            out["wasserstein"] = wasserstein_1d(h, h2)
        _emit(args, out)


# ----------------------------------------------------------------------------
# retarget / metrics / export


def cmd_retarget(args):
    from .io import read_json, write_grasp
    from .records import GraspRecord
    from .retarget import HumanHandKeypoints, RetargetMapping, retarget

    cfg = _load_config(args)
    robot = _robot(args.robot)
    kp = HumanHandKeypoints.from_dict(read_json(args.keypoints))
    mapping = RetargetMapping.from_dict(read_json(args.map)) if args.map else RetargetMapping.default()
    res = retarget(kp, robot, mapping, max_iters=cfg.get("max_iters", args.max_iters), tol=cfg.get("tol", 1e-10))
    _check(_within_limits(robot, res.q), "retarget output violates joint limits")
    _check(all(b <= a + 1e-15 * max(1.0, a) for a, b in zip(res.history, res.history[1:])), "retarget objective increased")
    rec = GraspRecord(args.id, robot.name, args.object_id, res.q, extras={"retarget_residual": res.residual})
    if args.out:
        write_grasp(args.out, rec)
    sys.stderr.write(f"residual {res.residual:.3e} m after {res.iterations} iterations\n")
    if not args.out:
        sys.stdout.write(json.dumps(rec.to_dict(), indent=2) + "\n")


def cmd_metrics(args):
    from .geometry import load_mesh
    from .io import read_grasp, render_metrics
    from .metrics import quality_report

    cfg = _load_config(args)
    robot, pts = _robot_and_points(args, cfg)
    rec = read_grasp(args.grasp)
    obj = load_mesh(args.object)
    m = quality_report(
        rec, robot, pts, obj,
        contact_threshold_cm=args.contact_thresh if args.contact_thresh is not None else cfg.get("contact_threshold_cm", 0.5),
        voxel_cm=args.voxel if args.voxel is not None else cfg.get("voxel_cm", 0.2),
        seed=args.seed,
    )
    _emit(args, {"grasp": rec.id, "metrics": m.to_dict()}, render_metrics([(rec.id, m)]))


def cmd_export(args):
    from .geometry import load_mesh
    from .io import export_posed_hand, read_grasp

    robot = _robot(args.robot)
    rec = read_grasp(args.grasp)
    if not args.out:
        raise GraspForgeError("export needs --out (OBJ)")
    names = export_posed_hand(rec, robot, args.out, obj=load_mesh(args.object) if args.object else None)
    sys.stderr.write(f"wrote {len(names)} objects to {args.out}\n")


# ----------------------------------------------------------------------------
# dro


def cmd_dro(args):
    from .dro import decode_grasp, encode_distance_matrix
    from .io import read_grasp, read_matrix, read_points, write_grasp, write_matrix
    from .kinematics import point_cloud_fk

    robot, pts = _robot_and_points(args)
    cloud = read_points(args.object_points).points
    if args.action == "encode":
        rec = read_grasp(args.input)
        D = encode_distance_matrix(point_cloud_fk(robot, rec.q, pts), cloud, pts.identity_hash())
        if not args.out:
            raise GraspForgeError("dro encode needs --out")
        write_matrix(args.out, D)
        sys.stderr.write(f"encoded {D.shape[0]}x{D.shape[1]} matrix to {args.out}\n")
    else:
        D = read_matrix(args.input)
        rec = decode_grasp(D, cloud, robot, pts, grasp_id=args.id, object_id=args.object_id)
        _check(_within_limits(robot, rec.q), "decoded configuration violates joint limits")
        if args.out:
            write_grasp(args.out, rec)
        else:
            sys.stdout.write(json.dumps(rec.to_dict(), indent=2) + "\n")
        sys.stderr.write(f"fit rms {rec.extras['fit_rms']:.3e} m, {len(rec.extras['infeasible_rows'])} infeasible rows\n")


# ----------------------------------------------------------------------------
# eval


def cmd_eval(args):
    from dataclasses import replace

    from .geometry import load_mesh
    from .grasp_eval import EvalConfig, depenetrate, evaluate_grasp
    from .io import iter_records, render_verdicts, write_records

    cfg = _load_config(args)
    robot, pts = _robot_and_points(args, cfg)
    ecfg = EvalConfig.from_dict(cfg.get("eval", {}))
    if args.mu is not None:
        ecfg = replace(ecfg, mu=args.mu)
    obj = load_mesh(args.object)
    out, table = [], []
    for rec in iter_records(args.grasps):
        if args.depenetrate:
            rec = depenetrate(rec, robot, pts, obj)
        v = evaluate_grasp(rec, robot, pts, obj, ecfg)
        _check(not v.success or (v.epsilon >= ecfg.eps_min and v.penetration_ok), "verdict contradicts its gates")
        out.append(replace(rec, verdict=v))
        table.append((rec.id, v))
    if args.out:
        write_records(args.out, out)
    sys.stdout.write(render_verdicts(table))


# ----------------------------------------------------------------------------
# pipeline


def _resolve(base: Path, p):
    return str(p) if Path(p).is_absolute() else str(base / p)


def cmd_pipeline(args):
    from .geometry import load_mesh
    from .io import read_records, render_augment_stats, render_filter_stats, write_json, write_records

    cfg = _load_config(args)
    base = _config_dir(args)
    robot, pts = _robot_and_points(args, cfg)
    if args.action == "filter":
        from .pipeline import FilterConfig, MeshCache, filter_dataset

        if not args.input:
            raise GraspForgeError("pipeline filter needs an input JSON-lines file")
        refs = {k: load_mesh(_resolve(base, v)) for k, v in cfg.get("references", {}).items()}
        fcfg = FilterConfig.from_dict(cfg.get("filter", {}))
        records = read_records(args.input)
        rec_base = Path(args.input).resolve().parent
        meshes = MeshCache(lambda p: load_mesh(_resolve(rec_base, p)))
        retained, stats, report = filter_dataset(records, robot, pts, refs, fcfg, meshes, cfg.get("export_dir"))
        _check(stats.retained + sum(stats.rejected.values()) == stats.input, "filter statistics do not add up")
        if args.out:
            write_records(args.out, retained)
            write_json(str(args.out) + ".report.json", {"stats": stats.to_dict(), "retained": report})
        sys.stdout.write(render_filter_stats(stats))
    else:
        from .grasp_eval import EvalConfig
        from .pipeline import PerturbConfig, augment_loop, predictor_from_config

        objects = [(o["id"], load_mesh(_resolve(base, o["mesh"])), o["mesh"]) for o in cfg.get("objects", [])]
        if not objects:
            raise GraspForgeError("augment config lists no objects")
        predictor = predictor_from_config(cfg.get("predictor", {}), base, robot, pts, dict((o[0], o[1]) for o in objects))
        res = augment_loop(
            predictor,
            objects,
            int(cfg.get("per_object_target", 200)),
            robot,
            pts,
            EvalConfig.from_dict(cfg.get("eval", {})),
            PerturbConfig.from_dict(cfg.get("perturb", {})),
            seed=args.seed if args.seed is not None else int(cfg.get("seed", 0)),
            budget_factor=int(cfg.get("budget_factor", 50)),
        )
        _check(all(r.verdict is not None and r.verdict.success for r in res.records), "augment kept an unsuccessful grasp")
        if args.out:
            write_records(args.out, res.records)
            write_json(str(args.out) + ".stats.json", [s.to_dict() for s in res.stats])
        sys.stdout.write(render_augment_stats(res.stats))


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output path (stdout when omitted, where meaningful)")
    common.add_argument("-v", "--verbose", action="store_true")

    robot_opts = argparse.ArgumentParser(add_help=False)
    robot_opts.add_argument("--robot", help="URDF path or builtin name (toy_hand, gripper)")
    robot_opts.add_argument("--points", type=int, help="total robot samples, split by link area")
    robot_opts.add_argument("--counts", help="comma-separated samples per link (overrides --points)")
    robot_opts.add_argument("--point-seed", type=int, default=None, help="seed of the robot point set (default 0)")

    p = _Parser(prog="graspforge", description="grasp dataset tooling")
    p.add_argument("--version", action="version", version=f"graspforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("robot", parents=[common], help="inspect or sample a robot description")
    s.add_argument("action", choices=["info", "sample"])
    s.add_argument("robot", help="URDF path or builtin name")
    s.add_argument("--points", type=int)
    s.add_argument("--counts")
    s.set_defaults(func=cmd_robot)

    s = sub.add_parser("mesh", parents=[common], help="mesh queries: sample, sdf, icp, d2")
    s.add_argument("action", choices=["sample", "sdf", "icp", "d2"])
    s.add_argument("mesh", help="OBJ file")
    s.add_argument("-n", type=int, default=2048, help="surface samples")
    s.add_argument("--points", help="query points (.ply/.npy/.txt) for sdf")
    s.add_argument("--target", help="second mesh or cloud for icp / d2 comparison")
    s.add_argument("--scale", action="store_true", help="estimate a uniform scale in icp")
    s.add_argument("--pairs", type=int, default=100_000)
    s.add_argument("--bins", type=int, default=64)
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("retarget", parents=[common], help="human keypoints to robot configuration")
    s.add_argument("--robot", required=True)
    s.add_argument("--keypoints", required=True, help="JSON {keypoints, confidence}")
    s.add_argument("--map", help="mapping JSON (default: wrist + mid + tip pairs)")
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--id", default="retargeted")
    s.add_argument("--object-id", default="")
    s.set_defaults(func=cmd_retarget)

    s = sub.add_parser("metrics", parents=[common, robot_opts], help="penetration / disjoint / contact metrics")
    s.add_argument("grasp", help="grasp JSON")
    s.add_argument("--object", required=True, help="object OBJ (mesh frame)")
    s.add_argument("--contact-thresh", type=float, default=None, help="cm (default 0.5)")
    s.add_argument("--voxel", type=float, default=None, help="cm (default 0.2)")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("dro", parents=[common, robot_opts], help="distance-matrix encode / decode")
    s.add_argument("action", choices=["encode", "decode"])
    s.add_argument("input", help="grasp JSON (encode) or matrix file (decode)")
    s.add_argument("--object-points", required=True, help="object cloud (.ply/.npy/.txt), grasp frame")
    s.add_argument("--id", default="decoded")
    s.add_argument("--object-id", default="")
    s.set_defaults(func=cmd_dro)

    s = sub.add_parser("eval", parents=[common, robot_opts], help="force-closure verdicts for a grasp file")
    s.add_argument("grasps", help="JSON-lines of grasps")
    s.add_argument("--object", required=True)
    s.add_argument("--mu", type=float)
    s.add_argument("--depenetrate", action="store_true", help="push penetrating points out before evaluation")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", parents=[common, robot_opts], help="dataset filtering and augmentation")
    s.add_argument("action", choices=["filter", "augment"])
    s.add_argument("input", nargs="?", help="grasp JSON-lines (filter)")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("export", parents=[common], help="posed hand (and object) as a multi-object OBJ")
    s.add_argument("grasp")
    s.add_argument("--robot", required=True)
    s.add_argument("--object")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command != "pipeline":
        args.seed = 0
    try:
        args.func(args)
    except GraspForgeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except InvariantViolation as exc:
        sys.stderr.write(f"internal error: {exc}\n")
        return 2
    except Exception as exc:  # anything else is a bug, not a user error
        log.debug("unhandled exception", exc_info=True)
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
