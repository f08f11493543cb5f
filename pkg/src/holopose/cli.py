"""Command-line pipeline: generate, fit, eval, report, inspect.

Every command is a deterministic function of its inputs, flags, and seed:
re-running reproduces output files byte for byte. Outputs are written via
atomic rename, with a JSON manifest (command, config snapshot, paths,
seed, duration) next to each primary output. The manifest itself carries
the wall-clock duration and is excluded from byte-identity expectations.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Floating-point values in printed reports use 6 significant digits.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import estimator, metrics, render, synth
from .kinematics import (
    RobotDescriptionError,
    canonical_dump,
    fk_anchored,
    parse_robot_description,
)
from .rotation import euler_angle_errors
from .synth import DatasetError, GenConfig

ARTIFACT_VERSION = "holopose/0.1.0"


class UsageError(ValueError):
    """Validation problems that map to exit status 2."""


def _atomic_write(path, data):
    tmp = f"{path}.tmp.{os.getpid()}"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_manifest(out_path, command, config, inputs, outputs, seed, started):
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "artifact_version": ARTIFACT_VERSION,
        "duration_s": round(time.time() - started, 3),
    }
    _atomic_write(f"{out_path}.manifest.json", json.dumps(manifest, indent=2) + "\n")


def _load_robot(spec_arg):
    """Robot file path, or the name of a bundled description."""
    if os.path.exists(spec_arg):
        with open(spec_arg, "r", encoding="utf-8") as fh:
            return parse_robot_description(fh.read())
    builtin = resources.files("holopose.robots").joinpath(f"{spec_arg}.urdf")
    if builtin.is_file():
        return parse_robot_description(builtin.read_text())
    raise UsageError(f"robot description not found: {spec_arg}")


def _config_defaults(args, names):
    """Start from file config (if any), overlay explicitly set flags."""
    overlay = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overlay.update(json.load(fh))
    for name in names:
        val = getattr(args, name, None)
        if val is not None:
            overlay[name] = val
    return overlay


def _threads(args):
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("HOLOPOSE_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


# --- subcommands ------------------------------------------------------------

def cmd_generate(args):
    started = time.time()
    model = _load_robot(args.robot)
    fields = [f.name for f in dataclasses.fields(GenConfig)]
    overlay = _config_defaults(args, fields)
    for pair_name in ("distance_mm", "elevation_deg", "azimuth_deg"):
        if pair_name in overlay:
            overlay[pair_name] = tuple(overlay[pair_name])
    config = GenConfig(**overlay)
    records = synth.generate_dataset(model, config)
    if args.masks:
        os.makedirs(args.masks, exist_ok=True)
        records = [_attach_mask(model, r, config, args.masks) for r in records]
    lines = [synth.record_to_json(r) for r in records]
    header = {
        "schema": synth.DATASET_SCHEMA,
        "robot": model.name,
        "robot_xml": synth.serialize_robot_description(model),
        "scenes": len(records),
        "config": dataclasses.asdict(config),
    }
    payload = "\n".join(
        [json.dumps(header, separators=(",", ":"), sort_keys=True)] + lines
    ) + "\n"
    _atomic_write(args.out, payload)
    _write_manifest(args.out, "generate", dataclasses.asdict(config),
                    [args.robot], [args.out], config.seed, started)
    print(f"wrote {len(records)} scenes to {args.out}", file=sys.stderr)
    return 0


def _attach_mask(model, record, config, mask_dir):
    from .kinematics import base_pose_from_root

    base = base_pose_from_root(model, record.q, record.rotation, record.t)
    mask = render.render_silhouette(model, record.q, base, record.intrinsics)
    if config.mask_corruption > 0:
        rng = synth.mask_rng(config.seed, record.index)
        flip = rng.random(mask.pixels.shape) < config.mask_corruption
        mask = render.BinaryMask(np.logical_xor(mask.pixels, flip))
    name = f"scene_{record.scene_id:06d}.pgm"
    render.write_pgm(os.path.join(mask_dir, name), mask)
    return dataclasses.replace(record, mask_file=name)


def _fit_one(model, record, fit_config, known_joints, weights):
    obs2d, obs3d = record.observations()
    problem = estimator.FitProblem(
        model=model,
        intrinsics=record.intrinsics,
        obs2d=obs2d,
        visible=record.inframe,
        obs3d=obs3d,
        known_q=record.q if known_joints else None,
        w2d=weights[0], w3d=weights[1], wc=weights[2],
    )
    result = estimator.fit(problem, fit_config)
    return dataclasses.replace(result, scene_id=record.scene_id)


def cmd_fit(args):
    started = time.time()
    dataset = synth.read_dataset(args.dataset)
    overlay = _config_defaults(
        args, [f.name for f in dataclasses.fields(estimator.FitConfig)]
    )
    fit_config = estimator.FitConfig(**overlay)
    weights = (args.w2d, args.w3d, args.wc)
    nthreads = _threads(args)
    records = dataset.records

    def run(record):
        return _fit_one(dataset.model, record, fit_config, args.known_joints, weights)

    if nthreads > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(run, records))
    else:
        results = [run(r) for r in records]
    results.sort(key=lambda r: r.scene_id)
    for r in results:
        print(f"scene {r.scene_id}: {r.status} residual={r.residual:.6g}",
              file=sys.stderr)
    header = json.dumps(
        {"schema": estimator.RESULTS_SCHEMA, "robot": dataset.model.name,
         "results": len(results)},
        separators=(",", ":"), sort_keys=True,
    )
    payload = "\n".join([header] + [estimator.result_to_json(r) for r in results]) + "\n"
    _atomic_write(args.out, payload)
    _write_manifest(args.out, "fit",
                    {**dataclasses.asdict(fit_config),
                     "known_joints": args.known_joints,
                     "w2d": weights[0], "w3d": weights[1], "wc": weights[2]},
                    [args.dataset], [args.out], fit_config.seed, started)
    return 0


def _evaluate(dataset, results):
    by_id = {r.scene_id: r for r in results}
    dataset_ids = [rec.scene_id for rec in dataset.records]
    missing = sorted(set(dataset_ids) - set(by_id))
    extra = sorted(set(by_id) - set(dataset_ids))
    if missing or extra:
        raise UsageError(
            f"scene id mismatch between dataset and results; "
            f"missing from results: {missing or '-'}; unknown ids: {extra or '-'}"
        )
    model = dataset.model
    rev = model.compiled.q_revolute
    out = []
    for rec in dataset.records:
        res = by_id[rec.scene_id]
        pred = fk_anchored(model, res.q, res.rotation, res.t)
        out.append(metrics.EvalRecord(
            scene_id=rec.scene_id,
            add=metrics.add_distance(pred.points, rec.kp_fk),
            joint_errors=np.abs(res.q - rec.q),
            joint_revolute=rev,
            rot_errors=euler_angle_errors(res.rotation, rec.rotation),
            depth_error=abs(res.d - rec.d),
            inframe_count=rec.inframe_count,
        ))
    return out


def cmd_eval(args):
    started = time.time()
    dataset = synth.read_dataset(args.dataset)
    _, results = estimator.read_results(args.results)
    eval_records = _evaluate(dataset, results)
    report = metrics.summarize(eval_records, args.auc_max)
    strata = metrics.stratify_by_inframe(eval_records, args.auc_max)
    _atomic_write(args.out, metrics.format_report(report))
    csv_path = args.csv or f"{args.out}.strata.csv"
    rows = ["inframe_kps,images,auc,mean_add"] + [
        f"{s.inframe_kps},{s.images},{s.auc:.6g},{s.mean_add:.6g}" for s in strata
    ]
    _atomic_write(csv_path, "\n".join(rows) + "\n")
    _write_manifest(args.out, "eval", {"auc_max": args.auc_max},
                    [args.dataset, args.results], [args.out, csv_path],
                    dataset.header.get("config", {}).get("seed"), started)
    print(metrics.format_report(report), end="")
    return 0


def cmd_report(args):
    dataset = synth.read_dataset(args.dataset)
    _, results = estimator.read_results(args.results)
    eval_records = _evaluate(dataset, results)
    print(metrics.format_report(metrics.summarize(eval_records, args.auc_max)), end="")
    print("inframe_kps images auc mean_add")
    for s in metrics.stratify_by_inframe(eval_records, args.auc_max):
        print(f"{s.inframe_kps} {s.images} {s.auc:.6g} {s.mean_add:.6g}")
    return 0


def cmd_inspect(args):
    with open(args.path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip()[:1] == "<":
        model = parse_robot_description(text)
        print(canonical_dump(model), end="")
        return 0
    first = text.splitlines()[0] if text.splitlines() else ""
    obj = json.loads(first)
    schema = obj.get("schema", "")
    if schema == synth.DATASET_SCHEMA:
        dataset = synth.read_dataset(args.path)
        counts = {}
        for r in dataset.records:
            counts[r.inframe_count] = counts.get(r.inframe_count, 0) + 1
        print(f"dataset robot={dataset.model.name} scenes={len(dataset.records)} "
              f"validated=yes")
        for k in sorted(counts, reverse=True):
            print(f"inframe {k}: {counts[k]} scenes")
        return 0
    if schema == estimator.RESULTS_SCHEMA:
        header, results = estimator.read_results(args.path)
        statuses = {}
        for r in results:
            statuses[r.status] = statuses.get(r.status, 0) + 1
        print(f"results robot={header.get('robot', '?')} count={len(results)}")
        for k in sorted(statuses):
            print(f"status {k}: {statuses[k]}")
        if results:
            med = float(np.median([r.residual for r in results]))
            print(f"median residual: {med:.6g}")
        return 0
    raise UsageError(f"unrecognized file schema {schema!r}")


# --- argument parsing -------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="holopose",
        description="Synthetic holistic robot pose estimation pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a synthetic scene dataset")
    gen.add_argument("--robot", required=True,
                     help="robot description path or bundled name (panda/kuka/baxter)")
    gen.add_argument("-o", "--out", required=True)
    gen.add_argument("--config", help="JSON config file; flags override")
    gen.add_argument("--scenes", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--sigma-px", dest="sigma_px", type=float)
    gen.add_argument("--sigma-mm", dest="sigma_mm", type=float)
    gen.add_argument("--truncation", dest="truncation_prob", type=float)
    gen.add_argument("--min-inframe", dest="min_inframe", type=int)
    gen.add_argument("--distance", dest="distance_mm", nargs=2, type=float)
    gen.add_argument("--elevation", dest="elevation_deg", nargs=2, type=float)
    gen.add_argument("--azimuth", dest="azimuth_deg", nargs=2, type=float)
    gen.add_argument("--fx", type=float)
    gen.add_argument("--fy", type=float)
    gen.add_argument("--width", type=int)
    gen.add_argument("--height", type=int)
    gen.add_argument("--masks", help="directory for synthesized PGM masks")
    gen.add_argument("--mask-corruption", dest="mask_corruption", type=float)
    gen.set_defaults(func=cmd_generate)

    fit = sub.add_parser("fit", help="fit every scene of a dataset")
    fit.add_argument("dataset")
    fit.add_argument("-o", "--out", required=True)
    fit.add_argument("--config", help="JSON config file; flags override")
    fit.add_argument("--known-joints", action="store_true")
    fit.add_argument("--max-iterations", dest="max_iterations", type=int)
    fit.add_argument("--starts", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--w2d", type=float, default=1.0)
    fit.add_argument("--w3d", type=float, default=1.0)
    fit.add_argument("--wc", type=float, default=0.0)
    fit.add_argument("--threads", type=int)
    fit.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="score results against a dataset")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--results", required=True)
    ev.add_argument("-o", "--out", required=True)
    ev.add_argument("--csv", help="stratified CSV path (default: OUT.strata.csv)")
    ev.add_argument("--auc-max", dest="auc_max", type=float, default=100.0)
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="print evaluation summary to stdout")
    rep.add_argument("--dataset", required=True)
    rep.add_argument("--results", required=True)
    rep.add_argument("--auc-max", dest="auc_max", type=float, default=100.0)
    rep.set_defaults(func=cmd_report)

    ins = sub.add_parser("inspect", help="describe a robot/dataset/results file")
    ins.add_argument("path")
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, RobotDescriptionError, DatasetError, FileNotFoundError,
            estimator.FitError, json.JSONDecodeError, ValueError) as exc:
        print(f"holopose: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1
        print(f"holopose: failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
