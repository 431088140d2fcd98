"""``sympose`` command line: eval, fit, refine-seg, synth.

Exit codes: 0 ok, 2 input mismatch, 3 fit failure, 4 degenerate data, 64 usage.
Every subcommand accepts ``--config file.json`` whose keys mirror the long
flags (dashes or underscores); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from ._version import __version__
from .errors import DegenerateDataError, FitError, GeometryError, ParseError
from .fitting import FitConfig, filter_by_confidence, least_squares_fit, prosac_fit, ransac_fit
from .geometry import CameraIntrinsics, mesh_diagonal, sample_mesh_surface
from .metrics import METRICS, NO_SYMMETRY, EvaluationInstance, MetricConfig, evaluate_batch
from .segmentation import refine_segmentation
from .synth import CorrSpec, random_scene, render_scene, synth_correspondences, visible_indices

EXIT_OK = 0
EXIT_MISMATCH = 2
EXIT_FIT = 3
EXIT_DEGENERATE = 4
EXIT_USAGE = 64

MESH_EXTS = (".obj", ".ply")
OBJECT_SAMPLES = 2000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _load_meshes(directory) -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"mesh directory {directory} not found")
    meshes = {}
    for p in sorted(d.iterdir()):
        if p.suffix.lower() in MESH_EXTS and p.stem not in meshes:
            meshes[p.stem] = formats.load_mesh(p)
    return meshes


# -- eval ---------------------------------------------------------------------


def _object_points(mesh, spec: str, oid: str):
    if spec == "vertices":
        return mesh.vertex_cloud()
    if spec.startswith("sample:"):
        n = int(spec.split(":", 1)[1])
        # per-object seed so the sample does not depend on evaluation order
        seed = int.from_bytes(oid.encode("utf-8")[:8].ljust(8, b"\0"), "little") % (2**32)
        return sample_mesh_surface(mesh, n, seed)
    raise UsageError(f"bad --points value {spec!r}")


def _parse_metrics(text: str) -> tuple:
    names = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in names if m not in METRICS]
    if bad or not names:
        raise UsageError(f"unknown metrics {bad}; choose from {','.join(METRICS)}")
    return names


def cmd_eval(args) -> int:
    if not (args.gt and args.pred and args.meshes and args.out):
        raise UsageError("eval needs --gt, --pred, --meshes and --out")
    metrics = _parse_metrics(args.metrics)
    cfg = MetricConfig(n_axis_samples=args.n_axis_samples, metric_set=metrics, refine_axis=args.refine_axis)
    gt = formats.load_ground_truth(args.gt)
    preds = formats.load_predictions(args.pred)
    symmetry = formats.load_symmetry(args.symmetry) if args.symmetry else {}
    meshes = _load_meshes(args.meshes)

    gt_keys = set()
    for r in gt:
        if r.key in gt_keys:
            return _fail(EXIT_MISMATCH, f"duplicate ground truth for scene {r.scene_id!r} object {r.object_id!r}")
        gt_keys.add(r.key)
        if r.object_id not in meshes:
            return _fail(EXIT_MISMATCH, f"no mesh for object {r.object_id!r}")
    best = {}
    for p in preds:
        if p.key not in gt_keys:
            return _fail(EXIT_MISMATCH, f"prediction for unknown scene {p.scene_id!r} object {p.object_id!r}")
        # several detections of one instance: keep the highest score (first on ties)
        if p.key not in best or p.score > best[p.key].score:
            best[p.key] = p

    points = {}
    for oid in sorted({r.object_id for r in gt}):
        points[oid] = _object_points(meshes[oid], args.points, oid)
    instances = []
    for r in gt:
        pred = best.get(r.key)
        instances.append(
            EvaluationInstance(points[r.object_id], r.pose, None if pred is None else pred.pose, symmetry.get(r.object_id, NO_SYMMETRY), r.scene_id, r.object_id)
        )
    d_max = {oid: 0.5 * mesh_diagonal(meshes[oid]) for oid in points}
    report = evaluate_batch(instances, cfg, d_max, workers=args.workers, version=__version__)
    report.config["points"] = args.points
    formats.write_report(report, f"{args.out}.json", f"{args.out}.csv")
    for m in report.metrics:
        v = report.auc[m]
        print(f"{m}: AUC {'n/a' if v is None else f'{v:.6f}'}")
    return EXIT_OK


# -- fit ----------------------------------------------------------------------


def cmd_fit(args) -> int:
    if not (args.corr and args.out):
        raise UsageError("fit needs --corr and --out")
    if args.method not in ("lsq", "ransac", "prosac"):
        raise UsageError(f"unknown method {args.method!r}")
    cfg = FitConfig(
        confidence_threshold=args.confidence_threshold,
        inlier_threshold=args.inlier_threshold,
        max_iterations=args.max_iterations,
        seed=args.seed,
    )
    records, failed = [], []
    for path in args.corr:
        corr, meta = formats.load_correspondences(path, with_meta=True)
        kept = filter_by_confidence(corr, cfg.confidence_threshold)
        try:
            if args.method == "lsq":
                pose = least_squares_fit(kept)
                res = np.linalg.norm(pose.apply(kept.object_points) - kept.scene_points, axis=1)
                n_in, rms, iters = len(kept), float(np.sqrt(np.mean(res**2))), 0
            else:
                fit = (ransac_fit if args.method == "ransac" else prosac_fit)(kept, cfg)
                pose, n_in, rms, iters = fit.pose, fit.n_inliers, fit.inlier_rms, fit.iterations_used
        except (FitError, DegenerateDataError) as exc:
            print(f"{path}: fit failed: {exc}", file=sys.stderr)
            failed.append(path)
            continue
        scene_id = meta.get("scene_id", "")
        object_id = meta.get("object_id", Path(path).stem)
        score = n_in / len(corr) if len(corr) else 0.0
        print(f"{scene_id}/{object_id}: inliers {n_in} rms {rms:.6g} iterations {iters}")
        records.append(formats.PoseRecord(scene_id, object_id, pose, score))
    formats.save_pose_records(records, args.out)
    if failed:
        return _fail(EXIT_FIT, f"fit failed for {len(failed)} of {len(args.corr)} files")
    return EXIT_OK


# -- refine-seg ---------------------------------------------------------------


def cmd_refine_seg(args) -> int:
    if not (args.cloud and args.scores and args.intrinsics and args.out):
        raise UsageError("refine-seg needs --cloud, --scores, --intrinsics and --out")
    cloud = formats.load_cloud(args.cloud)
    scores = formats.load_scores(args.scores)
    cam = formats.load_intrinsics(args.intrinsics)
    if scores.size == 0:
        return _fail(EXIT_DEGENERATE, "degenerate histogram")
    if scores.size != len(cloud):
        return _fail(EXIT_MISMATCH, f"{scores.size} scores for {len(cloud)} points")
    seg = refine_segmentation(cloud, scores, cam, sigma=args.sigma, min_size=args.min_size)
    formats.save_indices(seg.point_indices, args.out)
    print(f"components {seg.component_count} points {len(seg.point_indices)}")
    return EXIT_OK


# -- synth --------------------------------------------------------------------


def _parse_corr(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError("--corr expects inlier_ratio,noise,model")
    try:
        ratio, noise = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError("--corr inlier_ratio and noise must be numbers") from None
    model = parts[2].strip()
    if model.startswith("noisy:"):
        model = ("noisy", float(model.split(":", 1)[1]))
    elif model != "oracle":
        raise UsageError("--corr model must be 'oracle' or 'noisy:<overlap>'")
    return ratio, noise, model


def _synth_one(k, seed, object_ids, meshes, samples, cam, args, corr_spec, out):
    scene_id = f"scene_{k:04d}"
    ss = np.random.SeedSequence(seed)
    s_scene, s_corr = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    spec = random_scene(object_ids, meshes, cam, seed=s_scene, depth_noise_sigma=args.noise, distance=args.distance)
    scene = render_scene(spec, meshes)
    formats.save_cloud(scene.cloud, out / "scenes" / f"{scene_id}.ply", labels=scene.instance_labels)
    gt = [formats.PoseRecord(scene_id, pl.object_id, pl.pose) for pl in spec.placements]
    corr_files = []
    if corr_spec is not None:
        ratio, noise, model = corr_spec
        corr_seeds = np.random.SeedSequence(s_corr).spawn(len(spec.placements))
        for label, (pl, cs) in enumerate(zip(spec.placements, corr_seeds)):
            cloud = samples[pl.object_id]
            vis = visible_indices(cloud.positions, pl.pose, label, scene, cam, tol=max(0.002, 4.0 * args.noise))
            if vis.size == 0:
                continue
            corr = synth_correspondences(cloud, pl.pose, vis, CorrSpec(args.corr_pairs, ratio, noise, model, int(cs.generate_state(1)[0])))
            name = f"{scene_id}_{pl.object_id}.txt"
            formats.save_correspondences(corr, out / "corr" / name, {"scene_id": scene_id, "object_id": pl.object_id})
            corr_files.append(f"corr/{name}")
    entry = {"scene_id": scene_id, "cloud": f"scenes/{scene_id}.ply", "n_points": len(scene.cloud), "objects": [pl.object_id for pl in spec.placements], "correspondences": corr_files}
    return entry, gt


def cmd_synth(args) -> int:
    if not (args.objects and args.out):
        raise UsageError("synth needs --objects and --out")
    if args.n_scenes < 0:
        raise UsageError("--n-scenes must be >= 0")
    corr_spec = _parse_corr(args.corr) if args.corr else None
    try:
        meshes = _load_meshes(args.objects)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISMATCH, str(exc))
    if not meshes:
        return _fail(EXIT_MISMATCH, f"no meshes found in {args.objects}")
    object_ids = sorted(meshes)
    cam = CameraIntrinsics(args.fx, args.fx, (args.width - 1) / 2.0, (args.height - 1) / 2.0, args.width, args.height)
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    if corr_spec is not None:
        (out / "corr").mkdir(exist_ok=True)
    samples = {oid: sample_mesh_surface(meshes[oid], OBJECT_SAMPLES, seed=i) for i, oid in enumerate(object_ids)}
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(args.seed).spawn(args.n_scenes)]

    def job(k):
        return _synth_one(k, seeds[k], object_ids, meshes, samples, cam, args, corr_spec, out)

    if args.workers > 1 and args.n_scenes > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(job, range(args.n_scenes)))
    else:
        results = [job(k) for k in range(args.n_scenes)]

    formats.save_intrinsics(cam, out / "intrinsics.json")
    formats.save_pose_records([r for _, gt in results for r in gt], out / "gt.jsonl")
    manifest = {
        "toolkit_version": __version__,
        "seed": args.seed,
        "depth_noise_sigma": args.noise,
        "objects": object_ids,
        "intrinsics": "intrinsics.json",
        "ground_truth": "gt.jsonl",
        "scenes": [e for e, _ in results],
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.n_scenes} scenes to {out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sympose", description="Symmetry-aware 6D pose evaluation toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp):
        sp.add_argument("--config", help="JSON file whose keys mirror the long flags")
        sp.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--gt")
    e.add_argument("--pred")
    e.add_argument("--meshes")
    e.add_argument("--symmetry")
    e.add_argument("--metrics", default=",".join(METRICS))
    e.add_argument("--n-axis-samples", type=int, default=360)
    e.add_argument("--points", default="vertices", help="vertices or sample:<n>")
    e.add_argument("--refine-axis", action="store_true")
    e.add_argument("--out", help="output prefix; writes <out>.json and <out>.csv")
    common(e)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fit", help="estimate a pose from scored correspondences")
    f.add_argument("--corr", nargs="+")
    f.add_argument("--method", default="prosac", choices=("lsq", "ransac", "prosac"))
    f.add_argument("--confidence-threshold", type=float, default=0.8)
    f.add_argument("--inlier-threshold", type=float, default=0.010)
    f.add_argument("--max-iterations", type=int, default=20000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    common(f)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("refine-seg", help="clean up a per-point object score")
    r.add_argument("--cloud")
    r.add_argument("--scores")
    r.add_argument("--intrinsics")
    r.add_argument("--sigma", type=float, default=2.0)
    r.add_argument("--min-size", type=int, default=50)
    r.add_argument("--out")
    common(r)
    r.set_defaults(func=cmd_refine_seg)

    s = sub.add_parser("synth", help="render synthetic scenes and ground truth")
    s.add_argument("--objects")
    s.add_argument("--n-scenes", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.001)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--corr", help="inlier_ratio,noise,model with model oracle or noisy:<overlap>")
    s.add_argument("--corr-pairs", type=int, default=1000)
    s.add_argument("--width", type=int, default=640)
    s.add_argument("--height", type=int, default=480)
    s.add_argument("--fx", type=float, default=600.0)
    s.add_argument("--distance", type=float, default=0.6)
    common(s)
    s.set_defaults(func=cmd_synth)
    return p


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(parser, argv, args):
    """Re-parse with config-file values as defaults so explicit flags win."""
    with open(args.config, "r", encoding="utf-8") as fh:
        try:
            conf = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(conf, dict):
        raise UsageError(f"{args.config}: top level must be an object")
    sp = _subparser(parser, args.command)
    dests = {a.dest for a in sp._actions}
    defaults = {}
    for k, v in conf.items():
        dest = k.lstrip("-").replace("-", "_")
        if dest not in dests or dest in ("config", "help"):
            raise UsageError(f"{args.config}: unknown option {k!r}")
        defaults[dest] = v
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except DegenerateDataError as exc:
        return _fail(EXIT_DEGENERATE, str(exc))
    except FitError as exc:
        return _fail(EXIT_FIT, str(exc))
    except (ParseError, GeometryError, KeyError, FileNotFoundError) as exc:
        return _fail(EXIT_MISMATCH, str(exc))
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
