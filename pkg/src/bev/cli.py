"""Command-line entry point ``bev``.

Every command writes its declared outputs (``-`` means stdout), prints a
one-line summary on stderr, and exits 0 on success, 1 on domain errors and 2 on
usage errors (bad flags or configuration).
"""
import argparse
import json
import sys

import numpy as np

from . import dataio, kernels
from .body_model import BodyParams, mesh_height, smpl_plus_a
from .camera import build_anchor_maps
from .config import RunConfig
from .errors import BEVError, ConfigError, SceneCountMismatch
from .gradcheck import format_results, run_suite
from .maps import MapSet, compose_3d, compose_offsets_3d, parse_detections, render_gt_maps
from .metrics import MetricsReport, evaluate
from .scenegen import SceneSpec, generate, oracle_predictions, perturb

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _summary(msg):
    print(msg, file=sys.stderr)


def _dump_json(obj, path):
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load_params(args):
    if args.params:
        with open(args.params, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise dataio.ParseError(f"invalid JSON ({exc.msg})", line=exc.lineno) from exc
        try:
            return BodyParams.from_dict(data)
        except KeyError as exc:
            raise dataio.ParseError("missing body parameter", field=str(exc.args[0])) from exc
    return BodyParams.rest(alpha=args.alpha)


# ---------------------------------------------------------------------------
# commands

def cmd_model_info(args, cfg):
    assets = cfg.assets()
    rest = smpl_plus_a(BodyParams.rest(), assets, cfg.t_alpha)
    info = {
        "num_vertices": assets.num_vertices,
        "num_skeleton_joints": assets.num_joints,
        "num_eval_joints": int(assets.joint_regressor_eval.shape[0]),
        "num_faces": 0 if assets.faces is None else int(len(assets.faces)),
        "has_infant_assets": assets.infant_assets is not None,
        "rest_height_adult": mesh_height(rest.vertices),
        "rest_height_infant": mesh_height(smpl_plus_a(BodyParams.rest(alpha=1.0), assets, cfg.t_alpha).vertices),
        "t_alpha": cfg.t_alpha,
        "invariant_violations": assets.invariant_violations(),
        "kernel_backend": kernels.BACKEND,
    }
    _dump_json(info, args.out)
    _summary(f"model-info: {info['num_vertices']} vertices, {info['num_skeleton_joints']} joints, "
             f"{len(info['invariant_violations'])} invariant violations")
    return EXIT_OK if not info["invariant_violations"] else EXIT_DOMAIN


def cmd_lbs_eval(args, cfg):
    params = _load_params(args)
    mesh = smpl_plus_a(params, cfg.assets(), cfg.t_alpha)
    dataio.save_arrays(args.out, {"vertices": mesh.vertices, "joints": mesh.joints},
                       {"alpha": params.alpha, "t_alpha": cfg.t_alpha})
    _summary(f"lbs-eval: {len(mesh.vertices)} vertices, height {mesh_height(mesh.vertices):.4f} m")
    return EXIT_OK


def cmd_export_anchors(args, cfg):
    anchors = build_anchor_maps(cfg.grid(), cfg.camera())
    dataio.save_arrays(args.out, {"anchors": anchors.anchors, "bin_depths": cfg.grid().bin_depths()},
                       {"camera": cfg["camera"], "grid": cfg["grid"]})
    _summary(f"export-anchors: grid {anchors.shape}, spacing {cfg['grid']['spacing']}")
    return EXIT_OK


def _scene_maps_to_arrays(maps_list):
    arrays = {}
    for i, m in enumerate(maps_list):
        for k, v in m.as_dict().items():
            arrays[f"{i:05d}/{k}"] = v
    return arrays


def _arrays_to_scene_maps(arrays, count):
    out = []
    for i in range(count):
        prefix = f"{i:05d}/"
        sub = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        out.append(MapSet.from_dict(sub))
    return out


def cmd_render_maps(args, cfg):
    scenes = dataio.load_annotations(args.annotations)
    grid, cam = cfg.grid(), cfg.camera()
    maps_list = []
    for s in scenes:
        missing = [i for i, p in enumerate(s.people) if p.gt_translation is None]
        if missing:
            raise dataio.ParseError(f"scene {s.image_id!r}: people {missing} lack gt_translation",
                                    field="gt_translation")
        maps_list.append(render_gt_maps([p.gt_translation for p in s.people], grid, cam,
                                        cfg["parse"]["sigma"]))
    dataio.save_arrays(args.out, _scene_maps_to_arrays(maps_list),
                       {"image_ids": [s.image_id for s in scenes], "grid": cfg["grid"],
                        "camera": cfg["camera"], "sigma": cfg["parse"]["sigma"]})
    _summary(f"render-maps: {len(scenes)} scenes, {sum(len(s.people) for s in scenes)} people")
    return EXIT_OK


def cmd_parse_maps(args, cfg):
    arrays, meta = dataio.load_arrays(args.maps)
    ids = meta.get("image_ids")
    if not isinstance(ids, list):
        raise dataio.ParseError("map container lacks the image_ids list", field="image_ids")
    anchors = build_anchor_maps(cfg.grid(), cfg.camera())
    p = cfg["parse"]
    preds = []
    for image_id, m in zip(ids, _arrays_to_scene_maps(arrays, len(ids))):
        if args.compose:
            c3d = compose_3d(m.front_center, m.bev_center)
            o3d = compose_offsets_3d(m.front_offset, m.bev_offset)
        else:
            c3d, o3d = m.center3d, m.offset3d
        dets = parse_detections(c3d, o3d, anchors, p["threshold"], p["max_people"])
        preds.append(dataio.PredictionScene(image_id, [dataio.PersonPrediction(d.translation, d.confidence)
                                                       for d in dets]))
    dataio.save_predictions(preds, args.out)
    _summary(f"parse-maps: {len(preds)} scenes, {sum(len(s.people) for s in preds)} detections")
    return EXIT_OK


def _scene_spec(args):
    mix = json.loads(args.age_mix) if args.age_mix else None
    kw = {} if mix is None else {"age_mix": mix}
    try:
        return SceneSpec(seed=args.seed, people_range=(args.min_people, args.max_people),
                         depth_range=(args.depth_min, args.depth_max), forced_overlap=not args.no_overlap,
                         **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args, cfg):
    spec = _scene_spec(args)
    grid, cam = cfg.grid(), cfg.camera()
    scenes, maps_list = generate(spec, args.scenes, cfg.assets(), grid, cam, cfg.t_alpha, cfg.gamma,
                                 cfg.age_ranges(), cfg["parse"]["sigma"], with_maps=bool(args.maps_out))
    dataio.save_annotations(scenes, args.out)
    if args.maps_out:
        dataio.save_arrays(args.maps_out, _scene_maps_to_arrays(maps_list),
                           {"image_ids": [s.image_id for s in scenes], "grid": cfg["grid"],
                            "camera": cfg["camera"], "sigma": cfg["parse"]["sigma"],
                            "scene_spec": spec.to_dict()})
    _summary(f"synth: {len(scenes)} scenes, {sum(len(s.people) for s in scenes)} people (seed {spec.seed})")
    return EXIT_OK


def cmd_perturb(args, cfg):
    scenes = dataio.load_annotations(args.annotations)
    preds = perturb(scenes, args.depth_jitter, args.kp_jitter, args.drop_rate, args.seed)
    dataio.save_predictions(preds, args.out)
    _summary(f"perturb: {sum(len(s.people) for s in preds)} of {sum(len(s.people) for s in scenes)} people kept")
    return EXIT_OK


def _align_predictions(gt, preds):
    if len(gt) != len(preds):
        raise SceneCountMismatch(f"{len(gt)} annotated scenes vs {len(preds)} prediction scenes")
    by_id = {p.image_id: p for p in preds}
    if len(by_id) == len(preds) and set(by_id) == {s.image_id for s in gt}:
        return [by_id[s.image_id] for s in gt]
    return preds


def cmd_eval(args, cfg):
    m = cfg["metrics"]
    run_cfg = {"run": cfg.to_dict(), "kernel_backend": kernels.BACKEND}
    if args.errors:
        with open(args.errors, encoding="utf-8") as fh:
            e = json.load(fh)
        try:
            report = MetricsReport.from_errors(float(e["mpjpe"]), float(e["mve"]), float(e["f1"]),
                                               config=run_cfg)
        except KeyError as exc:
            raise dataio.ParseError("missing error value", field=str(exc.args[0])) from exc
    else:
        gt = dataio.load_annotations(args.gt)
        assets = cfg.assets()
        cam = cfg.camera()
        if args.pred:
            preds = _align_predictions(gt, dataio.load_predictions(args.pred))
            run_cfg["mode"] = "predictions"
        else:
            grid = cfg.grid()
            maps_list = [render_gt_maps([p.gt_translation for p in s.people], grid, cam,
                                        cfg["parse"]["sigma"]) for s in gt]
            preds = oracle_predictions(gt, maps_list, grid, cam, cfg["parse"]["threshold"],
                                       cfg["parse"]["max_people"])
            run_cfg["mode"] = "oracle"
        report = evaluate(gt, preds, cam, assets, cfg.t_alpha, m["match_threshold_px"],
                          m["eq_depth_threshold"], m["pck_factor"], m["pcdr_attribution"], config=run_cfg)
    text = report.format_text() + "\n  config: " + json.dumps(report.config, sort_keys=True) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    if args.json_out:
        _dump_json(report.to_dict(), args.json_out)
    _summary(f"eval: F1 {report.f1:.3f}, NMJE {report.nmje:.1f} mm, NMVE {report.nmve:.1f} mm")
    return EXIT_OK


def cmd_grad_check(args, cfg):
    results = run_suite(args.points, args.seed, names=args.suite or None)
    text = format_results(results)
    print(text)
    if args.json_out:
        _dump_json({"suites": [r.to_dict() for r in results], "points": args.points, "seed": args.seed},
                   args.json_out)
    failed = [r.name for r in results if not r.passed]
    _summary(f"grad-check: {len(results) - len(failed)}/{len(results)} suites pass"
             + (f" (failed: {', '.join(failed)})" if failed else ""))
    return EXIT_DOMAIN if failed else EXIT_OK


def cmd_validate(args, cfg):
    try:
        dataio.load_annotations(args.annotations)
    except dataio.SchemaViolation as exc:
        for v in exc.violations:
            print(v)
        _summary(f"validate: {len(exc.violations)} violations in {args.annotations}")
        return EXIT_DOMAIN
    _summary(f"validate: {args.annotations} is clean")
    return EXIT_OK


def cmd_stats(args, cfg):
    scenes = dataio.load_annotations(args.annotations)
    st = dataio.stats(scenes)
    _dump_json(st, args.out)
    _summary(f"stats: {st['people']} people in {st['scenes']} scenes, "
             f"{100 * st['young_fraction']:.1f}% young")
    return EXIT_OK


def cmd_export_mesh(args, cfg):
    params = _load_params(args)
    assets = cfg.assets()
    mesh = smpl_plus_a(params, assets, cfg.t_alpha)
    faces = assets.infant_assets.faces if params.alpha > cfg.t_alpha and assets.infant_assets else assets.faces
    translation = np.asarray(args.translation, dtype=np.float64)
    dataio.write_obj(args.out, mesh.vertices + translation, faces)
    _summary(f"export-mesh: {len(mesh.vertices)} vertices, {0 if faces is None else len(faces)} faces")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="bev", description="Monocular multi-person 3D geometry toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: $BEV_CONFIG)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. grid.D=32 (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=fn)
        return p

    def params_flags(p):
        p.add_argument("--params", help="JSON file with theta (22x6), beta (10), alpha")
        p.add_argument("--alpha", type=float, default=0.0, help="age offset for the rest pose")

    p = add("model-info", cmd_model_info, "Summarise the body-model assets.")
    p.add_argument("--out", default="-")
    p = add("lbs-eval", cmd_lbs_eval, "Evaluate the body model and write vertices/joints.")
    params_flags(p)
    p.add_argument("--out", required=True)
    p = add("export-anchors", cmd_export_anchors, "Write the 3D camera anchor maps.")
    p.add_argument("--out", required=True)
    p = add("render-maps", cmd_render_maps, "Render ground-truth maps for annotated scenes.")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p = add("parse-maps", cmd_parse_maps, "Parse 3D detections from a map container.")
    p.add_argument("--maps", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--compose", action="store_true", help="compose front and bird's-eye maps first")
    p = add("synth", cmd_synth, "Generate synthetic annotated scenes.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--min-people", type=int, default=3)
    p.add_argument("--max-people", type=int, default=10)
    p.add_argument("--depth-min", type=float, default=2.0)
    p.add_argument("--depth-max", type=float, default=14.0)
    p.add_argument("--age-mix", help='JSON object, e.g. {"adult": 0.79, "child": 0.21}')
    p.add_argument("--no-overlap", action="store_true", help="disable the forced image-plane overlap pair")
    p.add_argument("--out", default="-")
    p.add_argument("--maps-out", help="also write ground-truth maps here")
    p = add("perturb", cmd_perturb, "Derive degraded prediction records from annotations.")
    p.add_argument("--annotations", required=True)
    p.add_argument("--depth-jitter", type=float, default=0.0)
    p.add_argument("--kp-jitter", type=float, default=0.0)
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p = add("eval", cmd_eval, "Evaluate predictions (or the map oracle) against annotations.")
    p.add_argument("--gt", default="-", help="annotation file ('-' = stdin)")
    p.add_argument("--pred", help="prediction file; omitted = oracle pipeline on the ground truth")
    p.add_argument("--errors", help="JSON with mpjpe, mve, f1 (audit of the F1 normalisation)")
    p.add_argument("--out", default="-")
    p.add_argument("--json-out")
    p = add("grad-check", cmd_grad_check, "Finite-difference audit of all analytic gradients.")
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    p.add_argument("--json-out")
    p = add("validate", cmd_validate, "Check an annotation file against the schema.")
    p.add_argument("annotations")
    p = add("stats", cmd_stats, "Age-class and depth-layer counts of an annotation file.")
    p.add_argument("annotations")
    p.add_argument("--out", default="-")
    p = add("export-mesh", cmd_export_mesh, "Write a body mesh as Wavefront OBJ.")
    params_flags(p)
    p.add_argument("--translation", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.set)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"bev {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BEVError, ValueError, KeyError) as exc:
        print(f"bev {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"bev {args.command}: error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
