"""Command-line entry point: ``vtinspect <command> ...``.

Exit codes: 0 on success, 1 when the inputs are valid requests that fail
in the domain (bad annotation, unreadable scan, infeasible scene), 2 for
usage errors. Failures print a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .classify import classify_scan
from .defects import DefectClass, DefectSpec
from .evaluation import EvalConfig, evaluate_detections
from .heightfield import load_heightfield
from .localization import LocalizationConfig
from .report import emit_report
from .sim import PRESETS, Mode, run_inspection, run_preset
from .synth import SceneRecipe, generate_tactile_suite, load_scene, write_scene_fixtures
from .vision import (
    BoundingBox,
    PhotometricParams,
    RoutingConfig,
    augment_cut_and_paste,
    augment_photometric,
    augment_translate,
    load_png,
    parse_detections,
    route_detections,
    save_png,
)
from .voc import GroundTruth, VocObject, load_voc_dir, parse_voc, validate_dir, write_voc


class DomainError(Exception):
    """A well-formed request that cannot be carried out."""


def _global_flags() -> argparse.ArgumentParser:
    # defaults are suppressed so a flag given before the command is not
    # overwritten by the subcommand parser's own default
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    p.add_argument("--format", choices=("json", "table"), default=argparse.SUPPRESS,
                   help="output rendering (default json)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="write the primary output here instead of stdout")
    p.add_argument("--loc-config", default=argparse.SUPPRESS, help="localization config JSON")
    return p


GLOBAL_DEFAULTS = {"seed": 0, "format": "json", "out": None, "loc_config": None}


def _score_cut(text: str) -> float | None:
    if text.lower() == "none":
        return None
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="vtinspect", parents=[g],
                                     description="Two-stage visuotactile surface-defect inspection tools.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    voc = sub.add_parser("voc", parents=[g], help="Pascal VOC annotation tools")
    voc_sub = voc.add_subparsers(dest="voc_command", required=True, metavar="action")
    v = voc_sub.add_parser("validate", parents=[g], help="parse every XML file and report errors and class counts")
    v.add_argument("directory")

    r = sub.add_parser("route", parents=[g], help="split detections into confirmed, delegated and discarded")
    r.add_argument("--detections", required=True)
    r.add_argument("--accept", type=float, default=0.7)
    r.add_argument("--delegate", type=float, default=0.1)

    a = sub.add_parser("augment", parents=[g], help="augment an RGB image and its boxes")
    a.add_argument("--op", required=True, choices=("photometric", "translate", "cutpaste"))
    a.add_argument("--image", required=True, help="input PNG (the paste target for cutpaste)")
    a.add_argument("--voc", help="VOC annotation of --image")
    a.add_argument("--src-image", help="cutpaste: PNG to cut defects from")
    a.add_argument("--src-voc", help="cutpaste: VOC annotation of --src-image")
    a.add_argument("--dx", type=int, help="translate: shift in x (drawn from the seed if omitted)")
    a.add_argument("--dy", type=int, help="translate: shift in y (drawn from the seed if omitted)")
    a.add_argument("--out-voc", help="write the augmented annotation here")

    t = sub.add_parser("tactile", parents=[g], help="tactile heightfield tools")
    t_sub = t.add_subparsers(dest="tactile_command", required=True, metavar="action")
    tc = t_sub.add_parser("classify", parents=[g], help="classify one tactile scan (.hfld or .csv)")
    tc.add_argument("scan")
    tc.add_argument("--spec", help="defect threshold table JSON")
    tc.add_argument("--all", action="store_true", help="report every defect site, not just the top one")

    e = sub.add_parser("eval", parents=[g], help="score detections against VOC ground truth")
    e.add_argument("--gt", required=True, help="directory of VOC XML files")
    e.add_argument("--pred", required=True, help="detections JSON")
    e.add_argument("--iou", type=float, default=0.4)
    e.add_argument("--max-det", type=int, default=100)
    e.add_argument("--classless", action="store_true")
    e.add_argument("--score-cut", type=_score_cut, default=0.5, help="minimum score kept, or 'none'")

    s = sub.add_parser("synth", parents=[g], help="synthetic data generation")
    s_sub = s.add_subparsers(dest="synth_command", required=True, metavar="action")
    ss = s_sub.add_parser("scene", parents=[g], help="generate a panel scene and write its fixtures")
    ss.add_argument("--recipe", help="scene recipe JSON (default: the 7/7/1 replica panel)")
    st = s_sub.add_parser("tactile-suite", parents=[g], help="write the 59-scan tactile fixture suite")
    st.add_argument("--noise", type=float, default=0.0, help="sensor noise sigma in mm")

    m = sub.add_parser("simulate", parents=[g], help="simulate an inspection run")
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="scene JSON written by 'synth scene' (or a recipe with a seed)")
    src.add_argument("--preset", choices=(*sorted(PRESETS), "table3"),
                     help="replica runs; 'table3' runs all three")
    m.add_argument("--mode", default="two-stage", help="two-stage, vision or touch (ignored with --preset)")
    m.add_argument("--report", help="same as --out")
    return parser


# ---------------------------------------------------------------------------
# commands


def _loc_cfg(args) -> LocalizationConfig | None:
    if not args.loc_config:
        return None
    return LocalizationConfig.load(args.loc_config).with_seed(args.seed)


def cmd_voc(args):
    result = validate_dir(args.directory)
    return result, 1 if result["errors"] else 0


def cmd_route(args):
    dets = parse_detections(args.detections)
    flat = [d for k in dets for d in dets[k]]
    return route_detections(flat, RoutingConfig(args.accept, args.delegate)), 0


def _read_boxes(path) -> tuple[list[BoundingBox], GroundTruth | None]:
    if not path:
        return [], None
    gt = parse_voc(path)
    return [BoundingBox(*o.bbox.as_list(), label=o.kind.value) for o in gt.objects], gt


def _boxes_doc(boxes) -> list[dict]:
    return [{"class": b.label, "bbox": b.as_list()} for b in boxes]


def cmd_augment(args):
    if not args.out:
        raise DomainError("augment needs --out for the output image")
    img = load_png(args.image)
    boxes, gt = _read_boxes(args.voc)
    rng = np.random.default_rng(args.seed)
    params: dict = {}
    if args.op == "photometric":
        p = PhotometricParams.sample(rng)
        out = augment_photometric(img, p)
        params = {"brightness": p.brightness, "contrast": p.contrast, "saturation": p.saturation, "hue": p.hue}
    elif args.op == "translate":
        dx = args.dx if args.dx is not None else int(rng.integers(-(img.width // 4), img.width // 4 + 1))
        dy = args.dy if args.dy is not None else int(rng.integers(-(img.height // 4), img.height // 4 + 1))
        out, boxes = augment_translate(img, boxes, dx, dy)
        params = {"dx": dx, "dy": dy}
    else:
        if not args.src_image:
            raise DomainError("cutpaste needs --src-image")
        src = load_png(args.src_image)
        src_boxes, _ = _read_boxes(args.src_voc)
        out, boxes = augment_cut_and_paste(src, src_boxes, img, boxes, seed=args.seed)
    save_png(out, args.out)
    if args.out_voc:
        objs = [VocObject(DefectClass.parse(b.label), BoundingBox(*b.as_list())) for b in boxes]
        write_voc(GroundTruth(Path(args.out).stem, (out.width, out.height, 3), objs), args.out_voc)
    doc = {"op": args.op, "seed": args.seed, "image": str(args.out), "params": params, "boxes": _boxes_doc(boxes)}
    return doc, 0, "stdout"


def cmd_tactile(args):
    hf = load_heightfield(args.scan)
    spec = DefectSpec.load(args.spec) if args.spec else None
    results = classify_scan(hf, _loc_cfg(args), spec)
    if args.all:
        return results, 0
    if args.format == "table":
        return results[:1], 0
    return results[0], 0


def cmd_eval(args):
    gt = load_voc_dir(args.gt)
    preds = parse_detections(args.pred)
    cfg = EvalConfig(args.iou, args.max_det, args.score_cut, args.classless)
    return evaluate_detections(gt, preds, cfg), 0


def cmd_synth(args):
    if args.synth_command == "scene":
        if not args.out:
            raise DomainError("synth scene needs --out <dir>")
        recipe = SceneRecipe.load(args.recipe) if args.recipe else SceneRecipe()
        return write_scene_fixtures(recipe, args.seed, args.out), 0, "stdout"
    if not args.out:
        raise DomainError("synth tactile-suite needs --out <dir>")
    from .heightfield import save_heightfield

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for f in generate_tactile_suite(seed=args.seed, noise_sigma=args.noise, noise_seed=args.seed):
        save_heightfield(f.heightfield, out / f"{f.name}.hfld")
        names.append({"file": f"{f.name}.hfld", "label": f.label.value, "feature": f.feature})
    (out / "labels.json").write_text(json.dumps(names, indent=2) + "\n")
    return {"out": str(out), "fixtures": len(names)}, 0, "stdout"


def cmd_simulate(args):
    if args.report:
        args.out = args.report
    if args.preset == "table3":
        return [run_preset(name, args.seed) for name in ("table3-vision", "table3-touch", "table3-twostage")], 0
    if args.preset:
        return run_preset(args.preset, args.seed), 0
    scene = load_scene(args.scene)
    return run_inspection(scene, Mode.parse(args.mode), seed=args.seed, loc_cfg=_loc_cfg(args)), 0


COMMANDS = {
    "voc": cmd_voc, "route": cmd_route, "augment": cmd_augment, "tactile": cmd_tactile,
    "eval": cmd_eval, "synth": cmd_synth, "simulate": cmd_simulate,
}

DOMAIN_ERRORS = (ValueError, TypeError, KeyError, OSError, RuntimeError, DomainError, json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        result = COMMANDS[args.command](args)
        report, code = result[0], result[1]
        # commands whose --out names a data product print their summary instead
        dest = None if len(result) > 2 else args.out
        emit_report(report, args.format, dest)
    except DOMAIN_ERRORS as e:
        msg = str(e).replace("\n", " ") or type(e).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
