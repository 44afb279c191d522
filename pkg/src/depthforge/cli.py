"""``depthforge`` command-line entry point.

Exit codes: 0 success, 1 validation or I/O error, 2 usage error.
Option precedence: command-line flags, then ``--config`` JSON, then the
built-in defaults (see ``depthforge --show-defaults``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from depthforge import __version__
from depthforge import depthmix, geo_match, pseudo_label, selection
from depthforge.depthmix import MixConfig
from depthforge.errors import DepthForgeError, FormatError
from depthforge.geo_match import GeoMatchConfig, MixPlan
from depthforge.io import (
    dump_json, load_json, read_disparity, read_segmap, read_tensor,
    write_disparity, write_image, write_segmap, write_tensor,
)
from depthforge.manifest import parse_entry, load_manifest
from depthforge.pipeline import evaluate_loss_plan, execute_plans, load_entry, mix_loaded, write_mixed
from depthforge.provenance import provenance
from depthforge.pseudo_label import ClassLogitMap, LossConfig, argmax_label
from depthforge.synth import DatasetSpec, SceneSpec, generate_dataset, generate_scene

log = logging.getLogger("depthforge")

DEFAULTS = {
    "epsilon": depthmix.DEFAULT_EPSILON,
    "alpha": pseudo_label.DEFAULT_ALPHA,
    "tau": pseudo_label.DEFAULT_TAU,
    "lambda_f": pseudo_label.DEFAULT_LAMBDA_F,
    "lambda_e": selection.DEFAULT_LAMBDA_E,
    "schedule": list(selection.DEFAULT_SCHEDULE),
    "top_margin": geo_match.DEFAULT_TOP_MARGIN,
    "bottom_margin": geo_match.DEFAULT_BOTTOM_MARGIN,
    "num_candidates": geo_match.DEFAULT_NUM_CANDIDATES,
    "seed": 0,
    "threads": 1,
}


def _schedule(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"schedule must be comma-separated integers, got {text!r}")


def _threads(value) -> int:
    if value in (None, ""):
        value = os.environ.get("DEPTHFORGE_THREADS", "1")
    if str(value) == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise DepthForgeError(f"threads must be a positive integer or 'auto', got {value!r}")
    if n < 1:
        raise DepthForgeError(f"threads must be >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random draw (default 0)")
    common.add_argument("--threads", default=None,
                        help="worker count or 'auto' (fallback: $DEPTHFORGE_THREADS, then 1)")
    common.add_argument("--log-level", default="WARNING")
    common.add_argument("--config", help="JSON file of option defaults")

    parser = argparse.ArgumentParser(prog="depthforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"depthforge {__version__}")
    parser.add_argument("--show-defaults", action="store_true", help="print built-in defaults and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("select", parents=[common], help="choose images for annotation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--schedule", type=_schedule, default=DEFAULTS["schedule"])
    p.add_argument("--lambda-e", type=float, default=DEFAULTS["lambda_e"])
    p.add_argument("--uncertainty-dir", help="student disparities or step{t}.json score files")
    p.add_argument("--domain", choices=["all", "source", "target"], default="all")
    p.add_argument("--out", required=True)

    p = sub.add_parser("mix", parents=[common], help="DepthMix a pair or every planned mix")
    p.add_argument("--pair", nargs=2, metavar=("A", "B"), help="two sample descriptor JSON files")
    p.add_argument("--plans", help="plan list written by plan-ssda")
    p.add_argument("--manifest", help="manifest the plans refer to")
    p.add_argument("--epsilon", type=float, default=DEFAULTS["epsilon"])
    p.add_argument("--tau", type=float, default=DEFAULTS["tau"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("pseudo-label", parents=[common], help="argmax label and confidence")
    p.add_argument("--probs", required=True, help="(C, H, W) DFT1 tensor")
    p.add_argument("--out", required=True, help="LABEL.png,CONF.dft1")
    p.add_argument("--logits", action="store_true", help="scores are pre-softmax")
    p.add_argument("--ignore-index", type=int, default=255)

    p = sub.add_parser("match-geometry", parents=[common], help="rank candidates by geometric difference")
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", required=True, help="directory of disparity PNGs")
    p.add_argument("--top-margin", type=int, default=DEFAULTS["top_margin"])
    p.add_argument("--bottom-margin", type=int, default=DEFAULTS["bottom_margin"])
    p.add_argument("--absolute-margins", action="store_true",
                   help="do not rescale margins for heights other than 512")

    p = sub.add_parser("plan-ssda", parents=[common], help="plan SSDA training batches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--batches", type=int, default=1)
    p.add_argument("--num-candidates", type=int, default=DEFAULTS["num_candidates"])
    p.add_argument("--top-margin", type=int, default=DEFAULTS["top_margin"])
    p.add_argument("--bottom-margin", type=int, default=DEFAULTS["bottom_margin"])
    p.add_argument("--absolute-margins", action="store_true")
    p.add_argument("--epsilon", type=float, default=DEFAULTS["epsilon"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("loss-report", parents=[common], help="aggregate losses of a loss plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--lambda-f", type=float, default=DEFAULTS["lambda_f"])
    p.add_argument("--tau", type=float, default=DEFAULTS["tau"])
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("stats", parents=[common], help="per-class ratio of selected pixels")
    p.add_argument("--selected", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--domain", choices=["all", "source", "target"], default="all")
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("synthgen", parents=[common], help="generate a synthetic scene or dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = load_json(known.config)
    if not isinstance(cfg, dict):
        raise FormatError(f"{known.config}: config must be a JSON object")
    section = cfg.get(known.command, {}) if known.command else {}
    flat = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    flat.update({k.replace("-", "_"): v for k, v in section.items()})
    for action in parser._subparsers._group_actions:
        for name, subparser in action.choices.items():
            if name == known.command:
                subparser.set_defaults(**flat)


def _emit(doc: dict, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        dump_json(doc, out)
    else:
        print(json.dumps(doc, sort_keys=True, indent=2))


def _margins(args) -> GeoMatchConfig:
    return GeoMatchConfig(args.top_margin, args.bottom_margin,
                          getattr(args, "num_candidates", geo_match.DEFAULT_NUM_CANDIDATES),
                          args.seed, scale_margins=not args.absolute_margins)


def _domain_ids(manifest, domain: str) -> list[str]:
    return manifest.ids() if domain == "all" else manifest.ids(domain=domain)


# -- subcommands -------------------------------------------------------------------

def cmd_select(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = selection.SelectionConfig(tuple(args.schedule), args.lambda_e, args.seed)
    provider = selection.provider_for(args.uncertainty_dir, manifest) if args.uncertainty_dir else None
    meta = provenance(args.seed, [args.manifest], Path(args.manifest).parent)
    meta["domain"] = args.domain
    selection.run_selection(manifest, cfg, provider, args.out, _domain_ids(manifest, args.domain), meta)
    return 0


def _load_descriptor(path: str):
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: sample descriptor must be a JSON object")
    try:
        entry = parse_entry(doc, 0)
        num_classes = int(doc["num_classes"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: sample descriptor needs num_classes") from exc
    except DepthForgeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return load_entry(entry, Path(path).parent, num_classes, int(doc.get("ignore_index", 255)))


def cmd_mix(args) -> int:
    threads = _threads(args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.pair and args.plans:
        raise DepthForgeError("use either --pair or --plans, not both")
    if args.pair:
        a, b = (_load_descriptor(p) for p in args.pair)
        mixed, pred, stats = mix_loaded(a, b, MixConfig(args.epsilon), args.tau)
        write_mixed(mixed, out, pred)
        doc = provenance(args.seed, args.pair, None)
        doc.update({"kind": "pair", "sample_i": a.sample.image_id, "sample_j": b.sample.image_id,
                    "epsilon": args.epsilon, **stats})
        dump_json(doc, out / "mixplan.json")
        return 0
    if not (args.plans and args.manifest):
        raise DepthForgeError("mix needs --pair A B, or --plans with --manifest")
    manifest = load_manifest(args.manifest)
    raw = load_json(args.plans)
    plans = [MixPlan.from_json(p) for p in (raw.get("plans", []) if isinstance(raw, dict) else raw)]
    geo_match.validate_plans(plans, manifest)
    docs, items = execute_plans(plans, manifest, out, args.tau, threads)
    seed = raw.get("seed", args.seed) if isinstance(raw, dict) else args.seed
    prov = provenance(seed, [args.manifest, args.plans], Path(args.manifest).parent)
    dump_json({**prov, "tau": args.tau, "plans": docs}, out / "mixplan.json")
    dump_json({**prov, "num_classes": manifest.num_classes, "ignore_index": manifest.ignore_index,
               "items": items}, out / "loss_plan.json")
    return 0


def cmd_pseudo_label(args) -> int:
    parts = args.out.split(",")
    if len(parts) != 2:
        raise DepthForgeError("--out must be LABEL.png,CONF.dft1")
    scores = read_tensor(args.probs).astype(np.float64)
    label, conf = argmax_label(ClassLogitMap(scores, normalized=not args.logits), args.ignore_index)
    write_segmap(label, parts[0])
    write_tensor(conf.data, parts[1])
    return 0


def cmd_match_geometry(args) -> int:
    cfg = _margins(args)
    target = read_disparity(args.target)
    paths = sorted(Path(args.candidates).glob("*.png"))
    if not paths:
        raise DepthForgeError(f"{args.candidates}: no candidate PNG files")
    cands = [(p.stem, read_disparity(p)) for p in paths]
    scored = geo_match.score_candidates(target, cands, cfg, _threads(args.threads))
    winner = min(scored, key=lambda s: (s[1], s[0]))[0]
    for cid, g in scored:
        mark = "\t*" if cid == winner else ""
        print(f"{cid}\t{g:.9g}{mark}")
    return 0


def cmd_plan_ssda(args) -> int:
    if args.batches < 1:
        raise DepthForgeError("--batches must be >= 1")
    manifest = load_manifest(args.manifest)
    cfg = _margins(args)
    plans = geo_match.plan_ssda(manifest, cfg, args.batches, geo_match.cached_disparity_loader(manifest),
                                args.epsilon, _threads(args.threads))
    doc = provenance(args.seed, [args.manifest], Path(args.manifest).parent)
    doc.update({"batches": args.batches, "num_candidates": cfg.num_candidates,
                "top_margin": cfg.top_margin, "bottom_margin": cfg.bottom_margin,
                "scale_margins": cfg.scale_margins, "epsilon": args.epsilon,
                "plans": [p.to_json() for p in plans]})
    _emit(doc, args.out)
    return 0


def cmd_loss_report(args) -> int:
    doc = load_json(args.plan)
    result = evaluate_loss_plan(doc, Path(args.plan).parent, LossConfig(args.lambda_f, args.tau))
    seed = doc.get("seed", args.seed) if isinstance(doc, dict) else args.seed
    _emit({**provenance(seed, [args.plan], None), **result}, args.out)
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest(args.manifest)
    raw = load_json(args.selected)
    chosen = raw.get("selected") if isinstance(raw, dict) else raw
    if not isinstance(chosen, list):
        raise FormatError(f"{args.selected}: expected a list of ids or an object with 'selected'")
    pool = _domain_ids(manifest, args.domain)
    unknown = sorted(set(chosen) - set(pool))
    if unknown:
        raise DepthForgeError(f"selected ids not in the manifest pool: {unknown[:3]}")
    maps = {i: read_segmap(manifest.path(i, "label"), manifest.num_classes, manifest.ignore_index)
            for i in pool}
    table = selection.class_frequency_report([maps[i] for i in chosen], list(maps.values()),
                                             manifest.num_classes)
    doc = provenance(args.seed, [args.manifest, args.selected], Path(args.manifest).parent)
    doc.update({"selected_count": len(chosen), "total_count": len(pool), "classes": table})
    _emit(doc, args.out)
    return 0


def cmd_synthgen(args) -> int:
    spec_doc = load_json(args.spec)
    if not isinstance(spec_doc, dict):
        raise FormatError(f"{args.spec}: spec must be a JSON object")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(spec_doc.get("seed", 0))
    if "num_source" in spec_doc or "num_target" in spec_doc:
        spec = DatasetSpec.from_json({**spec_doc, "seed": seed})
        generate_dataset(spec, out)
        summary = {"kind": "dataset", "spec": vars(spec)}
    else:
        try:
            spec = SceneSpec.from_json({**spec_doc, "seed": seed})
        except TypeError as exc:
            raise FormatError(f"{args.spec}: invalid scene spec ({exc})") from exc
        scene = generate_scene(spec)
        write_image(scene.image, out / "image.png")
        write_disparity(scene.disparity, out / "disparity.png")
        write_segmap(scene.label, out / "label.png")
        summary = {"kind": "scene", "spec": spec.to_json()}
    dump_json({**provenance(seed, [args.spec], None), **summary}, out / "synthgen.json")
    return 0


COMMANDS = {
    "select": cmd_select,
    "mix": cmd_mix,
    "pseudo-label": cmd_pseudo_label,
    "match-geometry": cmd_match_geometry,
    "plan-ssda": cmd_plan_ssda,
    "loss-report": cmd_loss_report,
    "stats": cmd_stats,
    "synthgen": cmd_synthgen,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DepthForgeError as exc:
        print(f"depthforge: error: {exc}", file=sys.stderr)
        return 1

    if args.show_defaults:
        print(json.dumps(DEFAULTS, sort_keys=True, indent=2))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        print("depthforge: error: a command is required", file=sys.stderr)
        return 2

    if args.seed is None and args.command != "synthgen":
        args.seed = DEFAULTS["seed"]
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DepthForgeError as exc:
        print(f"depthforge: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"depthforge: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
