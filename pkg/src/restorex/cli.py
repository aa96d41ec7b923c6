"""``restorex`` command line.

Exit codes: 0 success, 1 invalid input, 2 usage error, 3 stop recommended
(``monitor`` only).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .artifact_io import (
    flatten_detections,
    flatten_ground_truth,
    parse_detections,
    parse_ground_truth,
    read_manifest_file,
    read_png,
    read_tensor_file,
    write_png,
    write_tensor_file,
)
from .detection_eval import ALL_POINT, AP_MODES, EvalConfig, evaluate, format_db, psnr
from .errors import RestorexError
from .fixtures import FixtureSpec, generate, parse_targets
from .gradcam import cam_to_tensor, gradcam, normalize, upsample
from .quality_monitor import (
    PAIRING_MODES,
    PRIMARY_OBJECT,
    GuidancePolicy,
    build_samples,
    phi,
    stage_attention,
    trajectory,
)
from .report import dump_json, provenance, render_markdown, render_overlay, report_from_rows
from .similarity import MODES, default_table, normalize_label, read_table_file, similarity

log = logging.getLogger("restorex")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_STOP = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        _diagnose(self.prog, "UsageError", message)
        sys.stderr.write(f"run '{self.prog} --help' for usage\n")
        raise SystemExit(EXIT_USAGE)


def _diagnose(command: str, kind: str, detail: str) -> None:
    sys.stderr.write(json.dumps({"command": command, "error": kind, "detail": detail}) + "\n")


def _unit_open(text: str) -> float:
    x = float(text)
    if not 0.0 < x < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return x


def _unit_closed(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {text}")
    return x


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return n


def _csv(text: str) -> tuple[str, ...]:
    try:
        items = tuple(normalize_label(t) for t in text.split(",") if t.strip())
    except RestorexError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _dims(text: str) -> tuple[int, ...]:
    return tuple(_positive_int(t) for t in text.replace("x", ",").split(","))


def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("RESTOREX_THREADS")
    if env:
        try:
            return _positive_int(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"RESTOREX_THREADS must be a positive integer, got {env!r}")
    return os.cpu_count() or 1


def _load_table(path: Optional[Path], mode: Optional[str] = None):
    table = read_table_file(path) if path else default_table()
    return table.with_mode(mode) if mode else table


def _say(args, text: str) -> None:
    if not (args.quiet or args.json_only):
        print(text)


def _stamp(args, prov: dict[str, Any]) -> dict[str, Any]:
    if args.timestamp:
        prov["generated_at"] = datetime.now(timezone.utc).isoformat()
    return prov


# -- subcommands --------------------------------------------------------------


def cmd_eval(args) -> int:
    dets = parse_detections(args.detections.read_bytes())
    gts = parse_ground_truth(args.ground_truth.read_bytes())
    table = _load_table(args.similarity)
    config = EvalConfig(args.iou, args.ap_mode, args.classes)
    report = evaluate(flatten_detections(dets), flatten_ground_truth(gts), table, config)
    doc = report.to_json()
    inputs = [args.detections, args.ground_truth] + ([args.similarity] if args.similarity else [])
    doc["provenance"] = _stamp(args, provenance(inputs, {
        "command": "eval",
        "iou": args.iou,
        "ap_mode": args.ap_mode,
        "classes": list(report.classes),
        "similarity_mode": table.mode,
    }))
    text = dump_json(doc)
    if args.out is None or args.json_only:
        if args.out is not None:
            args.out.write_text(text)
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
        disp = report.display()
        _say(args, "  ".join(f"{c}={disp[c]}" for c in report.classes) + f"  mAP={disp['map']}")
    if args.markdown:
        run = report_from_rows(args.technique, report.classes, [(args.row_label, report.aps)],
                               prov=doc["provenance"])
        args.markdown.write_text(render_markdown(run))
    return EXIT_OK


def cmd_phi(args) -> int:
    dets = parse_detections(args.detections.read_bytes())
    gts = parse_ground_truth(args.ground_truth.read_bytes())
    table = _load_table(args.similarity, args.mode)
    samples = build_samples(dets, gts, table, args.pairing)
    q = phi(samples, args.stage_id)
    doc = {"id": q.stage_id, "n": q.n, "phi": q.phi}
    if args.samples:
        doc["samples"] = [
            {"image_id": s.image_id, "p": s.p, "a": s.a, "s": s.s, "d": s.d, "term": s.term}
            for s in samples
        ]
    sys.stdout.write(dump_json(doc))
    return EXIT_OK


def cmd_monitor(args) -> int:
    manifest = read_manifest_file(args.manifest)
    table = _load_table(args.similarity, args.mode)
    policy = GuidancePolicy.from_json(args.policy.read_bytes()) if args.policy else GuidancePolicy()
    traj = trajectory(manifest, table, policy, args.pairing, args.threads)
    if args.attention:
        for entry in manifest:
            traj.attention[entry.stage_id] = stage_attention(entry, args.threads)
    doc = traj.to_json()
    inputs = [args.manifest] + [p for p in (args.similarity, args.policy) if p]
    for entry in manifest:
        inputs += [entry.detections_path, entry.ground_truth_path]
    doc["provenance"] = _stamp(args, provenance(dict.fromkeys(inputs), {
        "command": "monitor",
        "pairing": args.pairing,
        "similarity_mode": table.mode,
        "policy": {"drop_tolerance": policy.drop_tolerance, "patience": policy.patience,
                   "min_phi": policy.min_phi},
    }))
    text = dump_json(doc)
    if args.out is not None:
        args.out.write_text(text)
    if args.out is None or args.json_only:
        sys.stdout.write(text)
    else:
        for rec in doc["stages"]:
            _say(args, f"stage {rec['id']}: n={rec['n']} phi={rec['phi']:.4f} {rec['decision']}")
        if traj.rollback_to is not None:
            _say(args, f"rollback recommended to stage {traj.rollback_to}")
    return EXIT_STOP if traj.stopped else EXIT_OK


def cmd_gradcam(args) -> int:
    feats = read_tensor_file(args.features)
    grads = read_tensor_file(args.gradients)
    m = gradcam(feats, grads)
    write_tensor_file(args.out, cam_to_tensor(m))
    if args.overlay is not None:
        if args.out_png is None:
            raise UsageError("--overlay requires --out-png")
        image = read_png(args.overlay)
        heat = upsample(normalize(m), image.shape[0], image.shape[1])
        write_png(args.out_png, render_overlay(image, heat, args.alpha))
    elif args.out_png is not None:
        raise UsageError("--out-png requires --overlay")
    _say(args, f"cam {m.shape[0]}x{m.shape[1]} max={float(m.values.max()):.6g} -> {args.out}")
    return EXIT_OK


def cmd_psnr(args) -> int:
    value = psnr(read_png(args.a), read_png(args.b))
    if args.json_only:
        sys.stdout.write(json.dumps({"psnr_db": format_db(value)}) + "\n")
    else:
        print(format_db(value))
    return EXIT_OK


def cmd_fixtures(args) -> int:
    kwargs: dict[str, Any] = dict(seed=args.seed, n_images=args.images, n_stages=args.stages,
                                  with_tensors=not args.no_tensors, with_images=not args.no_images)
    if args.phi_targets:
        kwargs["phi_targets"] = parse_targets(args.phi_targets)
    if args.classes:
        kwargs["classes"] = args.classes
    if args.tensor_dims:
        if len(args.tensor_dims) != 3:
            raise UsageError("--tensor-dims needs k,u,v")
        kwargs["tensor_dims"] = args.tensor_dims
    if args.image_size:
        if len(args.image_size) != 2:
            raise UsageError("--image-size needs HxW")
        kwargs["image_size"] = args.image_size
    try:
        spec = FixtureSpec(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc))
    manifest = generate(spec, args.out)
    _say(args, f"wrote {manifest}")
    return EXIT_OK


def cmd_similarity(args) -> int:
    table = _load_table(args.table, args.mode)
    print(similarity(normalize_label(args.p), normalize_label(args.a), table))
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    classes = args.classes
    inputs = []
    for spec in args.row:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise UsageError(f"--row expects LABEL=PATH, got {spec!r}")
        inputs.append(Path(path))
        try:
            doc = json.loads(Path(path).read_text())
            aps = {c: float(v["ap"]) for c, v in doc["classes"].items()}
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise RestorexError(f"{path}: not an eval report ({exc})") from None
        if classes is None:
            classes = tuple(doc["classes"])
        rows.append((label, aps))
    phis = deltas = None
    if args.trajectory:
        inputs.append(args.trajectory)
        try:
            t = json.loads(args.trajectory.read_text())
            phis = [float(s["phi"]) for s in t["stages"]]
            deltas = [float(x) for x in t["deltas"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise RestorexError(f"{args.trajectory}: not a trajectory ({exc})") from None
    prov = _stamp(args, provenance(inputs, {"command": "report", "technique": args.technique,
                                            "classes": list(classes or ())}))
    run = report_from_rows(args.technique, classes or (), rows, phis, deltas, prov)
    md = render_markdown(run)
    if args.out is not None:
        args.out.write_text(dump_json(run.to_json()))
    if args.markdown is not None:
        args.markdown.write_text(md)
    if args.json_only:
        sys.stdout.write(dump_json(run.to_json()))
    elif not args.quiet and args.markdown is None:
        sys.stdout.write(md)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--threads", type=_positive_int, default=default,
                   help="worker cap (default: $RESTOREX_THREADS, else logical cores)")
    g.add_argument("--quiet", action="store_true", default=default if suppress else False)
    g.add_argument("--json-only", action="store_true", default=default if suppress else False,
                   help="print only JSON on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="restorex", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"restorex {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        _global_flags(p, suppress=True)
        return p

    p = add("eval", "per-class AP and mAP for one detections/ground-truth pair")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--ground-truth", type=Path, required=True)
    p.add_argument("--similarity", type=Path, help="similarity table (default: built-in groups)")
    p.add_argument("--iou", type=_unit_open, default=0.5)
    p.add_argument("--ap-mode", choices=AP_MODES, default=ALL_POINT)
    p.add_argument("--classes", type=_csv, help="comma-separated class list for the mAP denominator")
    p.add_argument("--out", type=Path)
    p.add_argument("--markdown", type=Path)
    p.add_argument("--technique", default="restoration")
    p.add_argument("--row-label", default="run")
    p.add_argument("--timestamp", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = add("phi", "restoration-quality score phi for one stage")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--ground-truth", type=Path, required=True)
    p.add_argument("--similarity", type=Path)
    p.add_argument("--mode", choices=MODES, help="override the table's similarity mode")
    p.add_argument("--pairing", choices=PAIRING_MODES, default=PRIMARY_OBJECT)
    p.add_argument("--stage-id", type=int, default=1)
    p.add_argument("--samples", action="store_true", help="include per-sample terms")
    p.set_defaults(func=cmd_phi)

    p = add("monitor", "phi per stage, delta phi and a continue/flag/stop decision")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--similarity", type=Path)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--policy", type=Path)
    p.add_argument("--pairing", choices=PAIRING_MODES, default=PRIMARY_OBJECT)
    p.add_argument("--attention", action="store_true",
                   help="also report mean attention-in-box per stage")
    p.add_argument("--out", type=Path)
    p.add_argument("--timestamp", action="store_true")
    p.set_defaults(func=cmd_monitor)

    p = add("gradcam", "Grad-CAM map from a features/gradients tensor pair")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--gradients", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overlay", type=Path, help="RGB PNG to draw the heatmap over")
    p.add_argument("--out-png", type=Path)
    p.add_argument("--alpha", type=_unit_closed, default=0.5)
    p.set_defaults(func=cmd_gradcam)

    p = add("psnr", "PSNR between two 8-bit RGB PNGs")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.set_defaults(func=cmd_psnr)

    p = add("fixtures", "generate a deterministic synthetic fixture tree")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--images", type=_positive_int, default=20)
    p.add_argument("--stages", type=_positive_int, default=5)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--phi-targets", help="comma-separated phi target per stage")
    p.add_argument("--classes", type=_csv)
    p.add_argument("--tensor-dims", type=_dims, help="k,u,v")
    p.add_argument("--image-size", type=_dims, help="HxW")
    p.add_argument("--no-tensors", action="store_true")
    p.add_argument("--no-images", action="store_true")
    p.set_defaults(func=cmd_fixtures)

    p = add("similarity", "print S(p, a) as 0 or 1")
    p.add_argument("--table", type=Path)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--p", required=True)
    p.add_argument("--a", required=True)
    p.set_defaults(func=cmd_similarity)

    p = add("report", "assemble eval reports into one table")
    p.add_argument("--technique", required=True)
    p.add_argument("--row", action="append", required=True, metavar="LABEL=PATH",
                   help="eval report.json for one stage / noise level (repeatable)")
    p.add_argument("--classes", type=_csv)
    p.add_argument("--trajectory", type=Path, help="monitor output to add phi columns")
    p.add_argument("--out", type=Path)
    p.add_argument("--markdown", type=Path)
    p.add_argument("--timestamp", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="restorex: %(levelname)s: %(message)s")
    command = f"restorex {args.command}"
    try:
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        _diagnose(command, "UsageError", str(exc))
        return EXIT_USAGE
    except RestorexError as exc:
        _diagnose(command, type(exc).__name__, str(exc))
        return EXIT_INVALID
    except OSError as exc:
        _diagnose(command, type(exc).__name__, str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
