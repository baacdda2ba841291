"""Command-line entry point: ``run``, ``eval``, ``ssim`` and ``synth``.

Exit codes: 0 success, 1 invalid input, 2 runtime or backend failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dataio import load_config, load_manifest
from .ensemble import run_sequence
from .errors import BackendError, DimensionError, FrameError, ParameterError, ValidationError
from .imaging import load_frame
from .metrics import MatchRule, report_sequence, ssim
from .synth import SynthSpec, generate_sequence, write_sequence, write_suite

log = logging.getLogger("oneshot_irsts")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_run(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        config = load_config(
            args.config,
            backend_kind={"mock": "mock", "model": "model"}[args.backend] if args.backend else None,
            divisors=tuple(args.levels) if args.levels else None,
            output_dir=str(args.out),
            emit_confidence=args.emit_confidence or None,
            keep_going=args.keep_going or None,
            topk=args.topk,
            workers=args.workers,
            references=args.reference,
        )
    except (ValidationError, ParameterError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    if len(config.divisors) % 2 == 0:
        log.warning("even number of levels (%d): vote ties resolve to background", len(config.divisors))
    try:
        result = run_sequence(manifest, config)
    except (ValidationError, FileNotFoundError, DimensionError, ParameterError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (BackendError, FrameError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    failed = [f.index for f in result.frames if f.error]
    print(f"{manifest.sequence_id}: segmented {len(result.frames) - len(failed)} frames "
          f"(levels {result.sides}) -> {args.out}")
    if failed:
        print(f"failed frames: {failed}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        report = report_sequence(args.pred, args.gt, MatchRule(args.dist))
    except (FileNotFoundError, DimensionError, ParameterError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    if args.csv:
        report.write_csv(args.csv)
    print(report.render())
    return EXIT_OK


def cmd_ssim(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        frames = [load_frame(p, index=i) for i, p in enumerate(manifest.frames)]
        rows = []
        for f in frames:
            prev = ssim(frames[f.index - 1], f) if f.index > 0 else 1.0
            rows.append((f.index, prev, ssim(frames[0], f)))
    except (ValidationError, FileNotFoundError, DimensionError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["frame_index", "ssim_previous", "ssim_first"])
        w.writerows(rows)
    finally:
        if args.csv:
            out.close()
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec.from_yaml(args.spec) if args.spec else SynthSpec()
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        if args.sequences > 1:
            paths = write_suite(spec, args.sequences, args.out, annotation=args.annotation, reference=args.reference)
        else:
            seq = generate_sequence(spec)
            paths = [write_sequence(seq, args.out, sequence_id=Path(args.out).name,
                                    reference=args.reference, annotation=args.annotation)]
    except (ParameterError, DimensionError, TypeError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oneshot-irsts", description="One-shot sequential small-target segmentation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="segment a sequence from its reference annotation")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--backend", choices=["mock", "model"], default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--levels", type=_int_list, default=None, help="level divisors, e.g. 2,3,4")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--emit-confidence", action="store_true")
    p.add_argument("--keep-going", action="store_true")
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--reference", type=_int_list, default=None,
                   help="restrict to these manifest reference frames")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--dist", type=float, default=3.0, help="max centroid distance for a detection")
    p.add_argument("--csv", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ssim", help="inter-frame SSIM of a sequence")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--csv", type=Path, default=None)
    p.set_defaults(func=cmd_ssim)

    p = sub.add_parser("synth", help="generate synthetic sequences")
    p.add_argument("--spec", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--sequences", type=int, default=1)
    p.add_argument("--annotation", choices=["mask", "point", "bbox"], default="mask")
    p.add_argument("--reference", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
