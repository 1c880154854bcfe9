"""``octseg`` command line: segment scans, render phantoms, score results.

Exit codes: 0 success, 1 at least one image failed (or evaluation did not
pass), 2 usage problems such as a bad config, no inputs or mismatched files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import image_io
from .config import ConfigError, RunConfig, load_config
from .layers import segment_all
from .phantom import PhantomSpecError, evaluate, generate, load_phantom_spec
from .types import BScan

log = logging.getLogger("octseg")

IMAGE_SUFFIXES = (".pgm", ".png")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _collect_inputs(paths: list[str]) -> list[Path]:
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(q for q in p.iterdir() if q.is_file() and q.suffix.lower() in IMAGE_SUFFIXES)
        else:
            found.append(p)
    return found


def _output_stems(inputs: list[Path]) -> list[str]:
    # fall back to the full file name when two inputs share a stem
    stems = [p.stem for p in inputs]
    return [p.name if stems.count(p.stem) > 1 else p.stem for p in inputs]


def _segment_one(path: Path, stem: str, cfg: RunConfig) -> None:
    loaded = image_io.load_grayscale(path)
    # name only, so outputs do not depend on where the command was run from
    img = BScan(loaded.intensity, source_id=path.name)
    result = segment_all(img, cfg.segment_config())
    out = Path(cfg.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.io.formats:
        image_io.write_boundaries(result, out / f"{stem}.boundaries.csv", "csv")
        image_io.write_metrics_csv(result, out / f"{stem}.metrics.csv")
    if "json" in cfg.io.formats:
        image_io.write_boundaries(result, out / f"{stem}.json", "json")
    if cfg.io.overlay:
        image_io.write_overlay(img, result, out / f"{stem}.overlay.png")


def _segment_task(args) -> str | None:
    path, stem, cfg = args
    try:
        _segment_one(path, stem, cfg)
    except Exception as exc:  # report and move on to the next image
        return f"{path}: {type(exc).__name__}: {exc}"
    return None


def cmd_segment(args) -> int:
    try:
        cfg = load_config(args.config)
        io_cfg = cfg.io
        if args.out is not None:
            io_cfg = replace(io_cfg, out_dir=args.out)
        if args.format is not None:
            io_cfg = replace(io_cfg, formats=args.format)
        if args.overlay:
            io_cfg = replace(io_cfg, overlay=True)
        if args.jobs is not None:
            io_cfg = replace(io_cfg, jobs=args.jobs)
        cfg.io = io_cfg
    except (ConfigError, ValueError) as exc:
        print(f"octseg: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    inputs = _collect_inputs(args.inputs)
    if not inputs:
        print("octseg: no input images found", file=sys.stderr)
        return EXIT_USAGE
    tasks = [(p, s, cfg) for p, s in zip(inputs, _output_stems(inputs))]
    if cfg.io.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.io.jobs, len(tasks))) as pool:
            errors = list(pool.map(_segment_task, tasks))
    else:
        errors = [_segment_task(t) for t in tasks]

    failed = [e for e in errors if e is not None]
    for msg in failed:
        print(f"octseg: error: {msg}", file=sys.stderr)
    log.info("segmented %d of %d images", len(tasks) - len(failed), len(tasks))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_phantom(args) -> int:
    try:
        spec = load_phantom_spec(args.spec) if args.spec else load_config(args.config).phantom
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        img, truth = generate(spec)
    except (PhantomSpecError, ConfigError, OSError, ValueError) as exc:
        print(f"octseg: invalid phantom spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"phantom_seed{spec.seed}"
    image_io.save_grayscale(img, out / f"{stem}.pgm", bit_depth=16)
    image_io.atomic_write(out / f"{stem}.truth.csv", image_io.boundaries_csv(*truth).encode())
    print(out / f"{stem}.pgm")
    return EXIT_OK


def _parse_tolerances(text: str | None):
    if text is None:
        return None
    if "=" not in text:
        return float(text)
    out = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        key = key.strip().lower()
        if key not in ("ilm", "rnfl", "rpe"):
            raise ValueError(f"unknown boundary {key!r} in tolerances")
        out[key] = float(value)
    return out


def cmd_eval(args) -> int:
    try:
        tol = _parse_tolerances(args.tolerance)
        pred = image_io.read_boundaries_csv(args.pred)
        truth = image_io.read_boundaries_csv(args.truth)
        report = evaluate(pred, truth, tol)
    except (OSError, ValueError, KeyError) as exc:
        print(f"octseg: cannot evaluate: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="octseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment PGM/PNG scans (files or directories)")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--config", help="YAML config (default: $OCTSEG_CONFIG)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--overlay", action="store_true", help="also write a PNG overlay")
    p.add_argument("--jobs", type=int, help="images processed concurrently")
    p.add_argument("--format", help="comma list of csv, json")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("phantom", help="render a synthetic scan and its ground truth")
    p.add_argument("spec", nargs="?", help="phantom YAML (default: config phantom section)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("eval", help="score a boundaries CSV against ground truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--tolerance", help="MAE bound in px, or ilm=1,rnfl=2,rpe=1")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
