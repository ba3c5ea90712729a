"""Command line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .report import emit_report

log = logging.getLogger("junctionvis")

STAGE_SUBCOMMANDS = ("ingest", "network", "visibility", "assign", "fit")


def _write(data: bytes, path: Path | None) -> None:
    if path is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    log.info("wrote %s", path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (JSON)")
    common.add_argument("--stage-dir", type=Path, help="checkpoint directory (overrides config)")
    common.add_argument("--model", choices=("1", "2", "both"), help="models to fit")
    common.add_argument("--format", choices=("json", "text"), default="json", help="report format")
    common.add_argument("-o", "--output", type=Path, help="output file (default: config path or stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="junctionvis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage")
    sub.add_parser("report", parents=[common], help="render the regression report")
    sub.add_parser("export-geojson", parents=[common], help="write visibility samples as GeoJSON")
    sub.add_parser("run-all", parents=[common], help="run every stage, then report and GeoJSON")
    synth = sub.add_parser("synth-city", help="write the synthetic test city to a directory")
    synth.add_argument("directory", type=Path)
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("-v", "--verbose", action="store_true")
    return parser


def _stage_dir(args, cfg) -> Path:
    return args.stage_dir or cfg.stage_dir


def _report(args, cfg, stage_dir: Path) -> None:
    _, payload = pipeline._require(stage_dir, "fitted")
    out = args.output or (cfg.report_path if args.format == "json" else None)
    if out is None and cfg.report_path is not None and args.format == "text":
        out = cfg.report_path.with_suffix(".txt")
    _write(emit_report(payload, args.format), out)


def _geojson(args, cfg, stage_dir: Path, default_out: Path | None) -> None:
    _write(pipeline.emit_geojson(stage_dir), args.output if args.command == "export-geojson" and args.output
           else default_out)


def run(args) -> None:
    if args.command == "synth-city":
        from .synthetic import write_city
        path = write_city(args.directory, seed=args.seed)
        print(path)
        return
    if args.config is None:
        raise pipeline.PipelineError("--config is required")
    if not args.config.exists():
        raise FileNotFoundError(f"config not found: {args.config}")
    cfg = pipeline.RunConfig.load(args.config)
    sd = _stage_dir(args, cfg)

    if args.command in STAGE_SUBCOMMANDS:
        ck = pipeline.run_stage(args.command, cfg, sd, models=args.model)
        print(f"{ck.stage} {ck.content_hash}")
    elif args.command == "report":
        _report(args, cfg, sd)
    elif args.command == "export-geojson":
        _geojson(args, cfg, sd, cfg.geojson_path)
    elif args.command == "run-all":
        for cmd in STAGE_SUBCOMMANDS:
            ck = pipeline.run_stage(cmd, cfg, sd, models=args.model)
            print(f"{ck.stage} {ck.content_hash}")
        _report(args, cfg, sd)
        if cfg.geojson_path is not None:
            _write(pipeline.emit_geojson(sd), cfg.geojson_path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
