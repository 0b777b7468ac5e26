"""Command-line entry point: ``freeprod {validate,analyze,simulate,growth,oracle}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .errors import ParseError, SpecError
from .presets import PRESETS
from .report import emit_report, run_pipeline

COMMANDS = ("validate", "analyze", "simulate", "growth", "oracle")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freeprod", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="specification file")
        src.add_argument("--preset", choices=PRESETS)
        s.add_argument("--walkers", type=int)
        s.add_argument("--horizon", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path, help="write the report here instead of stdout")
        s.add_argument("--format", choices=("text", "json", "csv"), default="text")
        s.add_argument("--tol", type=float, help="tolerance for comparisons with reference values")
    return p


def _failure(message: str, error: str, fmt: str, **extra) -> str:
    if fmt == "json":
        return json.dumps({"ok": False, "failure": {"stage": "parse", "error": error, "message": message, **extra}},
                          sort_keys=True, indent=2) + "\n"
    lines = [f"error: {error}: {message}"] + [f"  - {v}" for v in extra.get("violations", [])]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = None
    run = {}
    if args.config is not None:
        try:
            file_cfg, spec = parse_config(args.config.read_text(), str(args.config))
        except ParseError as exc:
            sys.stdout.write(_failure(str(exc), "ParseError", args.format, line=exc.line, column=exc.column))
            return 2
        except SpecError as exc:
            sys.stdout.write(_failure(str(exc), type(exc).__name__, args.format, violations=exc.violations))
            return 2
        run = {k: getattr(file_cfg, k) for k in ("tol", "walkers", "horizon", "seed")}
    for k in ("tol", "walkers", "horizon", "seed"):
        v = getattr(args, k)
        if v is not None:
            run[k] = v
    try:
        cfg = RunConfig(str(args.config or args.preset), args.command, out=args.out and str(args.out),
                        fmt=args.format, **run)
        report = run_pipeline(cfg, spec=spec, preset=args.preset)
    except ValueError as exc:
        sys.stdout.write(_failure(str(exc), "UsageError", args.format))
        return 2
    text = emit_report(report, args.format)
    if args.out is not None:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
