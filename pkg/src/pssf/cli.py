"""Command-line entry point: ``pssf <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, PSSFError, StageError
from .stages import STAGES, run_pipeline, run_stage, write_error_report

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("pssf")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pssf", description="Synthetic knee radiograph cohort, radiomics and grading.")
    p.add_argument("--version", action="version", version=f"pssf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        s = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run every stage in order")
        s.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        s.add_argument("--profile", choices=("desk", "full"), default=None)
        s.add_argument("--seed", type=int, default=None, help="master seed")
        s.add_argument("--jobs", type=int, default=None, help="worker processes (results do not depend on it)")
        s.add_argument("--out", type=Path, default=None, help="output directory (default: $PSSF_OUT)")
        s.add_argument("--force", action="store_true", help="ignore completion markers")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    from .config import load_config

    try:
        cfg = load_config(
            args.config,
            profile=args.profile,
            master_seed=args.seed,
            jobs=args.jobs,
            out_dir=str(args.out) if args.out is not None else None,
        )
    except ConfigError as exc:
        print(f"pssf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.out_dir)
    try:
        if args.command == "pipeline":
            if args.force:
                status = {s: run_stage(cfg, s, force=True) for s in STAGES}
            else:
                status = run_pipeline(cfg)
        else:
            status = {args.command: run_stage(cfg, args.command, force=args.force)}
    except ConfigError as exc:
        print(f"pssf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, PSSFError, OSError) as exc:
        if not isinstance(exc, StageError):
            exc = StageError(args.command, f"{type(exc).__name__}: {exc}")
        out.mkdir(parents=True, exist_ok=True)
        path = write_error_report(out, exc)
        print(f"pssf: stage '{exc.stage}' failed: {exc}; see {path}", file=sys.stderr)
        return EXIT_STAGE
    (out / "error_report.json").unlink(missing_ok=True)
    for stage, st in status.items():
        print(f"{stage}: {st}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
