import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ValidationError

from src.analytics.reports import VERIFY_REPORT_FILE, RunAnalytics, render_report
from src.bench.experiment import ExperimentSpec, write_record
from src.bench.runner import run_experiment
from src.cli.config import CliConfig, load_config, resolve_out_dir
from src.core.errors import DivergenceDetected, InvalidSpec, SchemaMismatch
from src.oracle.checks import run_checks, select_checks, write_report

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3
EXIT_NO_CHECKS = 4


def cmd_verify(pattern: Optional[str], out_dir: Path) -> int:
    names = select_checks(pattern)
    if not names:
        print(f"no checks selected by filter {pattern!r}")
        return EXIT_NO_CHECKS
    results = run_checks(names)
    report_path = out_dir / VERIFY_REPORT_FILE
    write_report(results, report_path)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  max_dev={r.max_deviation:.3e}  {r.detail}")
    failures = sum(not r.passed for r in results)
    print(f"{len(results) - failures}/{len(results)} checks passed, report: {report_path}")
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def _load(path: str, seed: Optional[int]) -> CliConfig:
    config = load_config(Path(path))
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config


def _run_cell(spec: ExperimentSpec, out_dir: Path) -> Tuple[str, bool]:
    """Runs one cell and writes its record; returns (run name, diverged)."""
    try:
        record = run_experiment(spec)
    except DivergenceDetected as e:
        record = e.record
    write_record(record, out_dir)
    return spec.run_name(), record.diverged


def cmd_train(config_path: str, out: Optional[str], seed: Optional[int]) -> int:
    config = _load(config_path, seed)
    spec = config.to_spec()
    out_dir = resolve_out_dir(out, config)
    name, diverged = _run_cell(spec, out_dir)
    print(f"{name}: {'diverged' if diverged else 'done'} -> {out_dir}")
    return EXIT_FAILURE if diverged else EXIT_OK


def cmd_sweep(config_path: str, out: Optional[str], seed: Optional[int], threads: int) -> int:
    config = _load(config_path, seed)
    out_dir = resolve_out_dir(out, config)
    cells = config.sweep_cells()
    pending = []
    for cell in cells:
        if (out_dir / f"{cell.run_name()}.json").exists():
            logger.info(f"Skipping completed cell {cell.run_name()}")
        else:
            pending.append(cell)
    if len(pending) < len(cells):
        logger.warning(f"Resuming sweep: {len(cells) - len(pending)} of {len(cells)} cells already complete")

    if threads > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_cell, pending, [out_dir] * len(pending)))
    else:
        outcomes = [_run_cell(cell, out_dir) for cell in pending]

    diverged = [name for name, flag in outcomes if flag]
    for name in diverged:
        print(f"diverged: {name}")
    print(f"{len(cells)} cells, {len(outcomes)} run, {len(cells) - len(pending)} skipped -> {out_dir}")
    return EXIT_FAILURE if diverged else EXIT_OK


def cmd_report(directory: str) -> int:
    directory = Path(directory)
    if not directory.is_dir():
        print("no runs")
        return EXIT_OK
    analytics = RunAnalytics(directory)
    if not analytics.runs:
        print("no runs")
        return EXIT_OK
    report = analytics.generate_report()
    path = analytics.write_summary(report["summary"])
    print(render_report(report), end="")
    logger.info(f"Report summary written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="altlora", description="AltLoRA optimizers: verification suite and desk-scale experiments.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level.")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", help="Run the oracle and invariant checks.")
    verify.add_argument("--filter", default=None, help="Glob over check names, e.g. 'projector*'.")
    verify.add_argument("--out", default=None, help="Directory for the JSON check report.")

    for name, help_text in (("train", "Run one experiment from a JSON config."),
                            ("sweep", "Run every cell of the config's grid.")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="Path to the JSON config.")
        cmd.add_argument("--out", default=None, help="Output directory (else $ALTLORA_OUT, else config out_dir, else ./runs).")
        cmd.add_argument("--seed", type=int, default=None, help="Override the config seed.")
        if name == "sweep":
            cmd.add_argument("--threads", type=int, default=1, help="Cells run in parallel.")

    report = sub.add_parser("report", help="Aggregate the runs in a directory.")
    report.add_argument("directory", help="Directory holding run CSVs and sidecars.")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.getLogger().setLevel(args.log_level)

    try:
        if args.command == "verify":
            return cmd_verify(args.filter, resolve_out_dir(args.out))
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "sweep":
            if args.threads < 1:
                print("--threads must be >= 1", file=sys.stderr)
                return EXIT_USAGE
            return cmd_sweep(args.config, args.out, args.seed, args.threads)
        return cmd_report(args.directory)
    except (FileNotFoundError, json.JSONDecodeError, ValidationError, InvalidSpec) as e:
        logger.error(f"Error in config: {str(e)}")
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaMismatch as e:
        logger.error(f"Error in report: {str(e)}")
        print(f"schema mismatch: {', '.join(e.files)}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"Error in {args.command}: {str(e)}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
