import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import psutil

from . import __version__
from .config import ConfigError, RunConfig, default_config, load_config, dump_config
from .model import ModelError
from .mechanism import MechanismError
from .ensemble import EnsembleError, EnsembleRunner
from .analytics import AnalyticsError, summarize, theorem_report, sweep_alpha, proposition_diagnostics
from .outputs import OutputError, write_outputs, write_countries, REPORT_FILE

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

RUNTIME_ERRORS = (ModelError, MechanismError, EnsembleError, AnalyticsError, OutputError)


class Colors:
    GREEN = '\033[0;32m'
    YELLOW = '\033[1;33m'
    RED = '\033[0;31m'
    NC = '\033[0m'


def _say(message: str, color: str = Colors.GREEN) -> None:
    if sys.stdout.isatty():
        print(f"{color}{message}{Colors.NC}")
    else:
        print(message)


def _error(message: str) -> None:
    if sys.stderr.isatty():
        print(f"{Colors.RED}[Error] {message}{Colors.NC}", file=sys.stderr)
    else:
        print(f"[Error] {message}", file=sys.stderr)


def resolve_threads(threads: int) -> int:
    """0 means one worker per physical core."""
    if threads < 0:
        raise argparse.ArgumentTypeError(f"--threads must be >= 0, got {threads}")
    if threads == 0:
        return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return threads


def _alphas(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--alphas expects comma-separated numbers, got {text!r}")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"--seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"--paths must be >= 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsdcm", description="Tokenized sovereign debt conversion simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only, no progress bars")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML run configuration (defaults when omitted)")
    common.add_argument("--seed", type=_seed, help="Override plan.seed")
    common.add_argument("--paths", type=_positive, help="Override plan.n_paths")
    common.add_argument("--threads", type=int, default=1, help="Worker processes, 0 = physical cores")

    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="Run the paired ensemble and write results")
    simulate.add_argument("--out", help="Output directory (config output_dir when omitted)")
    simulate.add_argument("--paths-csv", action="store_true", help="Also write per-path summaries")

    sweep = sub.add_parser("sweep", parents=[common], help="Conversion-fraction sensitivity")
    sweep.add_argument("--out", help="Output directory")
    sweep.add_argument("--alphas", type=_alphas, help="Comma-separated alphas (config analysis.alphas when omitted)")

    verify = sub.add_parser("verify", parents=[common], help="Run the invariant checks and theorem report")
    verify.add_argument("--out", help="Output directory")

    config = sub.add_parser("config", help="Inspect configuration")
    config.add_argument("--config", help="Configuration file to resolve")
    config.add_argument("--show", action="store_true", required=True, help="Print the resolved configuration")

    compare = sub.add_parser("compare", help="Rank several calibrations by debt reduction")
    compare.add_argument("configs", nargs="+", help="One configuration file per calibration")
    compare.add_argument("--out", required=True, help="Output directory")
    compare.add_argument("--seed", type=_seed, help="Override plan.seed")
    compare.add_argument("--paths", type=_positive, help="Override plan.n_paths")
    compare.add_argument("--threads", type=int, default=1, help="Worker processes, 0 = physical cores")
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else default_config()
    return config.with_overrides(seed=args.seed, n_paths=args.paths, output_dir=getattr(args, "out", None))


def cmd_simulate(args: argparse.Namespace, workers: int, progress: bool) -> int:
    config = _resolve(args)
    results = EnsembleRunner(config.model, config.trigger, config.plan, workers=workers, progress=progress).run()
    summary = summarize(results)
    theorem = theorem_report(results, config.trigger)
    write_outputs(config.output_dir, config.to_dict(), summary=summary, theorem=theorem,
                  results=results if args.paths_csv else None)
    _say(f"Relative reduction in mean final debt: {summary.relative_reduction:.4f}")
    _say(f"Results written to {config.output_dir}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, workers: int, progress: bool) -> int:
    config = _resolve(args)
    alphas = args.alphas or config.analysis.alphas
    sweep = sweep_alpha(config.model, config.trigger, config.plan, alphas, workers=workers, progress=progress)
    write_outputs(config.output_dir, config.to_dict(), sweep=sweep)
    for alpha, final in zip(sweep.alphas, sweep.mean_final_debt):
        _say(f"alpha={alpha:g}: mean final debt {final:.4f}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, workers: int, progress: bool) -> int:
    config = _resolve(args)
    results = EnsembleRunner(config.model, config.trigger, config.plan, workers=workers, progress=progress).run()
    diagnostics = proposition_diagnostics(config.model, config.trigger, config.plan,
                                          horizons=config.analysis.diagnostic_horizons,
                                          workers=workers, progress=progress, results=results)
    theorem = theorem_report(results, config.trigger)
    write_outputs(config.output_dir, config.to_dict(), summary=summarize(results),
                  theorem=theorem, diagnostics=diagnostics)
    report = Path(config.output_dir) / REPORT_FILE
    if not diagnostics.passed:
        _error(f"Invariant checks failed: {diagnostics.dominance_violations} dominance violations, "
               f"{diagnostics.prefix_mismatches} prefix mismatches, "
               f"activation monotone={diagnostics.activation_monotone}")
        print(report)
        return EXIT_VERIFY_FAILED
    for note in diagnostics.notes:
        _say(f"[Warning] {note}", Colors.YELLOW)
    _say("All invariant checks passed")
    print(report)
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else default_config()
    print(dump_config(config))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, workers: int, progress: bool) -> int:
    rows = []
    for path in args.configs:
        config = load_config(path).with_overrides(seed=args.seed, n_paths=args.paths)
        results = EnsembleRunner(config.model, config.trigger, config.plan, workers=workers, progress=progress).run()
        summary = summarize(results)
        rows.append({
            "label": config.label,
            "baseline_final_debt": summary.final_debt["baseline"].mean,
            "tsdcm_final_debt": summary.final_debt["converted"].mean,
            "reduction": summary.relative_reduction,
        })
    path = write_countries(rows, args.out)
    _say(f"Comparison written to {path}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    progress = not args.quiet and sys.stderr.isatty()
    try:
        if args.command == "config":
            return cmd_config(args)
        workers = resolve_threads(args.threads)
        if args.command == "simulate":
            return cmd_simulate(args, workers, progress)
        if args.command == "sweep":
            return cmd_sweep(args, workers, progress)
        if args.command == "verify":
            return cmd_verify(args, workers, progress)
        if args.command == "compare":
            return cmd_compare(args, workers, progress)
    except argparse.ArgumentTypeError as e:
        _error(str(e))
        return EXIT_CONFIG
    except ConfigError as e:
        _error(str(e))
        return EXIT_CONFIG
    except RUNTIME_ERRORS as e:
        _error(str(e))
        return EXIT_RUNTIME
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        _error(f"Unexpected error: {e}")
        return EXIT_RUNTIME
    _error(f"Unknown command {args.command}")
    return EXIT_CONFIG
