import json
import math
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from . import __version__
from .analytics import (
    EnsembleSummary, TheoremReport, SensitivityResult, PropositionReport, REFERENCE_VALUES,
)
from .ensemble import EnsembleResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MEAN_PATHS_FILE = "mean_paths.csv"
SUMMARY_FILE = "summary.csv"
SWEEP_FILE = "sweep.csv"
REPORT_FILE = "report.json"
PATHS_FILE = "paths.csv"
COUNTRIES_FILE = "countries.csv"


class OutputError(Exception):
    """Result files could not be written"""
    pass


def _clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars unwrapped, NaN/inf mapped to null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    logger.debug(f"Wrote {path}")
    return path


def _prepare(directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"Failed to create output directory {directory}: {e}") from e
    if not directory.is_dir():
        raise OutputError(f"Output path {directory} is not a directory")
    return directory


def mean_paths_frame(summary: EnsembleSummary) -> pd.DataFrame:
    return pd.DataFrame({
        "t": summary.times,
        "debt_baseline": summary.mean_debt["baseline"],
        "debt_tsdcm": summary.mean_debt["converted"],
    })


def summary_frame(summary: EnsembleSummary) -> pd.DataFrame:
    """Long-format table of the final-debt, default and payout statistics."""
    rows: List[tuple] = []
    for branch, dist in summary.final_debt.items():
        group = f"final_debt_{'tsdcm' if branch == 'converted' else branch}"
        for stat in ("p10", "p50", "p90", "mean"):
            rows.append((group, stat, getattr(dist, stat)))
    for branch, est in summary.default_probability.items():
        group = f"default_probability_{'tsdcm' if branch == 'converted' else branch}"
        rows.append((group, "value", est.value))
        rows.append((group, "se", est.se))
    for component, stats in summary.payout_pv.items():
        group = f"payout_pv_{component}"
        rows.append((group, "mean", stats.mean))
        rows.append((group, "std", stats.std))
        rows.append((group, "mean_triggered", stats.mean_triggered))
        rows.append((group, "std_triggered", stats.std_triggered))
    rows.append(("trigger", "probability", summary.trigger_probability.value))
    rows.append(("trigger", "se", summary.trigger_probability.se))
    rows.append(("reduction", "relative_mean_final_debt", summary.relative_reduction))
    for name, est in (("final_debt_difference", summary.final_debt_difference),
                      ("default_difference", summary.default_difference)):
        low, high = est.ci95
        rows.extend([(name, "mean", est.value), (name, "ci95_low", low), (name, "ci95_high", high)])
    frame = pd.DataFrame(rows, columns=["group", "statistic", "value"])
    frame["value"] = frame["value"].astype(float)
    return frame


def sweep_frame(sweep: SensitivityResult) -> pd.DataFrame:
    return pd.DataFrame({
        "alpha": sweep.alphas,
        "mean_final_debt": sweep.mean_final_debt,
        "payout_std": sweep.payout_std,
    })


def paths_frame(results: EnsembleResult) -> pd.DataFrame:
    return pd.DataFrame({
        "path": np.arange(results.n_paths),
        "final_debt_baseline": results.final_debt_baseline,
        "final_debt_tsdcm": results.final_debt_converted,
        "triggered": results.triggered.astype(int),
        "tau": results.tau,
        "tau_d": results.tau_d,
        "tau_g": results.tau_g,
        "pi1": results.pi1,
        "pi2": results.pi2,
        "payout_total": results.total_payout,
        "pv": results.pv,
        "default_baseline": results.default_baseline.astype(int),
        "default_tsdcm": results.default_converted.astype(int),
    })


def build_report(config: Dict, summary: Optional[EnsembleSummary] = None,
                 theorem: Optional[TheoremReport] = None,
                 diagnostics: Optional[PropositionReport] = None,
                 sweep: Optional[SensitivityResult] = None) -> Dict:
    report: Dict[str, Any] = {
        "tool": "tsdcm",
        "version": __version__,
        "seed": config["plan"]["seed"],
        # report bytes depend on run inputs only, never on the output location
        "config": {k: v for k, v in config.items() if k != "output_dir"},
        "reference_values": REFERENCE_VALUES,
    }
    if summary is not None:
        report["summary"] = summary.to_dict()
    if theorem is not None:
        report["theorem"] = theorem.to_dict()
    if diagnostics is not None:
        report["diagnostics"] = diagnostics.to_dict()
    if sweep is not None:
        report["sweep"] = sweep.to_dict()
    return _clean(report)


def write_report(report: Dict, directory: Union[str, Path]) -> Path:
    path = _prepare(directory) / REPORT_FILE
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report, f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
    except (OSError, ValueError) as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    return path


def write_outputs(directory: Union[str, Path], config: Dict,
                  summary: Optional[EnsembleSummary] = None,
                  theorem: Optional[TheoremReport] = None,
                  diagnostics: Optional[PropositionReport] = None,
                  sweep: Optional[SensitivityResult] = None,
                  results: Optional[EnsembleResult] = None) -> List[Path]:
    """Write the result file set for whatever statistics were computed.

    Files carry no timestamps, so identical inputs give byte-identical output.
    """
    directory = _prepare(directory)
    written = []
    if summary is not None:
        written.append(_write_csv(mean_paths_frame(summary), directory / MEAN_PATHS_FILE))
        written.append(_write_csv(summary_frame(summary), directory / SUMMARY_FILE))
    if sweep is not None:
        written.append(_write_csv(sweep_frame(sweep), directory / SWEEP_FILE))
    if results is not None:
        written.append(_write_csv(paths_frame(results), directory / PATHS_FILE))
    written.append(write_report(build_report(config, summary, theorem, diagnostics, sweep), directory))
    logger.info(f"Wrote {len(written)} files to {directory}")
    return written


def write_countries(rows: List[Dict], directory: Union[str, Path]) -> Path:
    """Cross-calibration comparison ranked by relative debt reduction."""
    frame = pd.DataFrame(rows, columns=["label", "baseline_final_debt", "tsdcm_final_debt", "reduction"])
    frame = frame.sort_values("reduction", ascending=False, kind="stable").reset_index(drop=True)
    frame["rank"] = np.arange(1, len(frame) + 1)
    return _write_csv(frame, _prepare(directory) / COUNTRIES_FILE)
