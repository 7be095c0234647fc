from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from tsdcm.analytics import summarize, sweep_alpha, theorem_report
from tsdcm.ensemble import SimulationPlan, run_ensemble, run_paired_path
from tsdcm.outputs import (
    MEAN_PATHS_FILE, REPORT_FILE, SUMMARY_FILE, SWEEP_FILE, OutputError, write_countries, write_outputs,
)


def _run(run_config, plan):
    results = run_ensemble(run_config.model, run_config.trigger, plan)
    return results, summarize(results), theorem_report(results, run_config.trigger)


def _write(run_config, directory, plan):
    results, summary, theorem = _run(run_config, plan)
    return write_outputs(directory, run_config.to_dict(), summary=summary, theorem=theorem)


def test_file_set_and_headers(tmp_path, run_config):
    written = _write(run_config, tmp_path, SimulationPlan(n_paths=16, horizon=2.0))
    assert {p.name for p in written} == {MEAN_PATHS_FILE, SUMMARY_FILE, REPORT_FILE}
    header = (tmp_path / MEAN_PATHS_FILE).read_text(encoding="utf-8").splitlines()[0]
    assert header == "t,debt_baseline,debt_tsdcm"
    assert b"\r\n" not in (tmp_path / SUMMARY_FILE).read_bytes()
    summary = pd.read_csv(tmp_path / SUMMARY_FILE)
    assert list(summary.columns) == ["group", "statistic", "value"]
    assert "final_debt_tsdcm" in set(summary["group"])


def test_singleton_mean_paths(tmp_path, run_config):
    plan = SimulationPlan(n_paths=1, horizon=2.0)
    _write(run_config, tmp_path, plan)
    frame = pd.read_csv(tmp_path / MEAN_PATHS_FILE, float_precision="round_trip")
    path = run_paired_path(run_config.model, run_config.trigger, plan, 0)
    assert len(frame) == plan.n_steps + 1
    assert np.array_equal(frame["debt_baseline"].to_numpy(), path.baseline.debt)
    assert np.array_equal(frame["debt_tsdcm"].to_numpy(), path.converted.debt)


def test_byte_identical_reruns(tmp_path, run_config):
    plan = SimulationPlan(n_paths=32, horizon=2.0)
    _write(run_config, tmp_path / "a", plan)
    _write(run_config, tmp_path / "b", plan)
    for name in (MEAN_PATHS_FILE, SUMMARY_FILE, REPORT_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sweep_rows(tmp_path, run_config):
    plan = SimulationPlan(n_paths=8, horizon=2.0)
    sweep = sweep_alpha(run_config.model, run_config.trigger, plan, [0.1, 0.2, 0.3, 0.4])
    write_outputs(tmp_path, run_config.to_dict(), sweep=sweep)
    frame = pd.read_csv(tmp_path / SWEEP_FILE, float_precision="round_trip")
    assert list(frame.columns) == ["alpha", "mean_final_debt", "payout_std"]
    assert frame["alpha"].tolist() == [0.1, 0.2, 0.3, 0.4]
    assert frame["mean_final_debt"].tolist() == sweep.mean_final_debt


def test_report_contents(tmp_path, run_config):
    _write(run_config, tmp_path, SimulationPlan(n_paths=16, horizon=2.0))
    report = json.loads((tmp_path / REPORT_FILE).read_text(encoding="utf-8"))
    assert report["seed"] == run_config.plan.seed
    assert report["config"]["trigger"]["alpha"] == run_config.trigger.alpha
    assert "output_dir" not in report["config"]
    assert {"summary", "theorem", "reference_values", "version"} <= set(report)


def test_paths_csv(tmp_path, run_config):
    results, summary, _ = _run(run_config, SimulationPlan(n_paths=5, horizon=2.0))
    written = write_outputs(tmp_path, run_config.to_dict(), summary=summary, results=results)
    assert "paths.csv" in {p.name for p in written}
    frame = pd.read_csv(tmp_path / "paths.csv")
    assert frame["path"].tolist() == [0, 1, 2, 3, 4]
    assert np.allclose(frame["payout_total"], frame["pi1"] + frame["pi2"], rtol=1e-15, atol=0)


def test_output_path_is_a_file(tmp_path, run_config):
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    with pytest.raises(OutputError):
        write_outputs(blocker, run_config.to_dict())


def test_countries_ranked_by_reduction(tmp_path):
    rows = [
        {"label": "a", "baseline_final_debt": 1.0, "tsdcm_final_debt": 0.9, "reduction": 0.1},
        {"label": "b", "baseline_final_debt": 1.0, "tsdcm_final_debt": 0.7, "reduction": 0.3},
    ]
    frame = pd.read_csv(write_countries(rows, tmp_path))
    assert frame["label"].tolist() == ["b", "a"]
    assert frame["rank"].tolist() == [1, 2]
