import logging
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from .model import ModelConfig, PathRecord, draw_step_noise, integrate, restart_debt, n_steps
from .mechanism import (
    NOT_HIT, TriggerSpec, HittingTimes, TokenPayout,
    hitting_indices, growth_excess, overshoot, maturity_index, present_value_factor,
)
from .noise import PathNoise

logger = logging.getLogger(__name__)

# Fixed so that reductions never depend on the worker count.
CHUNK_SIZE = 256
DOMINANCE_TOLERANCE = 1e-12


class EnsembleError(Exception):
    """Error raised while simulating a path of the ensemble"""

    def __init__(self, message: str, path_index: Optional[int] = None):
        super().__init__(message)
        self.path_index = path_index


@dataclass(frozen=True)
class SimulationPlan:
    n_paths: int = 10_000
    horizon: float = 10.0
    dt: float = 0.01
    seed: int = 12345

    def __post_init__(self):
        if self.n_paths < 1:
            raise EnsembleError(f"Plan needs at least one path, got n_paths={self.n_paths}")
        if not 0 <= self.seed < 2 ** 64:
            raise EnsembleError(f"Seed must be an unsigned 64-bit integer, got {self.seed}")
        try:
            n_steps(self.horizon, self.dt)
        except Exception as e:
            raise EnsembleError(f"Invalid plan grid: {e}") from e

    @property
    def n_steps(self) -> int:
        return n_steps(self.horizon, self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class PairedPathResult:
    baseline: PathRecord
    converted: PathRecord
    hitting: HittingTimes
    payout: Optional[TokenPayout]
    default_baseline: bool
    default_converted: bool


@dataclass
class BatchOutcome:
    """Paired simulation of a batch of paths, time-major arrays (step, path)."""
    path_indices: np.ndarray
    regimes: np.ndarray
    debt_baseline: np.ndarray
    debt_converted: np.ndarray
    growth: np.ndarray
    index_d: np.ndarray
    index_g: np.ndarray
    index_tau: np.ndarray
    triggered: np.ndarray
    overshoot: np.ndarray
    growth_integral: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    pv: np.ndarray
    default_baseline: np.ndarray
    default_converted: np.ndarray
    dominance_violations: np.ndarray
    prefix_mismatches: np.ndarray
    mean_growth_after_tau: np.ndarray


@dataclass
class EnsembleResult:
    """Per-path summaries and pointwise mean debt paths of a paired ensemble, in path-index order."""
    plan: SimulationPlan
    spec: TriggerSpec
    times: np.ndarray
    mean_debt_baseline: np.ndarray
    mean_debt_converted: np.ndarray
    final_debt_baseline: np.ndarray
    final_debt_converted: np.ndarray
    maturity_debt_baseline: np.ndarray
    maturity_debt_converted: np.ndarray
    tau: np.ndarray
    tau_d: np.ndarray
    tau_g: np.ndarray
    tau_index: np.ndarray
    triggered: np.ndarray
    overshoot: np.ndarray
    growth_integral: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    pv: np.ndarray
    default_baseline: np.ndarray
    default_converted: np.ndarray
    dominance_violations: np.ndarray
    prefix_mismatches: np.ndarray
    mean_growth_after_tau: np.ndarray

    @property
    def n_paths(self) -> int:
        return len(self.final_debt_baseline)

    @property
    def trigger_count(self) -> int:
        return int(self.triggered.sum())

    @property
    def total_payout(self) -> np.ndarray:
        return self.pi1 + self.pi2


def simulate_batch(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan,
                   path_indices: Sequence[int]) -> BatchOutcome:
    """Baseline and converted branches for a batch of paths under common random numbers."""
    dt, steps = plan.dt, plan.n_steps
    streams = [PathNoise(plan.seed, int(i)) for i in path_indices]
    noise = draw_step_noise(cfg, dt, steps, streams)
    debt, growth = integrate(cfg, dt, noise)

    index_d, index_g, index_tau, triggered = hitting_indices(debt, growth, spec, dt)
    paths = np.arange(len(streams))
    start = np.where(triggered, index_tau, steps + 1)
    factor = np.full(len(streams), 1.0 - spec.alpha)
    converted = restart_debt(cfg, dt, noise, debt, start, factor)

    k = np.arange(steps + 1)[:, None]
    after = triggered[None, :] & (k >= start[None, :])
    before = k < start[None, :]
    dominance_violations = (after & (converted > debt + DOMINANCE_TOLERANCE)).sum(axis=0)
    prefix_mismatches = (before & (converted != debt)).sum(axis=0)

    end = min(maturity_index(spec, dt), steps + 1)
    tau_rows = np.where(triggered, index_tau, 0)
    over = np.where(triggered, overshoot(converted[tau_rows, paths], spec.d_star), 0.0)
    integral = np.where(triggered, growth_excess(growth, start, end, spec.g_star, dt), 0.0)
    pi1 = spec.beta * over
    pi2 = spec.gamma * integral
    pv = (pi1 + pi2) * present_value_factor(spec)

    window = after & (k < end)
    counts = window.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_growth = np.where(counts > 0, np.where(window, growth, 0.0).sum(axis=0) / counts, np.nan)

    return BatchOutcome(
        path_indices=np.asarray(path_indices),
        regimes=noise.regimes,
        debt_baseline=debt,
        debt_converted=converted,
        growth=growth,
        index_d=index_d,
        index_g=index_g,
        index_tau=index_tau,
        triggered=triggered,
        overshoot=over,
        growth_integral=integral,
        pi1=pi1,
        pi2=pi2,
        pv=pv,
        default_baseline=(debt >= spec.default_barrier).any(axis=0),
        default_converted=(converted >= spec.default_barrier).any(axis=0),
        dominance_violations=dominance_violations,
        prefix_mismatches=prefix_mismatches,
        mean_growth_after_tau=mean_growth,
    )


def run_paired_path(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan,
                    path_index: int) -> PairedPathResult:
    if not 0 <= path_index < plan.n_paths:
        raise EnsembleError(f"Path index {path_index} outside [0, {plan.n_paths})", path_index)
    try:
        batch = simulate_batch(cfg, spec, plan, [path_index])
    except EnsembleError:
        raise
    except Exception as e:
        raise EnsembleError(f"Path {path_index} failed: {e}", path_index) from e

    times = plan.times
    regimes = batch.regimes[:, 0].astype(int)
    growth = batch.growth[:, 0].copy()
    baseline = PathRecord(dt=plan.dt, times=times, regimes=regimes,
                          debt=batch.debt_baseline[:, 0].copy(), growth=growth)
    converted = PathRecord(dt=plan.dt, times=times.copy(), regimes=regimes.copy(),
                           debt=batch.debt_converted[:, 0].copy(), growth=growth.copy())

    def _time(index) -> Optional[float]:
        return None if index == NOT_HIT else float(times[index])

    triggered = bool(batch.triggered[0])
    hitting = HittingTimes(
        tau_d=_time(batch.index_d[0]),
        tau_g=_time(batch.index_g[0]),
        tau=_time(batch.index_tau[0]),
        triggered=triggered,
        index_d=int(batch.index_d[0]),
        index_g=int(batch.index_g[0]),
        index=int(batch.index_tau[0]),
    )
    payout = None
    if triggered:
        pi1, pi2 = float(batch.pi1[0]), float(batch.pi2[0])
        payout = TokenPayout(pi1=pi1, pi2=pi2, total=pi1 + pi2, pv=float(batch.pv[0]))
    return PairedPathResult(
        baseline=baseline,
        converted=converted,
        hitting=hitting,
        payout=payout,
        default_baseline=bool(batch.default_baseline[0]),
        default_converted=bool(batch.default_converted[0]),
    )


def _locate_failure(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan,
                    start: int, stop: int, error: Exception) -> EnsembleError:
    for index in range(start, stop):
        try:
            simulate_batch(cfg, spec, plan, [index])
        except Exception as e:
            return EnsembleError(f"Path {index} failed: {e}", index)
    return EnsembleError(f"Paths {start}-{stop - 1} failed: {error}", start)


def _run_chunk(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan, start: int, stop: int) -> Dict:
    try:
        batch = simulate_batch(cfg, spec, plan, range(start, stop))
    except Exception as e:
        raise _locate_failure(cfg, spec, plan, start, stop, e) from e

    times = plan.times
    maturity = min(maturity_index(spec, plan.dt), plan.n_steps)

    def _times_of(index: np.ndarray) -> np.ndarray:
        return np.where(index == NOT_HIT, np.nan, times[np.maximum(index, 0)])

    return {
        "sum_debt_baseline": batch.debt_baseline.sum(axis=1),
        "sum_debt_converted": batch.debt_converted.sum(axis=1),
        "final_debt_baseline": batch.debt_baseline[-1].copy(),
        "final_debt_converted": batch.debt_converted[-1].copy(),
        "maturity_debt_baseline": batch.debt_baseline[maturity].copy(),
        "maturity_debt_converted": batch.debt_converted[maturity].copy(),
        "tau": _times_of(batch.index_tau),
        "tau_d": _times_of(batch.index_d),
        "tau_g": _times_of(batch.index_g),
        "tau_index": batch.index_tau,
        "triggered": batch.triggered,
        "overshoot": batch.overshoot,
        "growth_integral": batch.growth_integral,
        "pi1": batch.pi1,
        "pi2": batch.pi2,
        "pv": batch.pv,
        "default_baseline": batch.default_baseline,
        "default_converted": batch.default_converted,
        "dominance_violations": batch.dominance_violations,
        "prefix_mismatches": batch.prefix_mismatches,
        "mean_growth_after_tau": batch.mean_growth_after_tau,
    }


def chunk_bounds(n_paths: int, chunk_size: int = CHUNK_SIZE) -> List[range]:
    return [range(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


class EnsembleRunner:
    """Runs paired ensembles of one calibration on a fixed worker pool size."""

    def __init__(self, cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan,
                 workers: int = 1, progress: bool = False):
        if workers < 1:
            raise EnsembleError(f"Worker count must be >= 1, got {workers}")
        self.cfg = cfg
        self.spec = spec
        self.plan = plan
        self.workers = workers
        self.progress = progress

    def with_spec(self, spec: TriggerSpec) -> "EnsembleRunner":
        return EnsembleRunner(self.cfg, spec, self.plan, self.workers, self.progress)

    def with_plan(self, plan: SimulationPlan) -> "EnsembleRunner":
        return EnsembleRunner(self.cfg, self.spec, plan, self.workers, self.progress)

    def paired_path(self, path_index: int) -> PairedPathResult:
        return run_paired_path(self.cfg, self.spec, self.plan, path_index)

    def _collect(self) -> List[Dict]:
        plan = self.plan
        chunks = chunk_bounds(plan.n_paths)
        logger.info(f"Ensemble {plan.n_paths} paths: {plan.n_steps} steps, {len(chunks)} chunks, "
                    f"{self.workers} workers")
        parallel = Parallel(n_jobs=self.workers, return_as="generator")
        jobs = (delayed(_run_chunk)(self.cfg, self.spec, plan, c.start, c.stop) for c in chunks)
        parts = []
        with tqdm(total=plan.n_paths, desc="Simulating paths", unit="path", disable=not self.progress) as pbar:
            for chunk, part in zip(chunks, parallel(jobs)):
                parts.append(part)
                pbar.update(len(chunk))
        return parts

    def run(self) -> EnsembleResult:
        """Simulate plan.n_paths paired paths; the result is identical for any worker count."""
        plan = self.plan
        parts = self._collect()

        # chunk order == path-index order
        sum_baseline = parts[0]["sum_debt_baseline"].copy()
        sum_converted = parts[0]["sum_debt_converted"].copy()
        for part in parts[1:]:
            sum_baseline += part["sum_debt_baseline"]
            sum_converted += part["sum_debt_converted"]

        def _cat(key: str) -> np.ndarray:
            return np.concatenate([part[key] for part in parts])

        result = EnsembleResult(
            plan=plan,
            spec=self.spec,
            times=plan.times,
            mean_debt_baseline=sum_baseline / plan.n_paths,
            mean_debt_converted=sum_converted / plan.n_paths,
            **{key: _cat(key) for key in _PER_PATH_FIELDS},
        )
        logger.info(f"Ensemble {plan.n_paths} paths: {result.trigger_count} triggered")
        violations = int(result.dominance_violations.sum())
        if violations:
            logger.warning(f"Ensemble {plan.n_paths} paths: {violations} grid points violate pathwise dominance")
        return result


_PER_PATH_FIELDS = (
    "final_debt_baseline", "final_debt_converted", "maturity_debt_baseline", "maturity_debt_converted",
    "tau", "tau_d", "tau_g", "tau_index", "triggered", "overshoot", "growth_integral",
    "pi1", "pi2", "pv", "default_baseline", "default_converted",
    "dominance_violations", "prefix_mismatches", "mean_growth_after_tau",
)


def run_ensemble(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan,
                 workers: int = 1, progress: bool = False) -> EnsembleResult:
    return EnsembleRunner(cfg, spec, plan, workers=workers, progress=progress).run()
