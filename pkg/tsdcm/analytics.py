import math
import logging
from dataclasses import dataclass, asdict, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .model import ModelConfig, EXPANSION
from .mechanism import TriggerSpec, present_value_factor
from .ensemble import EnsembleRunner, SimulationPlan, EnsembleResult

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054
BRANCHES = ("baseline", "converted")

# Published point estimates for the default calibration. Reported beside the
# simulated values; the growth calibration behind them is unpublished, so they
# are not expected to be reproduced.
REFERENCE_VALUES = {
    "mean_final_debt_reduction": 0.223,
    "default_probability": {"baseline": 0.324, "converted": 0.118},
    "final_debt_percentiles": {
        "baseline": {"p10": 0.887, "p50": 1.051, "p90": 1.265},
        "converted": {"p10": 0.642, "p50": 0.819, "p90": 0.976},
    },
    "token_pv_millions": {
        "overshoot": {"mean": 1.82, "std": 0.56},
        "growth": {"mean": 3.41, "std": 1.12},
        "total": {"mean": 5.23, "std": 1.32},
    },
}


class AnalyticsError(Exception):
    """Base exception for ensemble statistics"""
    pass


@dataclass
class Estimate:
    """Monte Carlo estimate with its standard error."""
    value: float
    se: float

    @property
    def ci95(self) -> List[float]:
        return [self.value - Z_95 * self.se, self.value + Z_95 * self.se]

    @property
    def excludes_zero(self) -> bool:
        low, high = self.ci95
        return low > 0 or high < 0

    def to_dict(self) -> Dict:
        return {"value": self.value, "se": self.se, "ci95": self.ci95}


@dataclass
class DistributionSummary:
    p10: float
    p50: float
    p90: float
    mean: float
    count: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class PayoutStats:
    mean: float
    std: float
    mean_triggered: Optional[float]
    std_triggered: Optional[float]

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EnsembleSummary:
    times: np.ndarray
    mean_debt: Dict[str, np.ndarray]
    final_debt: Dict[str, DistributionSummary]
    default_probability: Dict[str, Estimate]
    payout_pv: Dict[str, PayoutStats]
    trigger_probability: Estimate
    relative_reduction: float
    final_debt_difference: Estimate
    default_difference: Estimate

    def to_dict(self) -> Dict:
        return {
            "final_debt": {k: v.to_dict() for k, v in self.final_debt.items()},
            "default_probability": {k: v.to_dict() for k, v in self.default_probability.items()},
            "payout_pv": {k: v.to_dict() for k, v in self.payout_pv.items()},
            "trigger_probability": self.trigger_probability.to_dict(),
            "relative_reduction": self.relative_reduction,
            "final_debt_difference": self.final_debt_difference.to_dict(),
            "default_difference": self.default_difference.to_dict(),
            "untriggered_payout_convention": "untriggered paths contribute zero payout to the all-path statistics",
        }


@dataclass
class TheoremReport:
    lhs: Estimate
    rhs: Estimate
    trigger_probability: float
    mean_overshoot: float
    mean_growth_integral: float
    mean_tau_triggered: Optional[float]
    mean_growth_after_tau: Optional[float]
    sufficient_condition: bool

    @property
    def margin(self) -> float:
        return self.lhs.value - self.rhs.value

    def to_dict(self) -> Dict:
        return {
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "lhs_minus_rhs": self.margin,
            "trigger_probability": self.trigger_probability,
            "mean_overshoot": self.mean_overshoot,
            "mean_growth_integral": self.mean_growth_integral,
            "mean_tau_triggered": self.mean_tau_triggered,
            "mean_growth_after_tau": self.mean_growth_after_tau,
            "sufficient_condition": self.sufficient_condition,
            "notes": [
                "payouts in dimensionless debt-ratio units; notional applies to PV statistics only",
                "sufficient condition evaluated at the mean activation time over triggered paths",
            ],
        }


@dataclass
class SensitivityResult:
    alphas: List[float]
    mean_final_debt: List[float]
    payout_mean: List[float]
    payout_std: List[float]
    mean_final_debt_baseline: float
    pathwise_violations: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class DriftConditions:
    debt_drift_at_threshold: float
    debt_attracting_level: float
    growth_drift_at_threshold: float

    @property
    def debt_condition(self) -> bool:
        # the expansion-regime mean-reversion level must sit at or below D*
        return self.debt_drift_at_threshold <= 0

    @property
    def growth_condition(self) -> bool:
        return self.growth_drift_at_threshold > 0

    @property
    def hold(self) -> bool:
        return self.debt_condition and self.growth_condition

    def to_dict(self) -> Dict:
        return {
            "debt_drift_at_threshold": self.debt_drift_at_threshold,
            "debt_attracting_level": self.debt_attracting_level,
            "growth_drift_at_threshold": self.growth_drift_at_threshold,
            "literal_debt_inequality": self.debt_drift_at_threshold > 0,
            "debt_condition": self.debt_condition,
            "growth_condition": self.growth_condition,
            "hold": self.hold,
        }


@dataclass
class PropositionReport:
    drift: DriftConditions
    horizons: List[float]
    activation_probability: List[float]
    activation_monotone: bool
    activation_checked: bool
    reduction_gap: Estimate
    dominance_violations: int
    prefix_mismatches: int
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        activation_ok = self.activation_monotone or not self.activation_checked
        return activation_ok and self.dominance_violations == 0 and self.prefix_mismatches == 0

    def to_dict(self) -> Dict:
        return {
            "drift_conditions": self.drift.to_dict(),
            "activation": {
                "horizons": self.horizons,
                "probability": self.activation_probability,
                "monotone": self.activation_monotone,
                "asserted": self.activation_checked,
            },
            "expected_reduction_gap": self.reduction_gap.to_dict(),
            "dominance_violations": self.dominance_violations,
            "prefix_mismatches": self.prefix_mismatches,
            "passed": self.passed,
            "notes": self.notes,
        }


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value, q=0 giving the minimum.

    The rank is computed as ceil(q*n/100) rather than n*(q/100), which overshoots
    exact ranks in floating point (q=7, n=100 gives 7.000000000000001).
    """
    if len(values) == 0:
        raise AnalyticsError("Percentile of an empty sample")
    if not 0 <= q <= 100:
        raise AnalyticsError(f"Percentile rank must lie in [0, 100], got {q}")
    values = np.asarray(values, dtype=float)
    kth = max(1, math.ceil(q * len(values) / 100)) - 1
    return float(np.partition(values, kth)[kth])


def mean_estimate(values: np.ndarray) -> Estimate:
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise AnalyticsError("Estimate of an empty sample")
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return Estimate(value=float(values.mean()), se=se)


def proportion_estimate(flags: np.ndarray) -> Estimate:
    """Binomial proportion with SE sqrt(p(1-p)/N)."""
    if len(flags) == 0:
        raise AnalyticsError("Proportion of an empty sample")
    p = float(np.mean(flags))
    return Estimate(value=p, se=math.sqrt(p * (1.0 - p) / len(flags)))


def _check(results: EnsembleResult) -> None:
    if results.n_paths == 0:
        raise AnalyticsError("Ensemble has no paths")


def default_probability(results: EnsembleResult, branch: str) -> Estimate:
    _check(results)
    if branch not in BRANCHES:
        raise AnalyticsError(f"Unknown branch {branch}, expected one of {BRANCHES}")
    flags = results.default_baseline if branch == "baseline" else results.default_converted
    return proportion_estimate(flags)


def distribution_summary(values: np.ndarray) -> DistributionSummary:
    return DistributionSummary(
        p10=percentile(values, 10),
        p50=percentile(values, 50),
        p90=percentile(values, 90),
        mean=float(np.mean(values)),
        count=len(values),
    )


def _payout_stats(values: np.ndarray, triggered: np.ndarray) -> PayoutStats:
    hit = values[triggered]
    return PayoutStats(
        mean=float(values.mean()),
        std=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        mean_triggered=float(hit.mean()) if len(hit) else None,
        std_triggered=float(hit.std(ddof=1)) if len(hit) > 1 else None,
    )


def summarize(results: EnsembleResult) -> EnsembleSummary:
    _check(results)
    scale = present_value_factor(results.spec)
    baseline_mean = float(results.final_debt_baseline.mean())
    converted_mean = float(results.final_debt_converted.mean())
    return EnsembleSummary(
        times=results.times,
        mean_debt={"baseline": results.mean_debt_baseline, "converted": results.mean_debt_converted},
        final_debt={
            "baseline": distribution_summary(results.final_debt_baseline),
            "converted": distribution_summary(results.final_debt_converted),
        },
        default_probability={b: default_probability(results, b) for b in BRANCHES},
        payout_pv={
            "overshoot": _payout_stats(results.pi1 * scale, results.triggered),
            "growth": _payout_stats(results.pi2 * scale, results.triggered),
            "total": _payout_stats(results.pv, results.triggered),
        },
        trigger_probability=proportion_estimate(results.triggered),
        relative_reduction=(baseline_mean - converted_mean) / baseline_mean,
        final_debt_difference=mean_estimate(results.final_debt_baseline - results.final_debt_converted),
        default_difference=mean_estimate(
            results.default_baseline.astype(float) - results.default_converted.astype(float)
        ),
    )


def theorem_report(results: EnsembleResult, spec: TriggerSpec) -> TheoremReport:
    """Both sides of the expected net fiscal benefit inequality, per-path contributions with CIs."""
    _check(results)
    triggered = results.triggered
    payout = results.pi1 + results.pi2
    lhs = mean_estimate(results.maturity_debt_baseline - results.maturity_debt_converted - payout)
    rhs = mean_estimate(spec.alpha * spec.d_star * triggered.astype(float)
                        - spec.beta * results.overshoot - spec.gamma * results.growth_integral)

    tau_bar = float(results.tau[triggered].mean()) if triggered.any() else None
    g_bar = float(np.nanmean(results.mean_growth_after_tau[triggered])) \
        if np.isfinite(results.mean_growth_after_tau[triggered]).any() else None
    remaining = spec.horizon - tau_bar if tau_bar is not None else 0.0
    sufficient = spec.alpha * spec.d_star > spec.beta * spec.d_star + spec.gamma * remaining * spec.g_star

    return TheoremReport(
        lhs=lhs,
        rhs=rhs,
        trigger_probability=float(triggered.mean()),
        mean_overshoot=float(results.overshoot.mean()),
        mean_growth_integral=float(results.growth_integral.mean()),
        mean_tau_triggered=tau_bar,
        mean_growth_after_tau=g_bar,
        sufficient_condition=bool(sufficient),
    )


def sweep_alpha(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan, alphas: Sequence[float],
                workers: int = 1, progress: bool = False) -> SensitivityResult:
    """One paired ensemble per conversion fraction, all on the same seed."""
    if len(alphas) == 0:
        raise AnalyticsError("Sweep needs at least one alpha")
    for alpha in alphas:
        if not 0 < alpha < 1:
            raise AnalyticsError(f"Conversion fraction alpha must lie in (0, 1), got {alpha}")

    runner = EnsembleRunner(cfg, spec, plan, workers=workers, progress=progress)
    finals, means, payout_means, payout_stds = [], [], [], []
    baseline_mean = None
    for alpha in alphas:
        logger.info(f"Sweep alpha={alpha}")
        results = runner.with_spec(replace(spec, alpha=float(alpha))).run()
        finals.append(results.final_debt_converted)
        means.append(float(results.final_debt_converted.mean()))
        stats = _payout_stats(results.pv, results.triggered)
        payout_means.append(stats.mean)
        payout_stds.append(stats.std)
        baseline_mean = float(results.final_debt_baseline.mean())

    order = np.argsort(alphas, kind="stable")
    violations = 0
    for lo, hi in zip(order[:-1], order[1:]):
        violations += int((finals[hi] > finals[lo] + 1e-12).sum())
    if violations:
        logger.warning(f"Sweep: {violations} paths where a larger alpha raised final debt")

    return SensitivityResult(
        alphas=[float(a) for a in alphas],
        mean_final_debt=means,
        payout_mean=payout_means,
        payout_std=payout_stds,
        mean_final_debt_baseline=baseline_mean,
        pathwise_violations=violations,
    )


def drift_conditions(cfg: ModelConfig, spec: TriggerSpec) -> DriftConditions:
    p = cfg.params_by_regime[EXPANSION]
    return DriftConditions(
        debt_drift_at_threshold=p.a - p.b * spec.d_star,
        debt_attracting_level=p.a / p.b if p.b > 0 else math.inf,
        growth_drift_at_threshold=p.c - p.d * spec.g_star,
    )


def activation_curve(results: EnsembleResult, horizons: Sequence[float]) -> List[float]:
    """P(tau <= T) for each T, read off one long-horizon ensemble."""
    dt = results.plan.dt
    out = []
    for horizon in horizons:
        limit = int(round(horizon / dt))
        hit = results.triggered & (results.tau_index <= limit)
        out.append(float(hit.mean()))
    return out


def proposition_diagnostics(cfg: ModelConfig, spec: TriggerSpec, plan: SimulationPlan,
                            horizons: Sequence[float] = (5, 10, 20, 50), workers: int = 1,
                            progress: bool = False, results: Optional[EnsembleResult] = None) -> PropositionReport:
    """Empirical checks of finite-time activation, pathwise dominance and expected debt reduction.

    Activation probabilities come from a single ensemble run out to the
    longest horizon, so the curve is evaluated on nested horizons with a
    shared seed. The expected-reduction gap is reported, never asserted.
    """
    drift = drift_conditions(cfg, spec)
    notes = []
    if not drift.hold:
        logger.warning(f"Drift conditions fail for {spec.d_star=}, {spec.g_star=}; activation is reported only")
        notes.append("drift conditions fail: activation monotonicity reported, not asserted")

    runner = EnsembleRunner(cfg, spec, plan, workers=workers, progress=progress)
    longest = float(max(horizons))
    long_run = runner.with_spec(replace(spec, horizon=longest)).with_plan(replace(plan, horizon=longest)).run()
    curve = activation_curve(long_run, horizons)
    monotone = all(b >= a for a, b in zip(curve[:-1], curve[1:]))

    if results is None:
        results = runner.run()
    gap = mean_estimate(results.maturity_debt_baseline - results.maturity_debt_converted
                        - spec.alpha * spec.d_star * results.triggered.astype(float))
    if gap.value < 0:
        notes.append("expected reduction fell short of alpha*D*P(tau<=T); the bound assumes negative post-conversion drift")

    return PropositionReport(
        drift=drift,
        horizons=[float(h) for h in horizons],
        activation_probability=curve,
        activation_monotone=monotone,
        activation_checked=drift.hold,
        reduction_gap=gap,
        dominance_violations=int(results.dominance_violations.sum() + long_run.dominance_violations.sum()),
        prefix_mismatches=int(results.prefix_mismatches.sum() + long_run.prefix_mismatches.sum()),
        notes=notes,
    )
