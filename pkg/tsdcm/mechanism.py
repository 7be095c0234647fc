import math
import logging
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from .model import PathRecord

logger = logging.getLogger(__name__)

NOT_HIT = -1


class MechanismError(Exception):
    """Base exception for trigger and payout errors"""
    pass


class Compounding(Enum):
    CONTINUOUS = "continuous"
    ANNUAL = "annual"


@dataclass(frozen=True)
class TriggerSpec:
    """Contract terms: activation thresholds, conversion fraction and token payout.

    Payout coefficients apply to dimensionless debt-ratio units; notional
    converts them to currency (default 100, i.e. currency millions per unit
    of debt ratio, an arbitrary scale).
    """
    d_star: float = 0.80
    g_star: float = 0.03
    alpha: float = 0.3
    beta: float = 1.0
    gamma: float = 1.0
    horizon: float = 10.0
    discount_rate: float = 0.03
    notional: float = 100.0
    compounding: Compounding = Compounding.CONTINUOUS
    default_barrier: float = 1.40

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise MechanismError(f"Conversion fraction alpha must lie in (0, 1), got {self.alpha}")
        if not self.d_star > 0:
            raise MechanismError(f"Debt threshold d_star must be > 0, got {self.d_star}")
        if not self.horizon > 0:
            raise MechanismError(f"Token horizon must be > 0, got {self.horizon}")
        for name in ("beta", "gamma", "discount_rate", "notional"):
            if not getattr(self, name) >= 0:
                raise MechanismError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not isinstance(self.compounding, Compounding):
            object.__setattr__(self, "compounding", Compounding(self.compounding))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["compounding"] = self.compounding.value
        return data


@dataclass
class HittingTimes:
    tau_d: Optional[float]
    tau_g: Optional[float]
    tau: Optional[float]
    triggered: bool
    index_d: int = NOT_HIT
    index_g: int = NOT_HIT
    index: int = NOT_HIT


@dataclass
class TokenPayout:
    pi1: float
    pi2: float
    total: float
    pv: float


def maturity_index(spec: TriggerSpec, dt: float) -> int:
    return int(round(spec.horizon / dt))


def first_hits(mask: np.ndarray) -> np.ndarray:
    """First row index where a time-major boolean mask is set, NOT_HIT where it never is."""
    hit = mask.any(axis=0)
    return np.where(hit, mask.argmax(axis=0), NOT_HIT)


def hitting_indices(debt: np.ndarray, growth: np.ndarray, spec: TriggerSpec,
                    dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised first-passage detection on time-major (step, path) arrays.

    Returns (index_d, index_g, index_tau, triggered); index_tau is NOT_HIT
    unless both conditions were met at some grid point.
    """
    index_d = first_hits(debt <= spec.d_star)
    index_g = first_hits(growth >= spec.g_star)
    both = (index_d != NOT_HIT) & (index_g != NOT_HIT)
    index_tau = np.where(both, np.maximum(index_d, index_g), NOT_HIT)
    triggered = both & (index_tau <= maturity_index(spec, dt))
    return index_d, index_g, index_tau, triggered


def detect_hitting_times(path: PathRecord, spec: TriggerSpec) -> HittingTimes:
    index_d, index_g, index_tau, triggered = (
        int(x[0]) for x in hitting_indices(path.debt[:, None], path.growth[:, None], spec, path.dt)
    )

    def _time(index: int) -> Optional[float]:
        return None if index == NOT_HIT else float(path.times[index])

    return HittingTimes(
        tau_d=_time(index_d),
        tau_g=_time(index_g),
        tau=_time(index_tau),
        triggered=bool(triggered),
        index_d=index_d,
        index_g=index_g,
        index=index_tau,
    )


def apply_conversion(d_pre: float, alpha: float) -> float:
    """Retire a fraction alpha of the outstanding debt ratio."""
    if not 0 < alpha < 1:
        raise MechanismError(f"Conversion fraction alpha must lie in (0, 1), got {alpha}")
    if not d_pre > 0:
        raise MechanismError(f"Debt ratio must be > 0, got {d_pre}")
    return (1.0 - alpha) * d_pre


def discount(value: float, rate: float, time: float,
             compounding: Compounding = Compounding.CONTINUOUS) -> float:
    if rate < 0 or time < 0:
        raise MechanismError(f"Discounting needs rate >= 0 and time >= 0, got rate={rate}, time={time}")
    if compounding is Compounding.ANNUAL:
        return value / (1.0 + rate) ** time
    return value * math.exp(-rate * time)


def growth_excess(growth: np.ndarray, start: np.ndarray, end: int, g_star: float, dt: float) -> np.ndarray:
    """Left-endpoint Riemann sum of (g - g*)^+ over grid points start <= k < end, per path.

    growth is time-major; each path is summed on its own contiguous row.
    """
    rows = np.ascontiguousarray(growth.T)
    k = np.arange(rows.shape[1])
    window = (k[None, :] >= start[:, None]) & (k[None, :] < end)
    excess = np.where(window, np.maximum(rows - g_star, 0.0), 0.0)
    return excess.sum(axis=1) * dt


def overshoot(debt_at_tau: np.ndarray, d_star: float) -> np.ndarray:
    return np.maximum(debt_at_tau - d_star, 0.0)


def present_value_factor(spec: TriggerSpec) -> float:
    return spec.notional * discount(1.0, spec.discount_rate, spec.horizon, spec.compounding)


def compute_payout(converted_path: PathRecord, ht: HittingTimes, spec: TriggerSpec) -> TokenPayout:
    """Token payout of a triggered path, using the post-conversion debt at tau."""
    if not ht.triggered:
        raise MechanismError("Payout is only defined for triggered paths")
    end = min(maturity_index(spec, converted_path.dt), converted_path.n_steps + 1)
    pi1 = spec.beta * float(overshoot(converted_path.debt[ht.index], spec.d_star))
    integral = growth_excess(converted_path.growth[:, None], np.array([ht.index]), end,
                             spec.g_star, converted_path.dt)
    pi2 = spec.gamma * float(integral[0])
    total = pi1 + pi2
    return TokenPayout(pi1=pi1, pi2=pi2, total=total, pv=total * present_value_factor(spec))
