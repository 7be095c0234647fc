import math
import logging
from dataclasses import dataclass, asdict
from typing import Dict, List, Sequence, Tuple

import numpy as np
from cachetools import cached, LRUCache

from .noise import PathNoise

logger = logging.getLogger(__name__)

DEBT_FLOOR = 1e-12
EXPANSION = 0
CRISIS = 1


class ModelError(Exception):
    """Base exception for model-related errors"""
    pass


@dataclass(frozen=True)
class RegimeParams:
    """Drift, volatility and jump parameters of one macro regime.

    Debt:   dD = (a - b*D) dt + sigma*D dW  + D*(e^Z - 1) dN,  Z ~ N(mu_j, sigma_j), N ~ Poisson(kappa)
    Growth: dg = (c - d*g) dt + eta*g dW'  + g*(e^Y - 1) dM,  Y ~ N(mu_k, sigma_k), M ~ Poisson(xi)
    """
    a: float
    b: float
    sigma: float
    kappa: float
    mu_j: float
    sigma_j: float
    c: float = 0.004
    d: float = 0.1
    eta: float = 0.5
    xi: float = 0.0
    mu_k: float = 0.0
    sigma_k: float = 0.0

    def __post_init__(self):
        for name in ("b", "d", "sigma", "eta", "kappa", "xi", "sigma_j", "sigma_k"):
            value = getattr(self, name)
            if not value >= 0:
                raise ModelError(f"Regime parameter {name} must be >= 0, got {value}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class GeneratorMatrix:
    lambda01: float
    lambda10: float

    def __post_init__(self):
        if not (self.lambda01 >= 0 and self.lambda10 >= 0):
            raise ModelError(
                f"Generator rates must be >= 0, got lambda01={self.lambda01}, lambda10={self.lambda10}"
            )

    @property
    def q(self) -> np.ndarray:
        return np.array([
            [-self.lambda01, self.lambda01],
            [self.lambda10, -self.lambda10],
        ])

    @property
    def stationary(self) -> Tuple[float, float]:
        """Long-run occupancy (pi0, pi1)."""
        s = self.lambda01 + self.lambda10
        if s == 0:
            raise ModelError("Stationary distribution is undefined for a zero generator")
        return self.lambda10 / s, self.lambda01 / s

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class ModelConfig:
    params_by_regime: Tuple[RegimeParams, RegimeParams]
    q: GeneratorMatrix
    rho: float = 0.0
    d0: float = 1.0
    g0: float = 0.04
    r0: int = EXPANSION

    def __post_init__(self):
        if len(self.params_by_regime) != 2:
            raise ModelError(f"Expected parameters for 2 regimes, got {len(self.params_by_regime)}")
        if not -1.0 <= self.rho <= 1.0:
            raise ModelError(f"Correlation rho must lie in [-1, 1], got {self.rho}")
        if not self.d0 > 0:
            raise ModelError(f"Initial debt ratio d0 must be > 0, got {self.d0}")
        if self.r0 not in (EXPANSION, CRISIS):
            raise ModelError(f"Initial regime r0 must be 0 or 1, got {self.r0}")

    def regime_array(self, name: str) -> np.ndarray:
        """Per-regime vector of one parameter, indexable by a regime array."""
        return np.array([getattr(p, name) for p in self.params_by_regime], dtype=float)

    def to_dict(self) -> Dict:
        return {
            "regimes": [p.to_dict() for p in self.params_by_regime],
            "generator": self.q.to_dict(),
            "rho": self.rho,
            "d0": self.d0,
            "g0": self.g0,
            "r0": self.r0,
        }


@dataclass
class PathRecord:
    """Gridded trajectory of one simulated path: times[k] = k*dt."""
    dt: float
    times: np.ndarray
    regimes: np.ndarray
    debt: np.ndarray
    growth: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass
class StepNoise:
    """Realised per-step shocks for a batch of paths, time-major (step, path).

    regimes has one more row than the increment arrays: row k is the regime on
    grid point k, and row k+1 is the regime that drives step k.
    """
    regimes: np.ndarray
    dw: np.ndarray
    dw_growth: np.ndarray
    jump_debt: np.ndarray
    jump_growth: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.dw.shape[0]

    @property
    def n_paths(self) -> int:
        return self.dw.shape[1]


def n_steps(horizon: float, dt: float) -> int:
    if not dt > 0:
        raise ModelError(f"Step size dt must be > 0, got {dt}")
    if not horizon > 0:
        raise ModelError(f"Horizon must be > 0, got {horizon}")
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ModelError(f"Horizon {horizon} is shorter than one step of {dt}")
    return steps


@cached(cache=LRUCache(maxsize=128))
def transition_matrix(q: GeneratorMatrix, dt: float) -> np.ndarray:
    """exp(Q*dt) for the two-state chain, in closed form."""
    if not dt > 0:
        raise ModelError(f"Step size dt must be > 0, got {dt}")
    s = q.lambda01 + q.lambda10
    if s == 0:
        p = np.eye(2)
    else:
        pi0, pi1 = q.lambda10 / s, q.lambda01 / s
        decay = math.exp(-s * dt)
        p00 = pi0 + pi1 * decay
        p11 = pi1 + pi0 * decay
        p = np.array([[p00, 1.0 - p00], [1.0 - p11, p11]])
    p.flags.writeable = False
    return p


def _advance_regimes(current, p: np.ndarray, u):
    switch = np.where(current == EXPANSION, p[0, 1], p[1, 0])
    return np.where(u < switch, 1 - current, current)


def sample_regime_step(current: int, p: np.ndarray, u: float) -> int:
    return int(_advance_regimes(np.asarray(current), p, np.asarray(u)))


def jump_sum(n_jumps: int, z_jumps: Sequence[float], mu: float, sigma: float) -> float:
    """Sum of multiplicative jump sizes e^(mu + sigma*z) - 1 over the jumps of one step."""
    if n_jumps < 0 or len(z_jumps) != n_jumps:
        raise ModelError(f"Expected {n_jumps} jump draws, got {len(z_jumps)}")
    total = 0.0
    for z in z_jumps:
        total += math.exp(mu + sigma * z) - 1.0
    return total


def _debt_update(d, a, b, sigma, dt, dw, jump):
    return np.maximum(d + (a - b * d) * dt + sigma * d * dw + d * jump, DEBT_FLOOR)


def _growth_update(g, c, d, eta, dt, dw, jump):
    return g + (c - d * g) * dt + eta * g * dw + g * jump


def debt_step(d: float, p: RegimeParams, dt: float, dw: float,
              n_jumps: int = 0, z_jumps: Sequence[float] = ()) -> float:
    """One Euler-Maruyama step of the debt ratio, floored at DEBT_FLOOR."""
    if not d > 0:
        raise ModelError(f"Debt ratio must be > 0, got {d}")
    if not dt > 0:
        raise ModelError(f"Step size dt must be > 0, got {dt}")
    jump = jump_sum(n_jumps, z_jumps, p.mu_j, p.sigma_j)
    return float(_debt_update(d, p.a, p.b, p.sigma, dt, dw, jump))


def growth_step(g: float, p: RegimeParams, dt: float, dw: float,
                n_jumps: int = 0, z_jumps: Sequence[float] = ()) -> float:
    # no floor: growth may turn negative
    if not dt > 0:
        raise ModelError(f"Step size dt must be > 0, got {dt}")
    jump = jump_sum(n_jumps, z_jumps, p.mu_k, p.sigma_k)
    return float(_growth_update(g, p.c, p.d, p.eta, dt, dw, jump))


def _jump_factors(noise: PathNoise, counts: np.ndarray, step_regimes: np.ndarray,
                  mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    steps = np.repeat(np.arange(len(counts)), counts)
    z = noise.jump_normals(len(steps))
    regime = step_regimes[steps]
    factors = np.exp(mu[regime] + sigma[regime] * z) - 1.0
    return np.bincount(steps, weights=factors, minlength=len(counts))


def draw_step_noise(cfg: ModelConfig, dt: float, steps: int, streams: List[PathNoise]) -> StepNoise:
    """Realise regimes, Brownian increments and jump sums for a batch of paths.

    Each path reads its own stream block-major: all regime uniforms, the
    (2, steps) Gaussian block, the (2, steps) Poisson count block once the
    regimes are known, then every debt jump normal and every growth jump normal.
    """
    base = [stream.base_draws(steps) for stream in streams]
    u = np.stack([b.regime_u for b in base], axis=1)
    w_debt = np.stack([b.w_debt for b in base], axis=1)
    w_growth = np.stack([b.w_growth for b in base], axis=1)

    p = transition_matrix(cfg.q, dt)
    regimes = np.empty((steps + 1, len(streams)), dtype=np.int8)
    regimes[0] = cfg.r0
    for k in range(steps):
        regimes[k + 1] = _advance_regimes(regimes[k], p, u[k])
    step_regimes = regimes[1:]

    rates = np.stack([cfg.regime_array("kappa"), cfg.regime_array("xi")]) * dt
    mu_j, sigma_j = cfg.regime_array("mu_j"), cfg.regime_array("sigma_j")
    mu_k, sigma_k = cfg.regime_array("mu_k"), cfg.regime_array("sigma_k")
    jump_debt = np.empty((steps, len(streams)))
    jump_growth = np.empty((steps, len(streams)))
    for i, stream in enumerate(streams):
        counts = stream.jump_counts(rates[:, step_regimes[:, i]])
        jump_debt[:, i] = _jump_factors(stream, counts[0], step_regimes[:, i], mu_j, sigma_j)
        jump_growth[:, i] = _jump_factors(stream, counts[1], step_regimes[:, i], mu_k, sigma_k)

    sqrt_dt = math.sqrt(dt)
    dw = sqrt_dt * w_debt
    dw_growth = cfg.rho * dw + math.sqrt(1.0 - cfg.rho ** 2) * (sqrt_dt * w_growth)
    return StepNoise(regimes=regimes, dw=dw, dw_growth=dw_growth,
                     jump_debt=jump_debt, jump_growth=jump_growth)


def integrate(cfg: ModelConfig, dt: float, noise: StepNoise) -> Tuple[np.ndarray, np.ndarray]:
    """Run the debt and growth recursions over a realised batch; returns time-major arrays."""
    steps, paths = noise.n_steps, noise.n_paths
    step_regimes = noise.regimes[1:]
    a, b, sigma = (cfg.regime_array(n)[step_regimes] for n in ("a", "b", "sigma"))
    c, d, eta = (cfg.regime_array(n)[step_regimes] for n in ("c", "d", "eta"))

    debt = np.empty((steps + 1, paths))
    growth = np.empty((steps + 1, paths))
    debt[0] = cfg.d0
    growth[0] = cfg.g0
    for k in range(steps):
        debt[k + 1] = _debt_update(debt[k], a[k], b[k], sigma[k], dt, noise.dw[k], noise.jump_debt[k])
        growth[k + 1] = _growth_update(growth[k], c[k], d[k], eta[k], dt, noise.dw_growth[k], noise.jump_growth[k])
    return debt, growth


def restart_debt(cfg: ModelConfig, dt: float, noise: StepNoise, baseline: np.ndarray,
                 start: np.ndarray, factor: np.ndarray) -> np.ndarray:
    """Branch the debt recursion at grid index start[i], scaled by factor[i], replaying the same noise.

    Paths with start > n_steps never branch and stay equal to the baseline.
    """
    steps = noise.n_steps
    branched = baseline.copy()
    cols = np.nonzero(start <= steps)[0]
    if len(cols) == 0:
        return branched
    branched[start[cols], cols] = factor[cols] * baseline[start[cols], cols]

    step_regimes = noise.regimes[1:]
    a, b, sigma = (cfg.regime_array(n)[step_regimes] for n in ("a", "b", "sigma"))
    for k in range(int(start[cols].min()), steps):
        stepped = _debt_update(branched[k], a[k], b[k], sigma[k], dt, noise.dw[k], noise.jump_debt[k])
        branched[k + 1] = np.where(k >= start, stepped, branched[k + 1])
    return branched


def simulate_path(cfg: ModelConfig, horizon: float, dt: float, noise: PathNoise) -> PathRecord:
    steps = n_steps(horizon, dt)
    step_noise = draw_step_noise(cfg, dt, steps, [noise])
    debt, growth = integrate(cfg, dt, step_noise)
    return PathRecord(
        dt=dt,
        times=np.arange(steps + 1) * dt,
        regimes=step_noise.regimes[:, 0].astype(int),
        debt=debt[:, 0].copy(),
        growth=growth[:, 0].copy(),
    )
