from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from tsdcm.model import (
    DEBT_FLOOR, GeneratorMatrix, ModelConfig, ModelError, RegimeParams,
    debt_step, draw_step_noise, growth_step, n_steps, sample_regime_step, simulate_path,
    transition_matrix,
)
from tsdcm.noise import PathNoise


def _expm_taylor(a: np.ndarray, terms: int = 20) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a truncated Taylor series."""
    norm = np.abs(a).sum(axis=1).max()
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    scaled = a / 2 ** squarings
    result = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, terms + 1):
        term = term @ scaled / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def _params(**overrides) -> RegimeParams:
    base = dict(a=0.0, b=0.0, sigma=0.0, kappa=0.0, mu_j=0.0, sigma_j=0.0,
                c=0.0, d=0.0, eta=0.0, xi=0.0, mu_k=0.0, sigma_k=0.0)
    base.update(overrides)
    return RegimeParams(**base)


def _max_debt_error(cfg: ModelConfig, dt: float, horizon: float = 10.0) -> float:
    path = simulate_path(cfg, horizon, dt, PathNoise(1, 0))
    p = cfg.params_by_regime[0]
    level = p.a / p.b
    exact = level + (cfg.d0 - level) * np.exp(-p.b * path.times)
    return float(np.abs(path.debt - exact).max())


class TestTransitionMatrix:
    def test_default_rates(self):
        p = transition_matrix(GeneratorMatrix(0.12, 0.08), 0.01)
        assert p[0, 0] == pytest.approx(0.99880120, abs=1e-8)
        assert p[0, 1] == pytest.approx(0.00119880, abs=1e-8)

    def test_zero_generator_is_identity(self):
        assert np.array_equal(transition_matrix(GeneratorMatrix(0.0, 0.0), 1.0), np.eye(2))

    def test_long_step_reaches_stationary(self):
        p = transition_matrix(GeneratorMatrix(0.12, 0.08), 1e4)
        assert p[0] == pytest.approx([0.4, 0.6], abs=1e-12)
        assert p[1] == pytest.approx([0.4, 0.6], abs=1e-12)

    @pytest.mark.parametrize("lam01,lam10,dt", [
        (0.12, 0.08, 0.01), (0.12, 0.08, 1.0), (2.0, 0.5, 0.3), (10.0, 1.0, 2.0), (0.0, 3.0, 0.5),
    ])
    def test_matches_taylor_oracle(self, lam01, lam10, dt):
        q = GeneratorMatrix(lam01, lam10)
        expected = _expm_taylor(q.q * dt)
        assert np.abs(transition_matrix(q, dt) - expected).max() <= 1e-12

    def test_taylor_oracle_grid(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            q = GeneratorMatrix(float(rng.uniform(0, 5)), float(rng.uniform(0, 5)))
            dt = float(rng.uniform(1e-4, 2.0))
            assert np.abs(transition_matrix(q, dt) - _expm_taylor(q.q * dt)).max() <= 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        for lam01, lam10, dt in zip(rng.uniform(0, 100, 200), rng.uniform(0, 100, 200), rng.uniform(1e-6, 10, 200)):
            p = transition_matrix(GeneratorMatrix(float(lam01), float(lam10)), float(dt))
            assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-15

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ModelError):
            transition_matrix(GeneratorMatrix(0.12, 0.08), 0.0)

    def test_cached_matrix_is_read_only(self):
        p = transition_matrix(GeneratorMatrix(0.12, 0.08), 0.01)
        with pytest.raises(ValueError):
            p[0, 0] = 1.0

    def test_negative_rate_rejected(self):
        with pytest.raises(ModelError):
            GeneratorMatrix(-0.1, 0.08)


@pytest.mark.parametrize("current,p01,p10,u,expected", [
    (0, 0.0012, 0.0008, 0.0005, 1),
    (0, 0.0012, 0.0008, 0.5, 0),
    (1, 0.0012, 0.0008, 0.00079, 0),
    (1, 0.0012, 0.0008, 0.0008, 1),
])
def test_sample_regime_step(current, p01, p10, u, expected):
    p = np.array([[1 - p01, p01], [p10, 1 - p10]])
    assert sample_regime_step(current, p, u) == expected


class TestDebtStep:
    def test_pure_drift(self):
        assert debt_step(1.0, _params(a=0.05, b=0.10), 0.01, 0.0) == pytest.approx(0.9995, abs=1e-15)

    def test_pure_diffusion(self):
        assert debt_step(1.0, _params(sigma=0.02), 0.25, 0.1) == pytest.approx(1.002, abs=1e-15)

    def test_identity_jump(self):
        assert debt_step(1.0, _params(sigma_j=0.3), 0.01, 0.0, 1, [0.0]) == pytest.approx(1.0, abs=1e-15)

    def test_jumps_add_multiplicatively(self):
        p = _params(mu_j=-0.1, sigma_j=0.3)
        expected = 1.0 + (math.exp(-0.1 + 0.3) - 1) + (math.exp(-0.1 - 0.6) - 1)
        assert debt_step(1.0, p, 0.01, 0.0, 2, [1.0, -2.0]) == pytest.approx(expected, rel=1e-14)

    def test_stays_positive_under_extreme_shocks(self):
        p = _params(a=-5.0, sigma=3.0, mu_j=-10.0, sigma_j=1.0)
        out = debt_step(0.5, p, 1.0, -10.0, 3, [-5.0, -5.0, -5.0])
        assert out >= DEBT_FLOOR
        assert out > 0

    def test_rejects_nonpositive_debt(self):
        with pytest.raises(ModelError):
            debt_step(0.0, _params(), 0.01, 0.0)

    def test_rejects_jump_count_mismatch(self):
        with pytest.raises(ModelError):
            debt_step(1.0, _params(), 0.01, 0.0, 2, [0.1])


class TestGrowthStep:
    def test_equilibrium(self):
        assert growth_step(0.04, _params(c=0.004, d=0.1), 0.01, 0.0) == pytest.approx(0.04, abs=1e-15)

    def test_pure_drift(self):
        assert growth_step(0.02, _params(c=0.004, d=0.1), 0.01, 0.0) == pytest.approx(0.02002, abs=1e-15)

    def test_pure_diffusion(self):
        assert growth_step(0.05, _params(eta=0.02), 0.01, -0.1) == pytest.approx(0.0499, abs=1e-15)

    def test_can_turn_negative(self):
        assert growth_step(0.01, _params(c=-1.0), 0.1, 0.0) < 0

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ModelError):
            growth_step(0.04, _params(), -0.01, 0.0)


class TestSimulatePath:
    def test_grid_shape(self, model_cfg):
        path = simulate_path(model_cfg, 10.0, 0.01, PathNoise(12345, 0))
        assert len(path.times) == len(path.regimes) == len(path.debt) == len(path.growth) == 1001
        assert path.times[1000] == pytest.approx(10.0, abs=1e-12)
        assert path.n_steps == 1000

    def test_debt_matches_ode(self, frozen_cfg):
        path = simulate_path(frozen_cfg, 10.0, 0.01, PathNoise(12345, 0))
        assert path.debt[-1] == pytest.approx(0.5 + 0.5 * math.exp(-1.0), abs=1e-3)
        assert (path.regimes == 0).all()

    def test_growth_matches_ode(self, frozen_cfg):
        cfg = replace(frozen_cfg, g0=0.02)
        path = simulate_path(cfg, 10.0, 0.01, PathNoise(12345, 0))
        k = int(round(6.9315 / 0.01))
        assert path.growth[k] == pytest.approx(0.03, abs=1e-3)

    def test_euler_first_order(self, frozen_cfg):
        coarse = _max_debt_error(frozen_cfg, 0.02)
        fine = _max_debt_error(frozen_cfg, 0.01)
        assert 1.7 <= coarse / fine <= 2.3

    def test_deterministic(self, model_cfg):
        first = simulate_path(model_cfg, 5.0, 0.01, PathNoise(99, 7))
        second = simulate_path(model_cfg, 5.0, 0.01, PathNoise(99, 7))
        assert np.array_equal(first.debt, second.debt)
        assert np.array_equal(first.growth, second.growth)
        assert np.array_equal(first.regimes, second.regimes)

    def test_debt_positive(self, model_cfg):
        cfg = replace(model_cfg, params_by_regime=tuple(
            replace(p, sigma=0.8, kappa=5.0, mu_j=-1.0, sigma_j=1.0) for p in model_cfg.params_by_regime
        ))
        path = simulate_path(cfg, 10.0, 0.01, PathNoise(5, 0))
        assert (path.debt > 0).all()

    def test_rejects_empty_grid(self, model_cfg):
        with pytest.raises(ModelError):
            simulate_path(model_cfg, 0.001, 0.01, PathNoise(1, 0))

    def test_correlated_drivers(self, model_cfg):
        cfg = replace(model_cfg, rho=1.0)
        noise = draw_step_noise(cfg, 0.01, 200, [PathNoise(3, 0)])
        assert np.allclose(noise.dw, noise.dw_growth, rtol=0, atol=1e-15)


def test_n_steps_rounds_to_grid():
    assert n_steps(10.0, 0.01) == 1000
    assert n_steps(1.0, 0.3) == 3


@pytest.mark.slow
def test_long_run_regime_occupancy(model_cfg):
    dt = 0.1
    steps = int(1e4 / dt)
    noise = draw_step_noise(model_cfg, dt, steps, [PathNoise(12345, i) for i in range(8)])
    occupancy = float((noise.regimes == 0).mean())
    assert occupancy == pytest.approx(model_cfg.q.stationary[0], abs=0.02)


def test_intense_jumps_over_long_steps(model_cfg):
    cfg = replace(model_cfg, params_by_regime=tuple(
        replace(p, kappa=800.0, mu_j=math.log(2.0), sigma_j=0.0) for p in model_cfg.params_by_regime
    ))
    noise = draw_step_noise(cfg, 1.0, 50, [PathNoise(8, i) for i in range(40)])
    counts = noise.jump_debt
    assert counts.mean() == pytest.approx(800.0, abs=2.0)
    assert counts.std() == pytest.approx(math.sqrt(800.0), rel=0.1)
