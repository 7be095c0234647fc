from __future__ import annotations

from dataclasses import replace

import pytest

from tsdcm.config import RunConfig, default_config
from tsdcm.ensemble import SimulationPlan
from tsdcm.mechanism import TriggerSpec
from tsdcm.model import GeneratorMatrix, ModelConfig, RegimeParams


def _quiet(p: RegimeParams) -> RegimeParams:
    return replace(p, sigma=0.0, kappa=0.0, eta=0.0, xi=0.0)


@pytest.fixture
def run_config() -> RunConfig:
    return default_config()


@pytest.fixture
def model_cfg(run_config: RunConfig) -> ModelConfig:
    return run_config.model


@pytest.fixture
def spec() -> TriggerSpec:
    return TriggerSpec()


@pytest.fixture
def frozen_cfg(model_cfg: ModelConfig) -> ModelConfig:
    """Expansion regime forever, no diffusion and no jumps."""
    return replace(
        model_cfg,
        params_by_regime=tuple(_quiet(p) for p in model_cfg.params_by_regime),
        q=GeneratorMatrix(0.0, 0.0),
        r0=0,
    )


@pytest.fixture
def small_plan() -> SimulationPlan:
    return SimulationPlan(n_paths=64, horizon=10.0, dt=0.01, seed=12345)
