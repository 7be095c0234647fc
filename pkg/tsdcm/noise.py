"""Per-path random substreams.

Every path owns a counter-based Philox stream keyed by (seed, path_index), so
a path's draws never depend on which worker simulates it or on how many paths
run beside it. Distinct keys give non-overlapping streams of 2^130 draws each.

A path of M steps reads its stream block by block, always in this order:

1. M uniforms for the regime chain
2. a (2, M) block of standard normals, row 0 debt and row 1 growth
3. a (2, M) block of Poisson jump counts, row 0 debt and row 1 growth,
   with means kappa*dt and xi*dt of the regime driving each step
4. one standard normal per debt jump, in step order
5. one standard normal per growth jump, in step order
"""
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


@dataclass
class BaseDraws:
    regime_u: np.ndarray
    w_debt: np.ndarray
    w_growth: np.ndarray


class PathNoise:
    """Random stream of one path, read in a fixed order."""

    def __init__(self, seed: int, path_index: int):
        if path_index < 0:
            raise ValueError(f"Path index must be >= 0, got {path_index}")
        self.seed = seed & SEED_MASK
        self.path_index = path_index
        key = self.seed | (path_index << 64)
        self._rng = np.random.Generator(np.random.Philox(key=key))

    def base_draws(self, steps: int) -> BaseDraws:
        u = self._rng.random(steps)
        w = self._rng.standard_normal((2, steps))
        return BaseDraws(regime_u=u, w_debt=w[0], w_growth=w[1])

    def jump_counts(self, means: np.ndarray) -> np.ndarray:
        """Poisson counts with the given per-cell means (debt row, growth row)."""
        means = np.asarray(means, dtype=float)
        if (means < 0).any():
            raise ValueError(f"Poisson mean must be >= 0, got {means.min()}")
        return self._rng.poisson(means)

    def jump_normals(self, count: int) -> np.ndarray:
        return self._rng.standard_normal(count)
