"""L-infinity bounded adversarial example generation: FGSM and PGD.

PGD iterates x <- Pi(x + step * sign(grad_x loss)) where Pi projects first
into the epsilon-ball around the clean input and then into the valid feature
range. sign(0) is 0, so flat coordinates are never nudged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, NumericError
from .nn import MlpParams, input_gradient
from .rng import rng_from


@dataclass(frozen=True)
class AttackConfig:
    """PGD/FGSM knobs: radius epsilon, per-step size, iteration count,
    random start, and the valid feature range."""

    epsilon: float
    step_size: float
    iterations: int = 1
    random_start: bool = True
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.clip_min >= self.clip_max:
            raise ConfigError(f"clip_min {self.clip_min} must be < clip_max {self.clip_max}")
        if self.epsilon > 0:
            if not 0 < self.step_size <= self.epsilon:
                raise ConfigError(
                    f"step_size must satisfy 0 < step <= epsilon, got {self.step_size}"
                )
        elif self.step_size != 0:
            # zero-radius attacks are allowed (identity), but only with step 0
            raise ConfigError("epsilon=0 requires step_size=0")


def _check_in_range(x: np.ndarray, cfg: AttackConfig) -> None:
    if x.size and (x.min() < cfg.clip_min or x.max() > cfg.clip_max):
        raise DataError(f"inputs must lie in [{cfg.clip_min}, {cfg.clip_max}]")


def fgsm(params: MlpParams, x, y, cfg: AttackConfig) -> np.ndarray:
    """Single step: clamp(x + epsilon * sign(grad_x loss))."""
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    x2 = x.reshape(1, -1) if x.ndim == 1 else x
    _check_in_range(x2, cfg)
    grad = input_gradient(params, x2, y)
    adv = x2 + cfg.epsilon * np.sign(grad)
    return np.clip(adv, cfg.clip_min, cfg.clip_max).reshape(shape)


def pgd(params: MlpParams, x, y, cfg: AttackConfig, rng_seed: int) -> np.ndarray:
    """Multi-step sign ascent with optional uniform random start.

    Deterministic for a fixed rng_seed. Each iterate is projected into
    [x - eps, x + eps] intersected with [clip_min, clip_max].
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    x2 = x.reshape(1, -1) if x.ndim == 1 else x
    _check_in_range(x2, cfg)
    lo = np.maximum(x2 - cfg.epsilon, cfg.clip_min)
    hi = np.minimum(x2 + cfg.epsilon, cfg.clip_max)
    if cfg.random_start and cfg.epsilon > 0:
        rng = rng_from(rng_seed)
        adv = np.clip(x2 + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x2.shape), lo, hi)
    else:
        adv = x2.copy()
    for _ in range(cfg.iterations):
        grad = input_gradient(params, adv, y)
        if not np.isfinite(grad).all():
            raise NumericError("non-finite input gradient during PGD")
        adv = np.clip(adv + cfg.step_size * np.sign(grad), lo, hi)
    return adv.reshape(shape)


def attack_dataset(params: MlpParams, ds: Dataset, cfg: AttackConfig, seed: int) -> Dataset:
    """PGD-perturb every row, labels untouched.

    Each example uses the seed stream (seed XOR index), so results are
    independent of batching or generation order; examples are attacked one
    at a time to keep that contract bitwise.
    """
    if len(ds) == 0:
        raise DataError("cannot attack an empty dataset")
    out = np.empty_like(ds.features)
    for i in range(len(ds)):
        row = ds.features[i : i + 1]
        out[i] = pgd(params, row, ds.labels[i : i + 1], cfg, rng_seed=seed ^ i)[0]
    return Dataset(out, ds.labels.copy(), ds.num_classes)
