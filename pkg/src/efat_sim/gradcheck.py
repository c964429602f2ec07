"""Finite-difference gradient oracle and the self-test behind `efat gradcheck`.

Everything here goes through forward() and cross_entropy() only, never
backward(), so it stays an independent check of the analytic path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .rng import rng_from

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a-b| / max(|a|, |b|, 1e-8), elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def finite_diff_param_grads(params: nn.MlpParams, batch, labels, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of the loss w.r.t. every parameter, flattened."""
    sizes = params.layer_sizes
    theta = nn.flatten_params(params)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = h
        lo = nn.cross_entropy(nn.forward(nn.unflatten_params(theta - bump, sizes), batch), labels)
        hi = nn.cross_entropy(nn.forward(nn.unflatten_params(theta + bump, sizes), batch), labels)
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def finite_diff_input_grads(params: nn.MlpParams, batch, labels, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of the loss w.r.t. each input entry."""
    x = np.array(batch, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        hi = nn.cross_entropy(nn.forward(params, x), labels)
        x[idx] = orig - h
        lo = nn.cross_entropy(nn.forward(params, x), labels)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return grad


@dataclass
class GradcheckResult:
    networks: int
    worst_param_error: float
    worst_input_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return max(self.worst_param_error, self.worst_input_error) <= self.tolerance


def run_gradcheck(
    networks: int = 50,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
    max_layer_sizes: tuple[int, ...] = (8, 16, 16, 4),
    max_batch: int = 16,
) -> GradcheckResult:
    """Compare analytic vs central finite-difference gradients on random nets.

    Network shapes are drawn up to `max_layer_sizes` (dimension i capped by
    entry i) with batches up to `max_batch` rows.
    """
    rng = rng_from(seed, 0x6C)  # fixed tag for gradcheck draws
    worst_p = 0.0
    worst_x = 0.0
    for net_idx in range(networks):
        depth = int(rng.integers(2, len(max_layer_sizes) + 1))
        caps = list(max_layer_sizes[:depth])
        sizes = [int(rng.integers(1, cap + 1)) for cap in caps]
        sizes[-1] = max(2, sizes[-1])  # need >=2 classes for a meaningful loss
        n = int(rng.integers(1, max_batch + 1))
        params = nn.init_params(sizes, int(rng.integers(0, 1 << 32)))
        x = rng.uniform(0.0, 1.0, size=(n, sizes[0]))
        y = rng.integers(0, sizes[-1], size=n)

        analytic = nn.value_and_grad(params, x, y)[1]
        flat_analytic = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in analytic.layers]
        )
        numeric = finite_diff_param_grads(params, x, y)
        worst_p = max(worst_p, float(relative_error(flat_analytic, numeric).max()))

        numeric_x = finite_diff_input_grads(params, x, y)
        worst_x = max(worst_x, float(relative_error(analytic.input_grad, numeric_x).max()))
    return GradcheckResult(networks, worst_p, worst_x, tolerance)
