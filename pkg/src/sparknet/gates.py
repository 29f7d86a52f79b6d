"""Gaussian-relaxed Bernoulli gates and their expected-L0 penalty.

During training each gate is ``z = clamp(0.5 + mu + eps, 0, 1)`` with
``eps ~ N(0, sigma^2)``. P(z > 0) has the closed form
``0.5 - 0.5 * erf(-(mu + 0.5) / (sqrt(2) * sigma))``, which is what the
sparsity loss averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

SOFT = "soft"
HARD = "hard"


@dataclass(frozen=True)
class GateConfig:
    sigma: float = 0.5
    training_noise: bool = True
    # False gives the unclipped z = 0.5 + mu of the ablation without gating
    clip: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class GateTensor:
    z: np.ndarray
    pre_clip: np.ndarray
    clipped: bool = True


def gate_noise(shape: tuple[int, ...], config: GateConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, config.sigma, size=shape)


def sample_gates(
    mu: np.ndarray,
    config: GateConfig,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> GateTensor:
    """Draw gates for ``mu`` (any shape).

    ``noise`` overrides sampling (used to freeze eps for gradient checks). With
    ``config.training_noise`` off and no explicit noise, the result is the
    deterministic inference gate ``clamp(0.5 + mu, 0, 1)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if noise is None and config.training_noise:
        if rng is None:
            raise ValueError("training_noise is on but no random generator was supplied")
        noise = gate_noise(mu.shape, config, rng)
    pre_clip = 0.5 + mu if noise is None else 0.5 + mu + noise
    if not config.clip:
        return GateTensor(pre_clip, pre_clip, clipped=False)
    return GateTensor(np.clip(pre_clip, 0.0, 1.0), pre_clip)


def gate_backward(dz: np.ndarray, gates: GateTensor) -> np.ndarray:
    """Pass gradients through at interior points only (0 < pre_clip < 1)."""
    if not gates.clipped:
        return np.asarray(dz)
    open_interior = (gates.pre_clip > 0.0) & (gates.pre_clip < 1.0)
    return np.where(open_interior, dz, 0.0)


def harden(z: np.ndarray) -> np.ndarray:
    return (np.asarray(z) > 0.5).astype(np.float64)


def open_probability(mu: np.ndarray, sigma: float) -> np.ndarray:
    """Elementwise P(0.5 + mu + eps > 0) for eps ~ N(0, sigma^2)."""
    return 0.5 - 0.5 * erf(-(np.asarray(mu, dtype=np.float64) + 0.5) / (math.sqrt(2.0) * sigma))


def sparsity_loss(mu: np.ndarray, config: GateConfig | float = GateConfig()) -> tuple[float, np.ndarray]:
    """Mean open-gate probability over every entry of ``mu`` and its gradient.

    For a single F x T matrix this is the per-sample penalty; for a
    (B, F, T) batch it is the batch mean of the per-sample penalties.
    """
    sigma = config if isinstance(config, (int, float)) else config.sigma
    mu = np.asarray(mu, dtype=np.float64)
    n = mu.size
    loss = float(open_probability(mu, sigma).sum() / n)
    grad = np.exp(-((mu + 0.5) ** 2) / (2.0 * sigma**2)) / (sigma * math.sqrt(2.0 * math.pi) * n)
    return loss, grad
