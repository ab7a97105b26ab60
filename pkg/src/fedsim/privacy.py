"""Client-side epsilon-DP update perturbation (clip + Laplace) and a composition ledger."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .common import check_vector


@dataclass(frozen=True)
class DPSpec:
    """Per-round privacy budget and the L2 clip bounding update sensitivity."""

    epsilon_per_round: float
    clip_norm: float

    def __post_init__(self):
        if self.epsilon_per_round <= 0:
            raise ValueError("epsilon_per_round must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @property
    def laplace_scale(self) -> float:
        # conservative sensitivity bound 2C for a C-clipped update
        return 2.0 * self.clip_norm / self.epsilon_per_round


@dataclass
class PrivacyLedger:
    """One client's (round, epsilon) spend history; composition is plain addition."""

    entries: list[tuple[int, float]] = field(default_factory=list)

    def record(self, round_idx: int, epsilon: float) -> None:
        self.entries.append((round_idx, epsilon))

    @property
    def total(self) -> float:
        return compose(self)


def clip_update(delta: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale delta down to L2 norm clip_norm when it exceeds it; otherwise unchanged."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    delta = check_vector(delta)
    norm = float(np.linalg.norm(delta))
    if norm <= clip_norm:
        return delta
    return delta * (clip_norm / norm)


def dp_perturb(delta: np.ndarray, dp: DPSpec, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Laplace(0, 2C/eps) noise per coordinate to an already-clipped delta."""
    delta = check_vector(delta)
    return delta + rng.laplace(0.0, dp.laplace_scale, size=delta.shape)


def compose(ledger: PrivacyLedger) -> float:
    """Sequential composition: total spend is the sum of per-round epsilons."""
    return math.fsum(eps for _, eps in ledger.entries)
