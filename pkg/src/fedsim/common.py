"""Shared primitives: seeded RNG derivation and the per-round client update record."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK32 = 0xFFFFFFFF


def derive_rng(*keys: int) -> np.random.Generator:
    """Return a Generator keyed by a tuple of integers.

    Every random decision in the simulator draws from a stream derived this
    way, so results are a pure function of (seed, round, client, purpose) and
    independent of execution schedule.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) & _MASK32 for k in keys]))


def child_seed(*keys: int) -> int:
    """Derive a 32-bit integer seed from integer keys (for nested TrainSpec seeds)."""
    return int(np.random.SeedSequence([int(k) & _MASK32 for k in keys]).generate_state(1)[0])


def check_vector(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a flat float64 vector and enforce finiteness (no NaN/Inf)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a flat vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains NaN or Inf")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"vector length {arr.shape[0]} != expected {dim}")
    return arr


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """A round-stamped model update from one (possibly anonymized) client."""

    client_id: int
    round_idx: int
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", check_vector(self.delta))
