"""Robust aggregation rules and pre-aggregation detection filters.

Rules: FedAvg, Krum, coordinate-wise median, coordinate-wise trimmed mean.
Filters: distance-to-centroid IQR fencing, leave-one-out accuracy, and a
KL-divergence drift diagnostic over successive rounds' distance distributions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .common import ClientUpdate
from .data import Dataset
from .model import ModelSpec, evaluate

RULE_FEDAVG = "fedavg"
RULE_KRUM = "krum"
RULE_MEDIAN = "median"
RULE_TRIMMED_MEAN = "trimmed_mean"
RULES = (RULE_FEDAVG, RULE_KRUM, RULE_MEDIAN, RULE_TRIMMED_MEAN)

FILTER_DISTANCE = "distance_iqr"
FILTER_ACCURACY = "accuracy_loo"
FILTER_KL_DRIFT = "kl_drift"
FILTER_KINDS = (FILTER_DISTANCE, FILTER_ACCURACY, FILTER_KL_DRIFT)

CENTROID_KINDS = ("mean", "median", "origin")


@dataclass(frozen=True)
class FilterSpec:
    """One pre-aggregation detection step; fields beyond its kind are ignored."""

    kind: str
    k: float = 1.5            # IQR fence multiplier (distance_iqr)
    centroid: str = "mean"    # mean | median | origin (distance_iqr)
    threshold: float = 0.05   # accuracy drop that flags a client (accuracy_loo)
    bins: int = 10            # histogram bins (kl_drift)

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.centroid not in CENTROID_KINDS:
            raise ValueError(f"unknown centroid kind {self.centroid!r}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


@dataclass(frozen=True)
class DefenseSpec:
    """Aggregation rule plus an ordered chain of detection filters."""

    rule: str = RULE_FEDAVG
    krum_f: int = 0
    trim_beta: float = 0.0
    filters: tuple[FilterSpec, ...] = ()

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}")
        if self.krum_f < 0:
            raise ValueError("krum_f must be >= 0")
        if not 0.0 <= self.trim_beta < 0.5:
            raise ValueError("trim_beta must be in [0, 0.5)")
        object.__setattr__(self, "filters", tuple(self.filters))

    @property
    def needs_validation(self) -> bool:
        return any(f.kind == FILTER_ACCURACY for f in self.filters)


@dataclass
class DetectionReport:
    """Outcome of one filter on one round's updates."""

    round_idx: int
    filter_kind: str
    distances: dict[int, float] = field(default_factory=dict)
    kept: frozenset[int] = frozenset()
    discarded: frozenset[int] = frozenset()
    kl_value: float | None = None
    note: str | None = None


def _stack(updates) -> np.ndarray:
    if not updates:
        raise ValueError("no updates to aggregate")
    return np.stack([u.delta for u in updates])


def agg_fedavg(updates: list[ClientUpdate]) -> np.ndarray:
    """Unweighted mean of the deltas (uniform alpha over the sampled set)."""
    return _stack(updates).mean(axis=0)


def agg_krum(updates: list[ClientUpdate], f: int) -> tuple[np.ndarray, int, list[float]]:
    """Krum: pick the update minimizing the summed squared distance to its
    m-f-2 nearest peers. Requires 2f+2 < m; score ties go to the lowest id.

    Returns (chosen delta, chosen client id, scores in input order). O(m^2 d).
    """
    m = len(updates)
    if m == 0:
        raise ValueError("no updates to aggregate")
    if not 2 * f + 2 < m:
        raise ValueError(f"krum requires 2f+2 < m, got f={f}, m={m}")
    neighbors = m - f - 2
    stacked = _stack(updates)
    scores: list[float] = []
    for i in range(m):
        sq_dists = np.sum((stacked - stacked[i]) ** 2, axis=1)
        sq_dists = np.delete(sq_dists, i)
        scores.append(float(np.sort(sq_dists)[:neighbors].sum()))
    best = min(range(m), key=lambda i: (scores[i], updates[i].client_id))
    return stacked[best].copy(), updates[best].client_id, scores


def agg_median(updates: list[ClientUpdate]) -> np.ndarray:
    """Coordinate-wise median; even counts average the two central values."""
    return np.median(_stack(updates), axis=0)


def agg_trimmed_mean(updates: list[ClientUpdate], beta: float) -> np.ndarray:
    """Per coordinate: drop the ceil(beta*m) smallest and largest values, average the rest."""
    if not 0.0 <= beta < 0.5:
        raise ValueError("beta must be in [0, 0.5)")
    m = len(updates)
    cut = math.ceil(beta * m)
    if cut == 0:
        return agg_fedavg(updates)
    if 2 * cut >= m:
        raise ValueError(f"trimmed mean requires 2*ceil(beta*m) < m, got beta={beta}, m={m}")
    # C-contiguous last-axis reduction so the per-coordinate mean matches a 1-D
    # reference computation bitwise
    by_coord = np.sort(np.ascontiguousarray(_stack(updates).T), axis=1)
    return by_coord[:, cut : m - cut].mean(axis=1)


def _centroid(stacked: np.ndarray, kind: str) -> np.ndarray:
    if kind == "mean":
        return stacked.mean(axis=0)
    if kind == "median":
        return np.median(stacked, axis=0)
    if kind == "origin":
        return np.zeros(stacked.shape[1])
    raise ValueError(f"unknown centroid kind {kind!r}")


def update_distances(updates: list[ClientUpdate], centroid_kind: str = "mean") -> dict[int, float]:
    """L2 distance of every update to the chosen centroid of the round's updates."""
    stacked = _stack(updates)
    center = _centroid(stacked, centroid_kind)
    dists = np.linalg.norm(stacked - center, axis=1)
    return {u.client_id: float(d) for u, d in zip(updates, dists)}


def filter_distance(
    updates: list[ClientUpdate], k: float, centroid_kind: str = "mean", round_idx: int = 0
) -> DetectionReport:
    """Keep updates within Q3 + k*IQR of the distance-to-centroid distribution.

    Fewer than 4 updates: quartiles are meaningless, filter is skipped.
    Fail-open: if the fence would discard everything, keep all and flag it.
    """
    report = DetectionReport(round_idx=round_idx, filter_kind=FILTER_DISTANCE)
    ids = frozenset(u.client_id for u in updates)
    if len(updates) < 4:
        report.kept = ids
        report.note = "skipped: fewer than 4 updates"
        return report
    report.distances = update_distances(updates, centroid_kind)
    values = np.array([report.distances[u.client_id] for u in updates])
    q1, q3 = np.percentile(values, [25, 75])
    fence = q3 + k * (q3 - q1)
    keep_mask = values <= fence
    if not keep_mask.any():
        report.kept = ids
        report.note = "fail-open: fence would discard every update"
        return report
    report.kept = frozenset(u.client_id for u, keep in zip(updates, keep_mask) if keep)
    report.discarded = ids - report.kept
    return report


def filter_accuracy(
    updates: list[ClientUpdate],
    global_params: np.ndarray,
    spec: ModelSpec,
    eta: float,
    validation: Dataset,
    threshold: float,
    round_idx: int = 0,
) -> DetectionReport:
    """Leave-one-out accuracy check against a server-held validation set.

    For each client u the server scores diff_u = acc(without u) - acc(only u),
    where the "only u" model is theta + (eta/m) * delta_u and the "without u"
    model aggregates all other updates. Colluding clients inside the
    "without u" aggregate shift every diff in the round by a common offset
    (and can capture the median when they are the sampled majority), so the
    discard rule centers the diffs on the round MINIMUM, which stays anchored
    to honest behavior as long as one honest client is sampled: u is discarded
    when diff_u - min(diffs) > threshold. Fail-open if all would go.
    """
    if validation is None or len(validation) == 0:
        raise ValueError("accuracy detection requires a non-empty validation set")
    report = DetectionReport(round_idx=round_idx, filter_kind=FILTER_ACCURACY)
    ids = frozenset(u.client_id for u in updates)
    m = len(updates)
    if m < 2:
        report.kept = ids
        report.note = "skipped: need at least 2 updates to leave one out"
        return report
    stacked = _stack(updates)
    total = stacked.sum(axis=0)
    diffs = np.empty(m)
    for i in range(m):
        only_model = global_params + (eta / m) * stacked[i]
        without_model = global_params + eta * ((total - stacked[i]) / (m - 1))
        diffs[i] = (
            evaluate(without_model, spec, validation)[0]
            - evaluate(only_model, spec, validation)[0]
        )
    centered = diffs - diffs.min()
    report.distances = {u.client_id: float(c) for u, c in zip(updates, centered)}
    flagged = {u.client_id for u, c in zip(updates, centered) if c > threshold}
    if len(flagged) == m:
        report.kept = ids
        report.note = "fail-open: every update flagged"
        return report
    report.kept = ids - frozenset(flagged)
    report.discarded = frozenset(flagged)
    return report


def kl_drift(distances_t, distances_prev, bins: int) -> float:
    """KL(P_t || P_prev) of distance histograms on a shared range, add-one smoothed."""
    cur = np.asarray(list(distances_t), dtype=np.float64)
    prev = np.asarray(list(distances_prev), dtype=np.float64)
    if cur.size == 0 or prev.size == 0:
        raise ValueError("both distance sequences must be non-empty")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo = min(cur.min(), prev.min())
    hi = max(cur.max(), prev.max())
    if hi == lo:
        hi = lo + 1.0  # degenerate range: everything lands in one bin either way
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(cur, bins=edges)[0] + 1.0
    q = np.histogram(prev, bins=edges)[0] + 1.0
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))
