"""Malicious update crafting: Byzantine model replacement (exact and estimated),
explicit-boost targeted poisoning, and stealthy boosting with a three-term loss.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .common import check_vector, derive_rng
from .data import Dataset, merge, poison_labels
from .model import ModelSpec, TrainSpec, loss_and_grad, predict, sgd_train

log = logging.getLogger(__name__)

KIND_BYZANTINE = "byzantine"
KIND_EXPLICIT_BOOST = "explicit_boost"
KIND_STEALTHY_BOOST = "stealthy_boost"
ATTACK_KINDS = (KIND_BYZANTINE, KIND_EXPLICIT_BOOST, KIND_STEALTHY_BOOST)

BYZ_TARGET_ZERO = "zero"


@dataclass(frozen=True)
class AttackSpec:
    """Which attack variant runs and with what parameters.

    coalition_fraction q in [0, 1): 0 means a single attacker (client 0),
    otherwise the first ceil(q*m) client ids collude.
    """

    kind: str
    source: int | None = None
    target: int | None = None
    boost: float = 1.0            # lambda, the explicit boosting factor
    phi: float = 0.0              # weight of the stay-close-to-benign term
    coalition_fraction: float = 0.0
    aux_replication: int = 1      # attacker-side oversampling of poisoned examples
    attacker_epochs: int | None = None  # attacker's own local epoch count (None: same as honest)
    byz_target: str = BYZ_TARGET_ZERO

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.coalition_fraction < 1.0:
            raise ValueError("coalition_fraction must be in [0, 1)")
        if self.kind in (KIND_EXPLICIT_BOOST, KIND_STEALTHY_BOOST):
            if self.source is None or self.target is None:
                raise ValueError(f"{self.kind} requires source and target classes")
            if self.source == self.target:
                raise ValueError("source and target classes must differ")
            if self.boost <= 0:
                raise ValueError("boost must be positive")
            if self.phi < 0:
                raise ValueError("phi must be >= 0")
            if self.aux_replication < 1:
                raise ValueError("aux_replication must be >= 1")
            if self.attacker_epochs is not None and self.attacker_epochs < 1:
                raise ValueError("attacker_epochs must be >= 1 when set")
        elif self.byz_target != BYZ_TARGET_ZERO:
            raise ValueError(f"unknown byzantine target recipe {self.byz_target!r}")

    def attacker_ids(self, client_count: int) -> tuple[int, ...]:
        if self.coalition_fraction == 0.0:
            return (0,)
        return tuple(range(math.ceil(self.coalition_fraction * client_count)))


@dataclass
class AttackerState:
    """What one attacker has observed so far; empty until it is first sampled."""

    own_prev_delta: np.ndarray | None = None
    prev_global: np.ndarray | None = None
    benign_avg_estimate: np.ndarray | None = None


def craft_byzantine_exact(
    target: np.ndarray, others_deltas, weights, own_weight: float
) -> np.ndarray:
    """Given every other delta, force the linear aggregate to equal `target`.

    delta_m = target/alpha_m - sum(alpha_u/alpha_m * delta_u).
    """
    if own_weight == 0:
        raise ValueError("own aggregation weight must be nonzero")
    others = [check_vector(d) for d in others_deltas]
    weights = [float(w) for w in weights]
    if len(others) != len(weights):
        raise ValueError("others_deltas and weights must align")
    crafted = check_vector(target) / own_weight
    for delta, alpha in zip(others, weights):
        crafted = crafted - (alpha / own_weight) * delta
    return crafted


def craft_byzantine_estimated(
    target: np.ndarray, state: AttackerState, m_sampled: int
) -> np.ndarray:
    """Model-substitution update from the attacker's own history.

    With uniform weights 1/m: m * (target - theta_prev + own_prev_delta). The
    benign sum is estimated from the previous round, so substitution accuracy
    depends on how converged the model is.
    """
    if state.prev_global is None:
        raise ValueError("attacker state has no observed global model")
    theta_prev = check_vector(state.prev_global)
    target = check_vector(target, theta_prev.shape[0])
    if state.own_prev_delta is None:
        log.warning(
            "no previous own update; byzantine attack degrades to boosting "
            "target - theta_prev by m"
        )
        return m_sampled * (target - theta_prev)
    return m_sampled * (target - theta_prev + check_vector(state.own_prev_delta))


def malicious_training_set(
    shard: Dataset, aux: Dataset, source: int | None, replication: int = 1
) -> Dataset:
    """D_m union D_aux, with the source-class originals dropped from D_m so the
    relabeled auxiliary examples are not contradicted. The attacker owns its
    training set, so it may oversample the poisoned examples (replication)."""
    if len(aux) == 0:
        raise ValueError("auxiliary poisoned set must be non-empty")
    if source is not None:
        shard = shard.subset(np.flatnonzero(shard.labels != source))
    merged = merge(shard, aux)
    for _ in range(replication - 1):
        merged = merge(merged, aux)
    return merged


def craft_explicit_boost(
    global_params: np.ndarray,
    spec: ModelSpec,
    shard: Dataset,
    aux: Dataset,
    boost: float,
    ts: TrainSpec,
    source: int | None = None,
    replication: int = 1,
) -> np.ndarray:
    """Train on the malicious set as an honest client would, then scale by `boost`."""
    train_set = malicious_training_set(shard, aux, source, replication)
    delta = sgd_train(global_params, spec, train_set, ts) - global_params
    return boost * delta


def estimate_benign_avg(
    prev_global: np.ndarray,
    prev_prev_global: np.ndarray,
    own_prev_delta: np.ndarray,
    eta: float,
    alpha_m: float,
) -> np.ndarray:
    """Reconstruct the other clients' aggregated update from two consecutive
    globals by removing the attacker's own scaled contribution."""
    if eta == 0:
        raise ValueError("eta must be nonzero")
    prev_global = check_vector(prev_global)
    prev_prev_global = check_vector(prev_prev_global, prev_global.shape[0])
    own_prev_delta = check_vector(own_prev_delta, prev_global.shape[0])
    return (prev_global - prev_prev_global) / eta - alpha_m * own_prev_delta


def stealthy_loss_and_grad(
    delta: np.ndarray,
    global_params: np.ndarray,
    spec: ModelSpec,
    aux_features: np.ndarray,
    aux_labels: np.ndarray,
    benign_features: np.ndarray | None,
    benign_labels: np.ndarray | None,
    boost: float,
    phi: float,
    benign_avg: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Joint stealth objective on given batches, differentiated w.r.t. delta:

        boost * L(aux) + L(benign) + phi * ||delta - benign_avg||_2

    evaluated at theta = global + delta (only the malicious term is boosted).
    """
    delta = check_vector(delta, spec.param_count)
    theta = global_params + delta
    loss_aux, grad_aux = loss_and_grad(theta, spec, aux_features, aux_labels)
    loss = boost * loss_aux
    grad = boost * grad_aux
    if benign_features is not None and len(benign_features) > 0:
        loss_ben, grad_ben = loss_and_grad(theta, spec, benign_features, benign_labels)
        loss = loss + loss_ben
        grad = grad + grad_ben
    if phi > 0.0:
        gap = delta - benign_avg
        dist = float(np.linalg.norm(gap))
        loss = loss + phi * dist
        if dist > 0.0:
            grad = grad + (phi / dist) * gap
    return float(loss), grad


def craft_stealthy(
    global_params: np.ndarray,
    spec: ModelSpec,
    shard: Dataset,
    aux: Dataset,
    boost: float,
    phi: float,
    benign_avg: np.ndarray | None,
    ts: TrainSpec,
    source: int | None = None,
) -> np.ndarray:
    """SGD on the three-term stealth objective; the resulting delta is NOT rescaled.

    With phi=0, an empty benign shard, and boost=1 this is exactly honest local
    training on the poisoned auxiliary set.
    """
    if len(aux) == 0:
        raise ValueError("auxiliary poisoned set must be non-empty")
    global_params = check_vector(global_params, spec.param_count)
    if benign_avg is None:
        log.warning("no benign-average estimate yet; using the zero vector")
        benign_avg = np.zeros_like(global_params)
    else:
        benign_avg = check_vector(benign_avg, spec.param_count)
    if source is not None:
        shard = shard.subset(np.flatnonzero(shard.labels != source))

    theta = global_params.copy()
    rng = derive_rng(ts.seed)
    n_aux, n_ben = len(aux), len(shard)
    for _ in range(ts.local_epochs):
        aux_order = rng.permutation(n_aux)
        ben_order = rng.permutation(n_ben) if n_ben else None
        n_aux_batches = math.ceil(n_aux / ts.batch_size)
        n_ben_batches = math.ceil(n_ben / ts.batch_size) if n_ben else 0
        for step in range(max(n_aux_batches, n_ben_batches)):
            a = aux_order[
                (step % n_aux_batches) * ts.batch_size : (step % n_aux_batches + 1) * ts.batch_size
            ]
            _, grad_aux = loss_and_grad(theta, spec, aux.features[a], aux.labels[a])
            grad = boost * grad_aux
            if n_ben:
                b = ben_order[
                    (step % n_ben_batches) * ts.batch_size : (step % n_ben_batches + 1) * ts.batch_size
                ]
                _, grad_ben = loss_and_grad(theta, spec, shard.features[b], shard.labels[b])
                grad = grad + grad_ben
            theta -= ts.learning_rate * grad
            if phi > 0.0:
                # proximal step for the nonsmooth distance penalty: shrink the
                # update toward the benign average by lr*phi, never past it
                # (a plain subgradient step of constant magnitude phi would
                # oscillate once within lr*phi of the anchor)
                gap = (theta - global_params) - benign_avg
                dist = float(np.linalg.norm(gap))
                shrink = max(0.0, 1.0 - ts.learning_rate * phi / dist) if dist > 0 else 0.0
                theta = global_params + benign_avg + shrink * gap
    return theta - global_params


def attack_success(
    params: np.ndarray, spec: ModelSpec, test: Dataset, source: int, target: int
) -> float:
    """Fraction of source-class test examples the model classifies as the target."""
    idx = np.flatnonzero(test.labels == source)
    if idx.size == 0:
        raise ValueError(f"test set has no examples of class {source}")
    preds = predict(params, spec, test.features[idx])
    return float(np.mean(preds == target))


def build_aux_map(shards, attacker_ids, source: int, target: int) -> dict[int, Dataset]:
    """Per-attacker poisoned auxiliary sets: each member relabels the source-class
    examples of its own shard. Members whose shard holds no source examples fall
    back to the coalition's pooled relabeled examples (colluders share data)."""
    own = {aid: poison_labels(shards[aid], source, target) for aid in attacker_ids}
    donors = [aux for aux in own.values() if len(aux)]
    if not donors:
        raise ValueError(
            "attacker auxiliary set is empty: no source-class examples in any "
            "attacker-held shard"
        )
    if len(donors) == len(own):
        return own
    pool = Dataset(
        np.concatenate([d.features for d in donors]),
        np.concatenate([d.labels for d in donors]),
        donors[0].class_count,
    )
    return {aid: (aux if len(aux) else pool) for aid, aux in own.items()}
