"""The federated training loop: client sampling, local training, attack crafting,
defense filtering/aggregation, and model substitution with rate eta.

Every random decision draws from a stream derived from (seed, round, client,
purpose), and per-round reductions run in ascending crafting order, so any
parallel schedule produces bit-identical results to the sequential one.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attacks import (
    AttackSpec,
    AttackerState,
    KIND_BYZANTINE,
    KIND_EXPLICIT_BOOST,
    KIND_STEALTHY_BOOST,
    build_aux_map,
    craft_byzantine_estimated,
    craft_explicit_boost,
    craft_stealthy,
    estimate_benign_avg,
)
from .common import ClientUpdate, check_vector, child_seed, derive_rng
from .data import Dataset
from .defenses import (
    DefenseSpec,
    FILTER_ACCURACY,
    FILTER_DISTANCE,
    FILTER_KL_DRIFT,
    RULE_FEDAVG,
    RULE_KRUM,
    RULE_MEDIAN,
    RULE_TRIMMED_MEAN,
    agg_fedavg,
    agg_krum,
    agg_median,
    agg_trimmed_mean,
    filter_accuracy,
    filter_distance,
    kl_drift,
    update_distances,
)
from .forwarding import (
    EVENT_FLAGGED,
    EVENT_SUBMITTED_FOR,
    ForwardPolicy,
    ReputationEvent,
    ReputationTable,
    route_update,
    update_reputation,
)
from .model import (
    ModelSpec,
    TrainSpec,
    accuracy_excluding_class,
    evaluate,
    init_params,
    sgd_train,
)
from .privacy import DPSpec, PrivacyLedger, clip_update, dp_perturb

_TAG_SAMPLE = 1
_TAG_TRAIN = 2
_TAG_DP = 3
_TAG_FORWARD = 4


@dataclass(frozen=True)
class FLConfig:
    """Federation shape: who trains, how often, and how updates are applied."""

    client_count: int
    sample_fraction: float = 1.0
    eta: float = 1.0
    rounds: int = 1
    train: TrainSpec = TrainSpec()
    seed: int = 0
    clip_norm: float | None = None  # optional L2 clip on honest updates

    def __post_init__(self):
        if self.client_count < 1:
            raise ValueError("client_count must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must be in (0, 1]")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")

    @property
    def sample_size(self) -> int:
        return max(1, round(self.sample_fraction * self.client_count))


@dataclass
class RoundMetrics:
    """Per-round observables; None marks metrics that do not apply to the run."""

    round_idx: int
    global_accuracy: float
    accuracy_excluding_source: float | None
    attack_success: float | None
    discarded_client_ids: frozenset[int]
    aggregate_norm: float
    kl_value: float | None = None
    epsilon_total: float | None = None
    mean_hops: float | None = None
    linkage_advantage: float | None = None


def sample_clients(client_count: int, fraction: float, round_idx: int, seed: int) -> list[int]:
    """Uniform sample without replacement of max(1, round(fraction*m)) client ids,
    deterministic per (seed, round). Returned sorted ascending."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    size = max(1, round(fraction * client_count))
    rng = derive_rng(seed, round_idx, _TAG_SAMPLE)
    ids = rng.choice(client_count, size=size, replace=False)
    return sorted(int(i) for i in ids)


def client_round(
    global_params: np.ndarray,
    spec: ModelSpec,
    shard: Dataset,
    ts: TrainSpec,
    client_id: int = 0,
    round_idx: int = 0,
    clip_norm: float | None = None,
) -> ClientUpdate:
    """One honest client's contribution: delta = locally trained params - global."""
    delta = sgd_delta(global_params, spec, shard, ts)
    if clip_norm is not None:
        delta = clip_update(delta, clip_norm)
    return ClientUpdate(client_id=client_id, round_idx=round_idx, delta=delta)


def sgd_delta(global_params, spec, shard, ts) -> np.ndarray:
    return sgd_train(global_params, spec, shard, ts) - global_params


def apply_aggregate(global_params: np.ndarray, agg_delta: np.ndarray, eta: float) -> np.ndarray:
    """Model substitution: theta + eta * aggregated delta."""
    global_params = check_vector(global_params)
    agg_delta = check_vector(agg_delta, global_params.shape[0])
    return global_params + eta * agg_delta


def _aggregate(updates: list[ClientUpdate], defense: DefenseSpec) -> np.ndarray:
    if defense.rule == RULE_FEDAVG:
        return agg_fedavg(updates)
    if defense.rule == RULE_KRUM:
        chosen, _, _ = agg_krum(updates, defense.krum_f)
        return chosen
    if defense.rule == RULE_MEDIAN:
        return agg_median(updates)
    if defense.rule == RULE_TRIMMED_MEAN:
        return agg_trimmed_mean(updates, defense.trim_beta)
    raise ValueError(f"unknown aggregation rule {defense.rule!r}")


def _validate_run(cfg, spec, shards, attack, defense, test, validation, dp, forward_policy):
    problems = []
    if len(shards) != cfg.client_count:
        problems.append(f"{len(shards)} shards for {cfg.client_count} clients")
    for i, shard in enumerate(shards):
        if len(shard) == 0:
            problems.append(f"shard {i} is empty")
            break
        if shard.dim != spec.input_dim:
            problems.append(f"shard {i} dim {shard.dim} != model input {spec.input_dim}")
            break
    if test.dim != spec.input_dim:
        problems.append(f"test dim {test.dim} != model input {spec.input_dim}")
    if defense.needs_validation and (validation is None or len(validation) == 0):
        problems.append("accuracy detection requires a validation data set")
    if dp is not None and forward_policy is not None:
        problems.append("DP and update forwarding are mutually exclusive in one run")
    if defense.rule == RULE_KRUM and not 2 * defense.krum_f + 2 < cfg.sample_size:
        problems.append(
            f"krum requires 2f+2 < sampled clients ({cfg.sample_size}), got f={defense.krum_f}"
        )
    if defense.rule == RULE_TRIMMED_MEAN and 2 * math.ceil(defense.trim_beta * cfg.sample_size) >= cfg.sample_size:
        problems.append(
            f"trimmed mean drops everything at beta={defense.trim_beta} with {cfg.sample_size} sampled"
        )
    if attack is not None and attack.kind in (KIND_EXPLICIT_BOOST, KIND_STEALTHY_BOOST):
        if attack.source >= spec.class_count or attack.target >= spec.class_count:
            problems.append("attack source/target class out of range")
        elif not np.any(test.labels == attack.source):
            problems.append(f"test set has no examples of source class {attack.source}")
    if problems:
        raise ValueError("invalid federation run: " + "; ".join(problems))


def run_federation(
    cfg: FLConfig,
    spec: ModelSpec,
    shards: list[Dataset],
    attack: AttackSpec | None,
    defense: DefenseSpec,
    test: Dataset,
    validation: Dataset | None = None,
    *,
    dp: DPSpec | None = None,
    forward_policy: ForwardPolicy | None = None,
    workers: int = 1,
    on_round=None,
) -> list[RoundMetrics]:
    """Run the whole training loop; returns one RoundMetrics per round.

    Fully deterministic for a fixed cfg.seed, including under parallel client
    execution (workers > 1).
    """
    _validate_run(cfg, spec, shards, attack, defense, test, validation, dp, forward_policy)

    params = init_params(spec, cfg.seed)
    attacker_ids: tuple[int, ...] = ()
    aux_map: dict[int, Dataset] = {}
    byz_target = None
    states: dict[int, AttackerState] = {}
    if attack is not None:
        attacker_ids = attack.attacker_ids(cfg.client_count)
        states = {aid: AttackerState() for aid in attacker_ids}
        if attack.kind == KIND_BYZANTINE:
            byz_target = np.zeros(spec.param_count)
        else:
            aux_map = build_aux_map(shards, attacker_ids, attack.source, attack.target)

    ledgers: dict[int, PrivacyLedger] = {}
    reputation = ReputationTable()
    prev_distances: list[float] | None = None
    all_peers = range(cfg.client_count)
    metrics: list[RoundMetrics] = []

    for round_idx in range(cfg.rounds):
        sampled = sample_clients(cfg.client_count, cfg.sample_fraction, round_idx, cfg.seed)
        alpha = 1.0 / len(sampled)
        for aid in attacker_ids:
            states[aid].prev_global = params

        def craft(client_id: int, round_params=params, rnd=round_idx, m_round=len(sampled)) -> np.ndarray:
            ts = dataclasses.replace(
                cfg.train, seed=child_seed(cfg.seed, rnd, client_id, _TAG_TRAIN)
            )
            if attack is not None and client_id in states:
                state = states[client_id]
                if attack.attacker_epochs is not None:
                    ts = dataclasses.replace(ts, local_epochs=attack.attacker_epochs)
                if attack.kind == KIND_BYZANTINE:
                    return craft_byzantine_estimated(byz_target, state, m_round)
                if attack.kind == KIND_EXPLICIT_BOOST:
                    return craft_explicit_boost(
                        round_params, spec, shards[client_id], aux_map[client_id],
                        attack.boost, ts, source=attack.source,
                        replication=attack.aux_replication,
                    )
                return craft_stealthy(
                    round_params, spec, shards[client_id], aux_map[client_id],
                    attack.boost, attack.phi, state.benign_avg_estimate, ts,
                    source=attack.source,
                )
            delta = sgd_delta(round_params, spec, shards[client_id], ts)
            if cfg.clip_norm is not None:
                delta = clip_update(delta, cfg.clip_norm)
            if dp is not None:
                delta = dp_perturb(
                    clip_update(delta, dp.clip_norm),
                    dp,
                    derive_rng(cfg.seed, rnd, client_id, _TAG_DP),
                )
            return delta

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                deltas = dict(zip(sampled, pool.map(craft, sampled)))
        else:
            deltas = {u: craft(u) for u in sampled}
        updates = [ClientUpdate(u, round_idx, deltas[u]) for u in sampled]

        if dp is not None:
            for u in sampled:
                if u not in states:
                    ledgers.setdefault(u, PrivacyLedger()).record(
                        round_idx, dp.epsilon_per_round
                    )

        mean_hops = None
        linkage = None
        records = None
        served = updates
        if forward_policy is not None:
            records = [
                route_update(
                    u.client_id,
                    u.delta,
                    all_peers,
                    forward_policy,
                    reputation,
                    derive_rng(cfg.seed, round_idx, u.client_id, _TAG_FORWARD),
                    round_idx,
                )
                for u in updates
            ]
            # aggregation keeps crafting order; only the visible ids change
            served = [r.update for r in records]
            mean_hops = float(np.mean([r.hops for r in records]))
            correct = sum(1 for r in records if r.submitter_id == r.true_origin)
            linkage = correct / len(records)

        kept = list(served)
        discarded: set[int] = set()
        kl_value = None
        for fspec in defense.filters:
            if fspec.kind == FILTER_DISTANCE:
                report = filter_distance(kept, fspec.k, fspec.centroid, round_idx)
            elif fspec.kind == FILTER_ACCURACY:
                report = filter_accuracy(
                    kept, params, spec, cfg.eta, validation, fspec.threshold, round_idx
                )
            else:  # KL drift: reported diagnostic, never discards
                current = sorted(update_distances(kept, "mean").values())
                if prev_distances is not None:
                    kl_value = kl_drift(current, prev_distances, fspec.bins)
                prev_distances = current
                continue
            kept = [u for u in kept if u.client_id in report.kept]
            discarded |= set(report.discarded)

        agg_delta = _aggregate(kept, defense)
        new_params = apply_aggregate(params, agg_delta, cfg.eta)

        if forward_policy is not None:
            events = [
                ReputationEvent(EVENT_SUBMITTED_FOR, r.submitter_id)
                for r in records
                if r.hops >= 1
            ]
            events += [ReputationEvent(EVENT_FLAGGED, cid) for cid in sorted(discarded)]
            reputation = update_reputation(reputation, events)

        for aid in attacker_ids:
            if aid in deltas:
                states[aid].own_prev_delta = deltas[aid]
                states[aid].benign_avg_estimate = estimate_benign_avg(
                    new_params, params, deltas[aid], cfg.eta, alpha
                )

        params = new_params
        accuracy, confusion = evaluate(params, spec, test)
        excl = None
        success = None
        if attack is not None and attack.kind != KIND_BYZANTINE:
            excl = accuracy_excluding_class(confusion, attack.source)
            source_row = confusion[attack.source]
            success = (
                float(source_row[attack.target] / source_row.sum())
                if source_row.sum()
                else None
            )
        epsilon_total = None
        if dp is not None and ledgers:
            epsilon_total = max(ledger.total for ledger in ledgers.values())

        row = RoundMetrics(
            round_idx=round_idx,
            global_accuracy=accuracy,
            accuracy_excluding_source=excl,
            attack_success=success,
            discarded_client_ids=frozenset(discarded),
            aggregate_norm=float(np.linalg.norm(agg_delta)),
            kl_value=kl_value,
            epsilon_total=epsilon_total,
            mean_hops=mean_hops,
            linkage_advantage=linkage,
        )
        metrics.append(row)
        if on_round is not None:
            on_round(row)
    return metrics
