"""Simulated multi-hop peer forwarding of updates with a reputation incentive.

Breaks the link between a client and the update it submits while leaving each
update visible (and unperturbed) for server-side inspection. The simulator
keeps the true origin on every record so unlinkability can be measured.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .common import ClientUpdate

REPUTATION_PENALTY = 5.0

EVENT_FORWARDED_FOR = "forwarded_for"
EVENT_SUBMITTED_FOR = "submitted_for"
EVENT_FLAGGED = "flagged_malicious"
EVENT_KINDS = (EVENT_FORWARDED_FOR, EVENT_SUBMITTED_FOR, EVENT_FLAGGED)


@dataclass(frozen=True)
class ForwardPolicy:
    """Hand-off behavior: acceptance is affine in the requester's reputation.

    max_hops = 0 degenerates to direct submission (no forwarding).
    """

    accept_base: float = 1.0
    p_submit: float = 0.5
    max_hops: int = 5
    reputation_weight: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.accept_base <= 1.0:
            raise ValueError("accept_base must be in (0, 1]")
        if not 0.0 < self.p_submit <= 1.0:
            raise ValueError("p_submit must be in (0, 1]")
        if self.max_hops < 0:
            raise ValueError("max_hops must be >= 0")
        if self.reputation_weight < 0:
            raise ValueError("reputation_weight must be >= 0")

    def accept_probability(self, requester_reputation: float) -> float:
        return min(1.0, self.accept_base + self.reputation_weight * requester_reputation)


@dataclass
class ReputationTable:
    """Nonnegative per-client scores; unknown clients sit at 0."""

    scores: dict[int, float] = field(default_factory=dict)

    def get(self, client_id: int) -> float:
        return self.scores.get(client_id, 0.0)


@dataclass(frozen=True)
class ReputationEvent:
    kind: str
    client_id: int

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown reputation event kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class SubmissionRecord:
    """What the server receives, plus simulation-only ground truth."""

    update: ClientUpdate          # client_id is the visible submitter token
    true_origin: int
    hops: int
    forwarders: tuple[int, ...] = ()

    @property
    def submitter_id(self) -> int:
        return self.update.client_id


def route_update(
    origin: int,
    delta: np.ndarray,
    peers,
    policy: ForwardPolicy,
    reputation: ReputationTable,
    rng: np.random.Generator,
    round_idx: int = 0,
) -> SubmissionRecord:
    """Route one update through random forwarders until someone submits it.

    The origin always seeks a forwarder first (it never self-submits unless
    max_hops is 0). Each accepted hand-off counts one hop; the holder then
    submits with probability p_submit or forwards again, and must submit once
    max_hops is reached. Declined requests are retried with a fresh peer.
    The payload is passed through bit-identical.
    """
    peer_ids = sorted(int(p) for p in peers)
    if not peer_ids:
        raise ValueError("peers must be non-empty")
    holder = origin
    hops = 0
    trail: list[int] = []
    while hops < policy.max_hops:
        # origin is excluded downstream too: a submission from the origin would
        # de-anonymize it, so it never re-accepts its own update
        candidates = [p for p in peer_ids if p != holder and p != origin]
        if not candidates:
            break
        accept_p = policy.accept_probability(reputation.get(holder))
        while True:
            candidate = candidates[int(rng.integers(len(candidates)))]
            if rng.random() < accept_p:
                break
        trail.append(holder)
        holder = candidate
        hops += 1
        if hops == policy.max_hops:
            break
        if rng.random() < policy.p_submit:
            break
    return SubmissionRecord(
        update=ClientUpdate(client_id=holder, round_idx=round_idx, delta=delta),
        true_origin=origin,
        hops=hops,
        forwarders=tuple(trail[1:]),  # intermediate holders, origin excluded
    )


def update_reputation(rep: ReputationTable, events) -> ReputationTable:
    """Apply a batch of events: +1 per submission-for-other, -5 per flagged submission.

    Scores floor at 0. Returns a new table; the input is not modified.
    """
    scores = dict(rep.scores)
    for event in events:
        if event.kind == EVENT_SUBMITTED_FOR:
            scores[event.client_id] = scores.get(event.client_id, 0.0) + 1.0
        elif event.kind == EVENT_FLAGGED:
            scores[event.client_id] = max(
                0.0, scores.get(event.client_id, 0.0) - REPUTATION_PENALTY
            )
    return ReputationTable(scores)


def linkage_advantage(records, guess_rule=None) -> float:
    """Fraction of records where the adversary's guess names the true origin.

    Default adversary: guess that the visible submitter is the origin.
    """
    records = list(records)
    if not records:
        raise ValueError("records must be non-empty")
    if guess_rule is None:
        guess_rule = lambda record: record.submitter_id
    hits = sum(1 for r in records if guess_rule(r) == r.true_origin)
    return hits / len(records)
