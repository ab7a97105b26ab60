import numpy as np
import pytest

from fedsim.common import derive_rng
from fedsim.forwarding import (
    EVENT_FLAGGED,
    EVENT_FORWARDED_FOR,
    EVENT_SUBMITTED_FOR,
    ForwardPolicy,
    ReputationEvent,
    ReputationTable,
    linkage_advantage,
    route_update,
    update_reputation,
)

PEERS = range(100)


def route_many(policy, n, seed=0, origin_pool=PEERS, rep=None):
    rep = rep or ReputationTable()
    rng = derive_rng(seed)
    payload = np.array([1.0, -1.0])
    origins = list(origin_pool)
    return [
        route_update(origins[i % len(origins)], payload, PEERS, policy, rep,
                     derive_rng(seed, i))
        for i in range(n)
    ]


class TestForwardPolicy:
    def test_validation(self):
        with pytest.raises(ValueError):
            ForwardPolicy(accept_base=0.0)
        with pytest.raises(ValueError):
            ForwardPolicy(max_hops=-1)
        with pytest.raises(ValueError):
            ForwardPolicy(p_submit=0.0)

    def test_acceptance_probability_affine_and_capped(self):
        policy = ForwardPolicy(accept_base=0.3, reputation_weight=0.1)
        assert policy.accept_probability(2.0) == pytest.approx(0.5)
        assert policy.accept_probability(100.0) == 1.0


class TestRouteUpdate:
    def test_zero_hops_origin_submits(self):
        policy = ForwardPolicy(max_hops=0)
        rec = route_update(5, np.ones(3), PEERS, policy, ReputationTable(), derive_rng(1))
        assert rec.hops == 0 and rec.submitter_id == 5 and rec.true_origin == 5

    def test_forced_single_hop(self):
        policy = ForwardPolicy(accept_base=1.0, p_submit=1.0, max_hops=5)
        for i in range(50):
            rec = route_update(7, np.ones(2), PEERS, policy, ReputationTable(),
                               derive_rng(2, i))
            assert rec.hops == 1 and rec.submitter_id != 7

    def test_terminates_within_max_hops(self):
        policy = ForwardPolicy(accept_base=0.5, p_submit=0.25, max_hops=4)
        for i in range(200):
            rec = route_update(3, np.ones(2), PEERS, policy, ReputationTable(),
                               derive_rng(3, i))
            assert 1 <= rec.hops <= 4

    def test_submitter_never_origin_when_hopping(self):
        policy = ForwardPolicy(accept_base=1.0, p_submit=0.25, max_hops=6)
        for rec in route_many(policy, 500, seed=4):
            assert rec.submitter_id != rec.true_origin

    def test_payload_bit_identical(self):
        payload = derive_rng(9).standard_normal(257)
        policy = ForwardPolicy()
        rec = route_update(0, payload, PEERS, policy, ReputationTable(), derive_rng(5))
        assert np.array_equal(rec.update.delta, payload)

    def test_hop_distribution_matches_truncated_geometric(self):
        # P(h) = (1-p)^(h-1) * p for h < max_hops, remainder mass at max_hops
        policy = ForwardPolicy(accept_base=1.0, p_submit=0.5, max_hops=5)
        records = route_many(policy, 100_000, seed=6)
        counts = np.bincount([r.hops for r in records], minlength=6)[1:]
        freq = counts / len(records)
        expected = np.array([0.5, 0.25, 0.125, 0.0625, 0.0625])
        np.testing.assert_allclose(freq, expected, atol=0.01)

    def test_empty_peers_rejected(self):
        with pytest.raises(ValueError):
            route_update(0, np.ones(2), [], ForwardPolicy(), ReputationTable(), derive_rng(0))


class TestReputation:
    def test_no_events_no_change(self):
        rep = ReputationTable({3: 2.0})
        out = update_reputation(rep, [])
        assert out.scores == {3: 2.0}

    def test_submission_for_other_rewards(self):
        out = update_reputation(ReputationTable(), [ReputationEvent(EVENT_SUBMITTED_FOR, 4)])
        assert out.get(4) == 1.0

    def test_flagged_submission_penalized_with_floor(self):
        rep = ReputationTable({2: 3.0})
        out = update_reputation(rep, [ReputationEvent(EVENT_FLAGGED, 2)])
        assert out.get(2) == 0.0

    def test_forwarding_event_is_neutral(self):
        out = update_reputation(ReputationTable(), [ReputationEvent(EVENT_FORWARDED_FOR, 1)])
        assert out.get(1) == 0.0

    def test_never_negative_under_random_event_streams(self):
        rng = derive_rng(21)
        rep = ReputationTable()
        kinds = (EVENT_SUBMITTED_FOR, EVENT_FLAGGED, EVENT_FORWARDED_FOR)
        for _ in range(50):
            events = [
                ReputationEvent(kinds[int(rng.integers(3))], int(rng.integers(5)))
                for _ in range(int(rng.integers(1, 10)))
            ]
            rep = update_reputation(rep, events)
            assert all(score >= 0.0 for score in rep.scores.values())

    def test_input_table_not_mutated(self):
        rep = ReputationTable({1: 1.0})
        update_reputation(rep, [ReputationEvent(EVENT_SUBMITTED_FOR, 1)])
        assert rep.scores == {1: 1.0}

    def test_unknown_event_kind_rejected(self):
        with pytest.raises(ValueError):
            ReputationEvent("bribed", 0)


class TestLinkageAdvantage:
    def test_no_forwarding_means_full_linkage(self):
        policy = ForwardPolicy(max_hops=0)
        records = route_many(policy, 200, seed=7)
        assert linkage_advantage(records) == 1.0

    def test_submitter_guess_fails_after_one_forced_hop(self):
        policy = ForwardPolicy(accept_base=1.0, p_submit=1.0, max_hops=5)
        records = route_many(policy, 2000, seed=8)
        assert linkage_advantage(records) == 0.0

    def test_random_non_submitter_guess_near_uniform(self):
        policy = ForwardPolicy(accept_base=1.0, p_submit=1.0, max_hops=5)
        records = route_many(policy, 50_000, seed=9)
        guess_rng = derive_rng(10)

        def guess(record):
            others = [p for p in PEERS if p != record.submitter_id]
            return others[int(guess_rng.integers(len(others)))]

        adv = linkage_advantage(records, guess)
        assert adv == pytest.approx(1 / 99, abs=0.004)

    def test_advantage_non_increasing_with_expected_hops(self):
        advantages = []
        for max_hops in (0, 1, 5):
            policy = ForwardPolicy(accept_base=1.0, p_submit=0.5, max_hops=max(max_hops, 0))
            records = route_many(policy, 5000, seed=11)
            advantages.append(linkage_advantage(records))
        assert advantages[0] >= advantages[1] >= advantages[2]
        assert advantages[0] == 1.0

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError):
            linkage_advantage([])
