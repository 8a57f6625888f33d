from __future__ import annotations

import threading

import pytest
from hypothesis import given, settings, strategies as st

from crowdlab.model import CountryBucket, EligibilityPolicy, QuotaConfig
from crowdlab.store import Store
from crowdlab.workers import (
    REASON_CROSSOVER_BLOCKED,
    REASON_NEW,
    REASON_REPEAT_BLOCKED,
    REASON_RETURNING_SAME,
    REASON_UNTRUSTED,
    TrustConfig,
    WorkerManager,
    check_quota,
    is_trusted,
    rotate_buckets,
)
from crowdlab.engine import Engine
from conftest import make_units, simple_workflow


@pytest.fixture
def store():
    return Store(":memory:")


@pytest.fixture
def manager(store):
    return WorkerManager(store)


def start_simple_run(store, manager, policy=None, groups=("A", "B"), seed=3, quotas=None):
    wf = simple_workflow(policy=policy, groups=groups)
    if quotas is not None:
        wf = wf.__class__(**{**wf.__dict__, "quotas": quotas})
    from crowdlab.platforms.sim import SimulatedPlatform, PopulationProfile
    from datetime import datetime, timezone

    platform = SimulatedPlatform(PopulationProfile(seed=seed), datetime(2020, 1, 1, tzinfo=timezone.utc))
    engine = Engine(store, {"sim": platform}, manager)
    run_id = engine.start_run(wf, make_units(), adapter_id="sim", seed=seed)
    return run_id


class TestIdentity:
    def test_same_pair_same_id(self, manager):
        a = manager.resolve_identity("w1", "fpA")
        b = manager.resolve_identity("w1", "fpA")
        assert a == b

    def test_fingerprint_dominance(self, manager):
        a = manager.resolve_identity("w1", "fpA")
        b = manager.resolve_identity("w2", "fpA")
        assert a == b

    def test_platform_id_link_logs_merge(self, manager, store):
        a = manager.resolve_identity("w1", "fpA")
        b = manager.resolve_identity("w1", "fpB")
        assert a == b
        events = [doc["event"] for _, doc in store.audit_events("_identity")]
        assert "identity-link" in events

    def test_two_group_merge_prefers_fingerprint_identity(self, manager, store):
        a = manager.resolve_identity("w1", "fpA")
        b = manager.resolve_identity("w2", "fpB")
        assert a != b
        merged = manager.resolve_identity("w1", "fpB")
        assert merged == b  # fingerprint match dominates the platform-id match
        assert manager.resolve_identity("w1", "fpA") == b  # loser's tokens remapped
        events = [doc["event"] for _, doc in store.audit_events("_identity")]
        assert "identity-merge" in events

    def test_empty_tokens_rejected(self, manager):
        from crowdlab.workers import IdentityError

        with pytest.raises(IdentityError):
            manager.resolve_identity("", "fpA")
        with pytest.raises(IdentityError):
            manager.resolve_identity("w1", "")


class TestEligibility:
    def test_new_worker_proceeds_with_assignment(self, store, manager):
        run_id = start_simple_run(store, manager)
        decision = manager.decide_eligibility(run_id, "w1", "fp1", "US", "do-A")
        assert decision.proceed
        assert decision.reason == REASON_NEW
        assert decision.group_id in ("A", "B")

    def test_repeat_blocked_under_block_all_repeats(self, store, manager):
        run_id = start_simple_run(store, manager)
        first = manager.decide_eligibility(run_id, "w1", "fp1", "US", "do-A")
        second = manager.decide_eligibility(run_id, "w1", "fp1", "US", "do-A")
        assert first.proceed
        assert second.action == "block"
        assert second.reason == REASON_REPEAT_BLOCKED
        assert second.message  # the policy's block message is surfaced

    def test_allow_same_condition_and_crossover_block(self, store, manager):
        run_id = start_simple_run(
            store,
            manager,
            policy=EligibilityPolicy(recurrence="allow-same-condition", crossover="block"),
        )
        first = manager.decide_eligibility(run_id, "w1", "fp1", "US", "do-A")
        assigned = first.group_id
        other = "B" if assigned == "A" else "A"
        same = manager.decide_eligibility(run_id, "w1", "fp1", "US", f"do-{assigned}")
        crossed = manager.decide_eligibility(run_id, "w1", "fp1", "US", f"do-{other}")
        assert same.proceed and same.reason == REASON_RETURNING_SAME
        assert same.group_id == assigned
        assert crossed.action == "block" and crossed.reason == REASON_CROSSOVER_BLOCKED

    def test_same_fingerprint_two_accounts_is_one_subject(self, store, manager):
        run_id = start_simple_run(store, manager)
        first = manager.decide_eligibility(run_id, "w1", "fpX", "US", "do-A")
        second = manager.decide_eligibility(run_id, "w2", "fpX", "US", "do-A")
        assert first.proceed
        assert second.reason == REASON_REPEAT_BLOCKED

    def test_untrusted_worker_blocked(self, store, manager):
        run_id = start_simple_run(store, manager)
        cid = manager.resolve_identity("w1", "fp1")
        for i in range(4):
            manager.record_judgment(
                run_id,
                {
                    "uid": f"j{i}",
                    "unit_id": f"g{i}",
                    "worker_id": cid,
                    "block_id": "do-A",
                    "group_id": "A",
                    "answer": "in",
                    "is_gold": True,
                    "gold_correct": i < 2,  # 2 of 4 -> 0.5 < 0.7
                    "session": 0,
                    "submitted_at": "2020-01-01T00:00:00+00:00",
                },
            )
        decision = manager.decide_eligibility(run_id, "w1", "fp1", "US", "do-A")
        assert decision.action == "block"
        assert decision.reason == REASON_UNTRUSTED

    def test_unknown_run_errors(self, manager):
        with pytest.raises(KeyError):
            manager.decide_eligibility("ghost", "w1", "fp1", "US", None)

    def test_concurrent_same_fingerprint_single_proceed(self, store, manager):
        run_id = start_simple_run(store, manager)
        decisions = []
        barrier = threading.Barrier(16)

        def contend(i):
            barrier.wait()
            d = manager.decide_eligibility(run_id, f"acct{i}", "fp-shared", "US", "do-A")
            decisions.append(d)

        threads = [threading.Thread(target=contend, args=(i,)) for i in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        proceeds = [d for d in decisions if d.proceed]
        assert len(proceeds) == 1


class TestAssignment:
    def test_sixty_workers_six_groups_exactly_ten_each(self, store, manager):
        run_id = start_simple_run(store, manager, groups=tuple("ABCDEF"))
        counts: dict[str, int] = {}
        for i in range(60):
            d = manager.decide_eligibility(run_id, f"w{i}", f"fp{i}", "US", None)
            counts[d.group_id] = counts.get(d.group_id, 0) + 1
        assert counts == {g: 10 for g in "ABCDEF"}

    def test_seven_workers_six_groups(self, store, manager):
        run_id = start_simple_run(store, manager, groups=tuple("ABCDEF"))
        counts: dict[str, int] = {}
        for i in range(7):
            d = manager.decide_eligibility(run_id, f"w{i}", f"fp{i}", "US", None)
            counts[d.group_id] = counts.get(d.group_id, 0) + 1
        assert sorted(counts.values(), reverse=True) == [2, 1, 1, 1, 1, 1]

    def test_prefix_balance_invariant(self, store, manager):
        run_id = start_simple_run(store, manager, groups=tuple("ABC"))
        counts = {g: 0 for g in "ABC"}
        for i in range(100):
            d = manager.decide_eligibility(run_id, f"w{i}", f"fp{i}", "US", None)
            counts[d.group_id] += 1
            assert max(counts.values()) - min(counts.values()) <= 1

    def test_fixed_seed_replay_identical(self, manager):
        sequences = []
        for attempt in range(2):
            store = Store(":memory:")
            mgr = WorkerManager(store)
            run_id = start_simple_run(store, mgr, groups=tuple("ABCD"), seed=99)
            seq = [
                mgr.decide_eligibility(run_id, f"w{i}", f"fp{i}", "US", None).group_id
                for i in range(20)
            ]
            sequences.append(seq)
        assert sequences[0] == sequences[1]


class TestTrust:
    def test_warmup_then_threshold(self):
        trust = TrustConfig(warmup_gold=3, threshold=0.7)
        assert is_trusted(0, 0, trust)
        assert is_trusted(1, 2, trust)  # still warming up
        assert not is_trusted(2, 4, trust)  # 0.5 < 0.7
        assert is_trusted(3, 4, trust)  # 0.75 >= 0.7

    def test_gold_counters_updated(self, store, manager):
        run_id = start_simple_run(store, manager)
        cid = manager.resolve_identity("w9", "fp9")
        record = manager.record_judgment(
            run_id,
            {
                "uid": "jg",
                "unit_id": "g0",
                "worker_id": cid,
                "block_id": "do-A",
                "group_id": "A",
                "answer": "in",
                "is_gold": True,
                "gold_correct": True,
                "session": 0,
                "submitted_at": "2020-01-01T00:00:00+00:00",
            },
        )
        assert record["gold_correct"] == 1 and record["gold_total"] == 1
        record = manager.record_judgment(
            run_id,
            {
                "uid": "jn",
                "unit_id": "u0",
                "worker_id": cid,
                "block_id": "do-A",
                "group_id": "A",
                "answer": "in",
                "is_gold": False,
                "gold_correct": None,
                "session": 0,
                "submitted_at": "2020-01-01T00:01:00+00:00",
            },
        )
        assert record["gold_correct"] == 1 and record["gold_total"] == 1  # unchanged
        assert len(record["participations"]) == 1  # same session appended once


PAPER_BUCKETS = QuotaConfig(
    buckets=(
        CountryBucket(head_country="VE", members=("VE",)),
        CountryBucket(head_country="EG", members=("EG",)),
        CountryBucket(head_country="UA", members=("UA",)),
    ),
    max_share_per_bucket=0.25,
)


class TestQuota:
    def test_reference_share_arithmetic(self):
        counts = {"VE": 285, "EG": 118, "UA": 78, "rest": 519}
        qc = check_quota(PAPER_BUCKETS, counts, "VE")
        top3 = qc.bucket_shares["VE"] + qc.bucket_shares["EG"] + qc.bucket_shares["UA"]
        assert abs(top3 - 0.481) < 1e-9
        assert abs(qc.bucket_shares["VE"] - 0.285) < 1e-9
        assert abs(qc.bucket_shares["EG"] - 0.118) < 1e-9

    def test_cap_blocks_dominant_bucket(self):
        counts = {"VE": 285, "EG": 118, "UA": 78, "rest": 519}
        assert not check_quota(PAPER_BUCKETS, counts, "VE").allowed  # 0.285 >= 0.25
        assert check_quota(PAPER_BUCKETS, counts, "EG").allowed

    def test_zero_judgments_all_allowed(self):
        assert check_quota(PAPER_BUCKETS, {}, "VE").allowed

    def test_rest_bucket_unlimited_unless_capped(self):
        counts = {"VE": 1, "rest": 999}
        assert check_quota(PAPER_BUCKETS, counts, "US").allowed
        capped = QuotaConfig(
            buckets=PAPER_BUCKETS.buckets, max_share_per_bucket=0.25, rest_max_share=0.5
        )
        assert not check_quota(capped, counts, "US").allowed


class TestRotation:
    def test_three_by_three_latin_square(self):
        config = PAPER_BUCKETS
        groups = ["g1", "g2", "g3"]
        seen: dict[str, set[str]] = {"VE": set(), "EG": set(), "UA": set()}
        for k in range(3):
            mapping = rotate_buckets(config, groups, k)
            for bucket, gs in mapping.items():
                for g in gs:
                    assert g not in seen[bucket], "bucket re-offered the same set too early"
                    seen[bucket].add(g)
        assert all(s == {"g1", "g2", "g3"} for s in seen.values())

    def test_single_bucket_mapping_unchanged(self):
        config = QuotaConfig(buckets=(CountryBucket(head_country="VE", members=("VE",)),))
        first = rotate_buckets(config, ["a", "b"], 0)
        for k in range(1, 5):
            assert rotate_buckets(config, ["a", "b"], k) == first

    def test_three_buckets_two_sets_six_checkpoints_each_pairing_twice(self):
        config = PAPER_BUCKETS
        groups = ["g1", "g2"]  # two singleton group-sets
        pairings: dict[tuple[str, str], int] = {}
        for k in range(6):
            mapping = rotate_buckets(config, groups, k)
            for bucket, gs in mapping.items():
                for g in gs:
                    pairings[(bucket, g)] = pairings.get((bucket, g), 0) + 1
        assert len(pairings) == 6
        assert all(count == 2 for count in pairings.values())


@given(st.lists(st.sampled_from(["VE", "EG", "UA", "US", "IN", "BR"]), min_size=0, max_size=60))
@settings(max_examples=50, deadline=None)
def test_quota_shares_sum_to_one(countries):
    counts: dict[str, int] = {}
    from crowdlab.workers import bucket_for_country

    for c in countries:
        b = bucket_for_country(PAPER_BUCKETS, c)
        counts[b] = counts.get(b, 0) + 1
    qc = check_quota(PAPER_BUCKETS, counts, "US")
    if countries:
        assert abs(sum(qc.bucket_shares.values()) - 1.0) < 1e-9
