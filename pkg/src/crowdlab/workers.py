"""Worker identity, eligibility control, condition assignment, and quotas.

Identities arrive as opaque (platform-worker-id, fingerprint) token pairs.
Both tokens are linked to one canonical id through a persisted union-find;
a fingerprint match dominates a platform-id match, so the same person on two
platform accounts collapses to a single subject. Merges are append-only and
logged for audit.

Eligibility is an atomic check-and-assign: policy plus quota evaluated and,
when the outcome is a fresh assignment, recorded in one linearizable step
against the store. Condition assignment uses balanced block randomization:
assignments are drawn from a shuffled permutation of all groups, and the
permutation is refreshed when exhausted, so over any prefix of the stream
the max/min group counts differ by at most one.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Any

from .model import EligibilityPolicy, QuotaConfig
from .store import Store, Tx

IDENTITY_AUDIT_RUN = "_identity"

REASON_NEW = "new-assignment"
REASON_RETURNING_SAME = "returning-same-allowed"
REASON_REPEAT_BLOCKED = "repeat-blocked"
REASON_CROSSOVER_BLOCKED = "crossover-blocked"
REASON_CROSSOVER_ALLOWED = "crossover-allowed"
REASON_QUOTA = "quota-exhausted"
REASON_UNTRUSTED = "untrusted"

REST_BUCKET = "rest"


class IdentityError(ValueError):
    pass


@dataclass(frozen=True)
class TrustConfig:
    warmup_gold: int = 3
    threshold: float = 0.7


@dataclass(frozen=True)
class AssignmentDecision:
    action: str  # "proceed" | "block"
    reason: str
    group_id: str | None = None
    message: str = ""

    @property
    def proceed(self) -> bool:
        return self.action == "proceed"


@dataclass(frozen=True)
class QuotaCheck:
    allowed: bool
    bucket: str
    bucket_shares: dict[str, float] = field(default_factory=dict)


def is_trusted(gold_correct: int, gold_total: int, trust: TrustConfig) -> bool:
    if gold_total < trust.warmup_gold:
        return True
    return gold_correct / gold_total >= trust.threshold


def bucket_for_country(config: QuotaConfig | None, country: str) -> str:
    if config is None:
        return REST_BUCKET
    for b in config.buckets:
        if country in b.members:
            return b.head_country
    return REST_BUCKET


def check_quota(
    config: QuotaConfig | None,
    counts: dict[str, int],
    country: str,
) -> QuotaCheck:
    """Pure quota check against running judgment counts per bucket.

    ``counts`` maps bucket head -> judgment count. Shares are measured over
    judgments, not distinct workers. Zero judgments so far admits everyone.
    A country outside every bucket falls into the implicit "rest" bucket,
    capped only when ``rest_max_share`` is set.
    """
    bucket = bucket_for_country(config, country)
    total = sum(counts.values())
    shares = {b: (c / total if total else 0.0) for b, c in sorted(counts.items())}
    if config is None or total == 0:
        return QuotaCheck(allowed=True, bucket=bucket, bucket_shares=shares)
    share = counts.get(bucket, 0) / total
    if bucket == REST_BUCKET:
        cap = config.rest_max_share
        allowed = True if cap is None else share < cap
    else:
        allowed = share < config.max_share_per_bucket
    return QuotaCheck(allowed=allowed, bucket=bucket, bucket_shares=shares)


def rotate_buckets(
    config: QuotaConfig,
    group_ids: list[str],
    checkpoint_index: int,
) -> dict[str, list[str]]:
    """Round-robin bucket -> group-set mapping for soft-rotate enforcement.

    Groups are split evenly into S = min(#buckets, #groups) sets; at
    checkpoint k, set j is offered to bucket (j + k) mod B. Over a full
    rotation cycle every bucket is offered every set equally often.
    """
    buckets = [b.head_country for b in config.buckets]
    if not buckets or not group_ids:
        return {}
    n_sets = min(len(buckets), len(group_ids))
    sets: list[list[str]] = [[] for _ in range(n_sets)]
    for i, gid in enumerate(sorted(group_ids)):
        sets[i % n_sets].append(gid)
    mapping: dict[str, list[str]] = {b: [] for b in buckets}
    for j, group_set in enumerate(sets):
        owner = buckets[(j + checkpoint_index) % len(buckets)]
        mapping[owner].extend(group_set)
    return {b: sorted(gs) for b, gs in mapping.items()}


def _canonical_from_pair(platform_id: str, fingerprint: str) -> str:
    h = hashlib.sha256(f"{platform_id}\x1f{fingerprint}".encode("utf-8")).hexdigest()
    return f"wk-{h[:16]}"


class WorkerManager:
    """Identity, eligibility and trust bookkeeping over the store."""

    def __init__(self, store: Store, trust: TrustConfig | None = None):
        self.store = store
        self.trust = trust or TrustConfig()

    # -- identity -----------------------------------------------------------

    def resolve_identity(self, platform_id: str, fingerprint: str) -> str:
        if not platform_id or not fingerprint:
            raise IdentityError("identity tokens must be non-empty")
        with self.store.transact() as tx:
            return self._resolve_in_tx(tx, platform_id, fingerprint)

    def _resolve_in_tx(self, tx: Tx, platform_id: str, fingerprint: str) -> str:
        p_key, f_key = f"p:{platform_id}", f"f:{fingerprint}"
        by_p = tx.kv_get("identity", p_key)
        by_f = tx.kv_get("identity", f_key)
        if by_p is None and by_f is None:
            canonical = _canonical_from_pair(platform_id, fingerprint)
            tx.kv_put("identity", p_key, canonical)
            tx.kv_put("identity", f_key, canonical)
            tx.kv_put("identity_members", canonical, [p_key, f_key])
            return canonical
        if by_p == by_f:
            return by_f
        if by_f is not None and by_p is not None:
            # Two existing identities linked by this pair: fingerprint wins.
            return self._merge(tx, winner=by_f, loser=by_p)
        canonical = by_f if by_f is not None else by_p
        new_key = p_key if by_p is None else f_key
        tx.kv_put("identity", new_key, canonical)
        members = tx.kv_get("identity_members", canonical) or []
        tx.kv_put("identity_members", canonical, members + [new_key])
        tx.append_audit(
            IDENTITY_AUDIT_RUN,
            {"event": "identity-link", "canonical_id": canonical, "token": new_key},
        )
        return canonical

    def _merge(self, tx: Tx, winner: str, loser: str) -> str:
        loser_members = tx.kv_get("identity_members", loser) or []
        winner_members = tx.kv_get("identity_members", winner) or []
        for token in loser_members:
            tx.kv_put("identity", token, winner)
        tx.kv_put("identity_members", winner, winner_members + loser_members)
        tx.kv_delete("identity_members", loser)
        merged = self._merge_records(tx, winner, loser)
        tx.append_audit(
            IDENTITY_AUDIT_RUN,
            {
                "event": "identity-merge",
                "winner": winner,
                "loser": loser,
                "tokens_moved": loser_members,
                "record_merged": merged,
            },
        )
        return winner

    def _merge_records(self, tx: Tx, winner: str, loser: str) -> bool:
        loser_rec = tx.get_worker(loser)
        if loser_rec is None:
            return False
        winner_rec = tx.get_worker(winner) or _new_record(winner, loser_rec.get("country", ""))
        winner_rec["gold_correct"] += loser_rec.get("gold_correct", 0)
        winner_rec["gold_total"] += loser_rec.get("gold_total", 0)
        winner_rec["participations"] = sorted(
            winner_rec.get("participations", []) + loser_rec.get("participations", []),
            key=lambda p: (p.get("at") or "", p.get("run_id", ""), p.get("session", 0)),
        )
        winner_rec["trusted"] = is_trusted(
            winner_rec["gold_correct"], winner_rec["gold_total"], self.trust
        )
        tx.put_worker(winner, winner_rec)
        return True

    # -- eligibility ----------------------------------------------------------

    def decide_eligibility(
        self,
        run_id: str,
        platform_id: str,
        fingerprint: str,
        country: str,
        block_id: str | None = None,
        now: str = "",
    ) -> AssignmentDecision:
        """Atomic check-and-assign for one worker contacting one run.

        Applies, in order: trust, recurrence/crossover policy, quota; a fresh
        proceed records the assignment in the same transaction. The decision
        for an already-assigned worker is a pure function of stored state, so
        replays return the same decision and never a second assignment.
        """
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        if run.get("status") not in ("running", "paused"):
            raise ValueError(f"run {run_id} is not accepting workers (status={run.get('status')})")
        policy = _policy_from_doc(run["policy"])
        quota = _quota_from_doc(run.get("quota"))
        toggles = run.get("toggles", {})
        groups: list[str] = [g["id"] for g in run["groups"]]
        block_groups: dict[str, str] = run.get("block_groups", {})
        landing_group = block_groups.get(block_id or "", None)

        with self.store.transact() as tx:
            canonical = self._resolve_in_tx(tx, platform_id, fingerprint)
            record = tx.get_worker(canonical)
            decision = self._decide_in_tx(
                tx,
                run_id=run_id,
                canonical=canonical,
                record=record,
                country=country,
                policy=policy,
                quota=quota if toggles.get("quotas", True) else None,
                groups=groups,
                landing_group=landing_group,
                seed=run.get("seed", 0),
                now=now,
            )
            tx.append_audit(
                run_id,
                {
                    "event": "eligibility-decision",
                    "canonical_id": canonical,
                    "country": country,
                    "block_id": block_id,
                    "action": decision.action,
                    "reason": decision.reason,
                    "group_id": decision.group_id,
                    "at": now,
                },
            )
            if decision.action == "block" and not decision.message:
                decision = AssignmentDecision(
                    action="block",
                    reason=decision.reason,
                    group_id=None,
                    message=policy.message_on_block,
                )
            return decision

    def _decide_in_tx(
        self,
        tx: Tx,
        *,
        run_id: str,
        canonical: str,
        record: dict[str, Any] | None,
        country: str,
        policy: EligibilityPolicy,
        quota: QuotaConfig | None,
        groups: list[str],
        landing_group: str | None,
        seed: int,
        now: str,
    ) -> AssignmentDecision:
        if record is not None and not record.get("trusted", True):
            return AssignmentDecision(action="block", reason=REASON_UNTRUSTED)

        existing = tx.get_assignment(run_id, canonical)
        if existing is not None:
            return self._decide_returning(policy, existing, landing_group)

        if quota is not None:
            counters = self._bucket_counts(tx, run_id)
            qc = check_quota(quota, counters, country)
            if not qc.allowed:
                return AssignmentDecision(action="block", reason=REASON_QUOTA)

        group = self._draw_group(tx, run_id, canonical, groups, seed, country, now)
        return AssignmentDecision(action="proceed", reason=REASON_NEW, group_id=group)

    def _decide_returning(
        self,
        policy: EligibilityPolicy,
        existing: dict[str, Any],
        landing_group: str | None,
    ) -> AssignmentDecision:
        assigned = existing["group_id"]
        if policy.recurrence == "block-all-repeats":
            return AssignmentDecision(action="block", reason=REASON_REPEAT_BLOCKED)
        same = landing_group is None or landing_group == assigned
        if policy.recurrence == "allow-same-condition":
            if same:
                return AssignmentDecision(
                    action="proceed", reason=REASON_RETURNING_SAME, group_id=assigned
                )
            return AssignmentDecision(action="block", reason=REASON_CROSSOVER_BLOCKED)
        # allow-all
        if same:
            return AssignmentDecision(
                action="proceed", reason=REASON_RETURNING_SAME, group_id=assigned
            )
        if policy.crossover == "allow":
            return AssignmentDecision(
                action="proceed", reason=REASON_CROSSOVER_ALLOWED, group_id=landing_group
            )
        return AssignmentDecision(action="block", reason=REASON_CROSSOVER_BLOCKED)

    def _draw_group(
        self,
        tx: Tx,
        run_id: str,
        canonical: str,
        groups: list[str],
        seed: int,
        country: str,
        now: str,
    ) -> str:
        """Balanced block randomization, restricted by any active soft-rotate map."""
        offered = groups
        rotation = tx.kv_get(f"rotation:{run_id}", "mapping")
        if rotation:
            bucket = tx.kv_get(f"rotation:{run_id}", "bucket-of:" + country)
            if bucket is None:
                bucket = rotation.get("_bucket_of", {}).get(country, REST_BUCKET)
            offered_set = rotation.get("offers", {}).get(bucket)
            if offered_set:
                offered = [g for g in groups if g in offered_set] or groups

        n = tx.kv_get(f"assign:{run_id}", "count") or 0
        block_index, position = divmod(n, len(offered)) if offered else (0, 0)
        # seeded by (run seed, permutation index) only, so a fixed seed
        # replays the identical assignment sequence across runs and resumes
        rng = random.Random(f"{seed}:{block_index}:{len(offered)}")
        perm = list(sorted(offered))
        rng.shuffle(perm)
        group = perm[position]
        tx.kv_put(f"assign:{run_id}", "count", n + 1)
        outcome = tx.try_assign(
            run_id,
            canonical,
            {"group_id": group, "reason": REASON_NEW, "at": now, "country": country},
        )
        if outcome == "conflict":  # unreachable under the store lock; belt and braces
            raise RuntimeError("concurrent assignment for one canonical id")
        return group

    def assign_condition(self, run_id: str, canonical_id: str, now: str = "") -> str:
        """Assign an eligible new worker to a group (standalone form)."""
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        groups = [g["id"] for g in run["groups"]]
        with self.store.transact() as tx:
            existing = tx.get_assignment(run_id, canonical_id)
            if existing is not None:
                raise ValueError("worker already assigned; eligibility must gate first")
            return self._draw_group(
                tx, run_id, canonical_id, groups, run.get("seed", 0), "", now
            )

    # -- judgments & trust -------------------------------------------------------

    def record_judgment(self, run_id: str, judgment: dict[str, Any], votes_needed: int = 0) -> dict[str, Any]:
        """Idempotently persist one judgment and update the worker's record.

        Gold counters and trust are recomputed inside the same transaction as
        the append, so a crash-replayed fetch can never double-count. The
        judgment's ``valid`` flag is set here: trusted at submission, first
        participation, and policy-compliant.
        """
        with self.store.transact() as tx:
            self.record_batch_in_tx(tx, run_id, [judgment], votes_needed)
            record = tx.get_worker(judgment["worker_id"])
        if record is None:
            raise RuntimeError("worker record missing after recording")
        return record

    def record_batch_in_tx(
        self,
        tx: Tx,
        run_id: str,
        judgments: list[dict[str, Any]],
        votes_needed: int = 0,
    ) -> int:
        """Record a fetch batch atomically; returns how many were new.

        Judgments replayed after a crash (same uid) are skipped together with
        all their side effects. Worker records and counters are folded across
        the batch so ingesting N judgments costs O(distinct workers + keys),
        not O(N) round trips.
        """
        counters_ns = f"counters:{run_id}"
        records: dict[str, dict[str, Any]] = {}
        counter_deltas: dict[str, int] = {}
        vote_deltas: dict[tuple[str, str], int] = {}
        vote_bases: dict[tuple[str, str], int] = {}
        inserted = 0

        for judgment in judgments:
            uid = judgment["uid"]
            canonical = judgment["worker_id"]
            if not tx.append_judgment(run_id, uid, judgment):
                continue  # replayed fetch; already counted
            inserted += 1
            record = records.get(canonical)
            if record is None:
                record = tx.get_worker(canonical) or _new_record(
                    canonical, judgment.get("country", "")
                )
                records[canonical] = record

            session = int(judgment.get("session", 0))
            block_id = judgment.get("block_id", "")
            group_id = judgment.get("group_id", "")
            at = judgment.get("submitted_at", "")
            participations = record["participations"]
            if not any(
                p["run_id"] == run_id and p["session"] == session and p["block_id"] == block_id
                for p in participations
            ):
                participations.append(
                    {
                        "run_id": run_id,
                        "group_id": group_id,
                        "block_id": block_id,
                        "session": session,
                        "at": at,
                    }
                )
            if judgment.get("is_gold"):
                record["gold_total"] += 1
                if judgment.get("gold_correct"):
                    record["gold_correct"] += 1
            record["trusted"] = is_trusted(
                record["gold_correct"], record["gold_total"], self.trust
            )
            record["last_seen"] = at or record["last_seen"]
            if not record["first_seen"]:
                record["first_seen"] = at

            trusted_now = record["trusted"]
            final = dict(judgment)
            final["trusted_at_submission"] = trusted_now
            final["valid"] = (
                trusted_now and session == 0 and bool(judgment.get("compliant", True))
            )
            tx.update_judgment(run_id, uid, final)

            bucket = judgment.get("bucket") or REST_BUCKET
            for key_name in ("total", f"bucket:{bucket}", f"group:{group_id}"):
                counter_deltas[key_name] = counter_deltas.get(key_name, 0) + 1
            window = judgment.get("window")
            if window is not None:
                wkey = f"window:{group_id}:{window}"
                counter_deltas[wkey] = counter_deltas.get(wkey, 0) + 1
            if trusted_now and not judgment.get("is_gold"):
                vkey = (block_id, judgment["unit_id"])
                if vkey not in vote_bases:
                    vote_bases[vkey] = int(
                        tx.kv_get(f"votes:{run_id}:{block_id}", judgment["unit_id"]) or 0
                    )
                vote_deltas[vkey] = vote_deltas.get(vkey, 0) + 1

        for canonical, record in records.items():
            tx.put_worker(canonical, record)
        satisfied_delta: dict[str, int] = {}
        for (block_id, unit_id), delta in vote_deltas.items():
            base = vote_bases[(block_id, unit_id)]
            tx.kv_put(f"votes:{run_id}:{block_id}", unit_id, base + delta)
            if votes_needed and base < votes_needed <= base + delta:
                satisfied_delta[block_id] = satisfied_delta.get(block_id, 0) + 1
        for block_id, delta in satisfied_delta.items():
            key = f"satisfied:{block_id}"
            counter_deltas[key] = counter_deltas.get(key, 0) + delta
        for key_name, delta in counter_deltas.items():
            tx.kv_put(counters_ns, key_name, (tx.kv_get(counters_ns, key_name) or 0) + delta)
        return inserted

    def _bucket_counts(self, tx: Tx, run_id: str) -> dict[str, int]:
        counts = {}
        for key, value in tx.kv_items(f"counters:{run_id}"):
            if key.startswith("bucket:"):
                counts[key.split(":", 1)[1]] = int(value)
        return counts

    def bucket_shares(self, run_id: str) -> dict[str, float]:
        with self.store.read() as tx:
            counts = self._bucket_counts(tx, run_id)
        total = sum(counts.values())
        return {b: c / total for b, c in sorted(counts.items())} if total else {}

    def apply_rotation(self, run_id: str, quota: QuotaConfig, group_ids: list[str], now: str = "") -> dict[str, list[str]]:
        """Advance the soft-rotate mapping at a scheduler checkpoint."""
        with self.store.transact() as tx:
            k = tx.kv_get(f"rotation:{run_id}", "checkpoint") or 0
            mapping = rotate_buckets(quota, group_ids, k)
            bucket_of = {}
            for b in quota.buckets:
                for m in b.members:
                    bucket_of[m] = b.head_country
            tx.kv_put(
                f"rotation:{run_id}",
                "mapping",
                {"offers": mapping, "_bucket_of": bucket_of, "checkpoint": k},
            )
            tx.kv_put(f"rotation:{run_id}", "checkpoint", k + 1)
            tx.append_audit(
                run_id,
                {"event": "bucket-rotation", "checkpoint": k, "offers": mapping, "at": now},
            )
            return mapping


def _new_record(canonical: str, country: str) -> dict[str, Any]:
    return {
        "canonical_id": canonical,
        "country": country,
        "first_seen": "",
        "last_seen": "",
        "participations": [],
        "gold_correct": 0,
        "gold_total": 0,
        "trusted": True,
    }


def _policy_from_doc(doc: dict[str, Any]) -> EligibilityPolicy:
    return EligibilityPolicy(
        design=doc.get("design", "between-subjects"),
        recurrence=doc.get("recurrence", "block-all-repeats"),
        crossover=doc.get("crossover", "block"),
        message_on_block=doc.get("messageOnBlock", doc.get("message_on_block", "")),
    )


def _quota_from_doc(doc: dict[str, Any] | None) -> QuotaConfig | None:
    if not doc:
        return None
    from .model import CountryBucket

    return QuotaConfig(
        buckets=tuple(
            CountryBucket(head_country=b["headCountry"], members=tuple(b["members"]))
            for b in doc.get("buckets", [])
        ),
        max_share_per_bucket=float(doc.get("maxSharePerBucket", 1.0)),
        enforcement=str(doc.get("enforcement", "hard-block")),
        rest_max_share=(None if doc.get("restMaxShare") is None else float(doc["restMaxShare"])),
    )
