"""Crash-and-rerun workflow execution.

Every completed block's output is durably memoized in the write-once block
cache, so a crashed or paused run re-executes from the definition and skips
cached blocks. External side effects are made safe by a write-ahead
publishing intent: the engine persists a deterministic idempotency token
before calling the adapter, so a crash on either side of the publish call
resolves to the same single platform task on resume.

Judgment ingestion is idempotent per judgment uid and transactional with the
worker-record updates it implies, which is what makes replayed fetches after
a crash harmless.
"""

from __future__ import annotations

import secrets
import threading
from contextlib import contextmanager
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Iterator

from .model import (
    WorkflowDef,
    DataUnit,
    topological_order,
    unit_to_dict,
    validate_workflow,
    workflow_from_dict,
    workflow_to_dict,
)
from .platforms.base import Adapter, TaskHandle
from .platforms.translate import translate_template
from .scheduling import Clock, Command, SystemClock, active_window_index
from .store import Store, Tx
from .transforms import eval_transform
from .workers import WorkerManager, bucket_for_country

MAX_PUBLISH_ATTEMPTS = 3
BACKOFF_BASE_SECONDS = 5.0
SESSION_GAP_MINUTES = 30  # session inference for logs without session markers


class StepOutcome(str, Enum):
    ADVANCED = "advanced"
    WAITING_ON_PLATFORM = "waiting-on-platform"
    RUN_COMPLETE = "run-complete"
    BLOCKED_BY_SCHEDULE = "blocked-by-schedule"


class RunRejected(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("workflow failed validation: " + "; ".join(violations))
        self.violations = violations


class Engine:
    def __init__(
        self,
        store: Store,
        adapters: dict[str, Adapter],
        workers: WorkerManager,
        clock: Clock | None = None,
        max_attempts: int = MAX_PUBLISH_ATTEMPTS,
    ):
        self.store = store
        self.adapters = adapters
        self.workers = workers
        self.clock = clock or SystemClock()
        self.max_attempts = max_attempts
        self._wf_cache: dict[tuple[str, int], WorkflowDef] = {}
        self._do_inputs_cache: dict[tuple[str, str], tuple[list[Any], dict[str, Any], int]] = {}
        # per-run mutual exclusion: every state mutation for one run goes
        # through one writer, so a pause landing mid-step cannot be lost to
        # a stale in-memory run doc
        self._locks_guard = threading.Lock()
        self._run_locks: dict[str, threading.RLock] = {}

    @contextmanager
    def _run_lock(self, run_id: str) -> Iterator[None]:
        with self._locks_guard:
            lock = self._run_locks.setdefault(run_id, threading.RLock())
        with lock:
            yield

    # -- run lifecycle -------------------------------------------------------

    def start_run(
        self,
        wf: WorkflowDef,
        units: list[DataUnit],
        adapter_id: str | None = None,
        toggles: dict[str, bool] | None = None,
        seed: int = 0,
        run_id: str | None = None,
    ) -> str:
        """Validate, persist, and start a run with all blocks pending.

        No platform calls happen here, but templates are translated against
        their adapters so unsupported elements fail at deploy time.
        """
        unit_schema = set()
        for u in units:
            unit_schema |= set(u.payload)
        result = validate_workflow(wf, unit_schema or None)
        if not result.ok:
            raise RunRejected(list(result.violations))

        toggles = {"eligibility": True, "quotas": True, "schedule": True, **(toggles or {})}
        for block in wf.do_blocks():
            aid = adapter_id or block.do.platform
            adapter = self.adapters.get(aid)
            supported = getattr(adapter, "supported_elements", None)
            translate_template(block.do.template, aid, supported_elements=supported)

        run_id = run_id or f"run-{secrets.token_hex(6)}"
        now = self.clock.now().isoformat()
        unit_docs = [unit_to_dict(u) for u in units]
        non_gold = sum(1 for u in units if u.gold is None)
        group_targets: dict[str, int] = {}
        block_groups: dict[str, str] = {}
        for block in wf.do_blocks():
            block_groups[block.id] = block.do.group
            if not wf.parents(block.id):
                group_targets[block.do.group] = (
                    group_targets.get(block.do.group, 0) + non_gold * block.do.votes_per_unit
                )

        wf_doc = workflow_to_dict(wf)
        run_doc = {
            "run_id": run_id,
            "workflow_id": wf.id,
            "workflow_version": wf.version,
            "status": "running",
            "started_at": now,
            "finished_at": None,
            "adapter": adapter_id,
            "seed": seed,
            "toggles": toggles,
            "policy": wf_doc["policy"],
            "groups": wf_doc["groups"],
            "block_groups": block_groups,
            "group_targets": group_targets,
            "quota": wf_doc.get("quotas"),
            "schedule": wf_doc.get("schedule"),
            "hook_token": secrets.token_urlsafe(24),
            "pause": None,  # {"source": "user"|"schedule"} when paused
            "block_states": {
                b.id: {
                    "status": "pending",
                    "attempt_count": 0,
                    "handle": None,
                    "intent_token": None,
                    "next_attempt_at": None,
                    "error": None,
                }
                for b in wf.blocks
            },
        }
        with self.store.transact() as tx:
            if tx.get_workflow(wf.id, wf.version) is None:
                tx.put_workflow(wf.id, wf.version, wf_doc)
            tx.put_run(run_id, run_doc)
            tx.kv_put("units", run_id, unit_docs)
            tx.append_audit(run_id, {"event": "run-started", "at": now, "seed": seed})
        return run_id

    def _resume_run_impl(self, run_id: str) -> dict[str, Any]:
        """Re-attach to a persisted run: cached blocks stay done, in-flight
        Do blocks keep their platform handles, nothing is re-published."""
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        wf_doc = self.store.get_workflow(run["workflow_id"], run["workflow_version"])
        if wf_doc is None:
            raise LookupError("definition unavailable")
        if run["status"] == "completed":
            return run
        cached = self.store.cache_keys(run_id)
        for bid, st in run["block_states"].items():
            if bid in cached:
                st["status"] = "done"
            elif st.get("handle"):
                st["status"] = "collecting"
            elif st.get("status") in ("publishing", "transforming"):
                # interrupted mid-step; intent (if any) is preserved
                st["status"] = "pending"
        run["status"] = "running"
        run["pause"] = None
        now = self.clock.now().isoformat()
        with self.store.transact() as tx:
            tx.put_run(run_id, run)
            tx.append_audit(run_id, {"event": "run-resumed", "at": now})
        return run

    def _pause_run_impl(self, run_id: str, source: str = "user") -> None:
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        if run["status"] != "running":
            return  # pausing a paused or finished run is a no-op
        run["status"] = "paused"
        run["pause"] = {"source": source}
        self._pause_platform_tasks(run, paused=True)
        with self.store.transact() as tx:
            tx.put_run(run_id, run)
            tx.append_audit(
                run_id, {"event": "run-paused", "source": source, "at": self.clock.now().isoformat()}
            )

    def _unpause_run_impl(self, run_id: str, source: str = "user") -> None:
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        if run["status"] != "paused":
            return
        run["status"] = "running"
        run["pause"] = None
        self._pause_platform_tasks(run, paused=False)
        with self.store.transact() as tx:
            tx.put_run(run_id, run)
            tx.append_audit(
                run_id, {"event": "run-resumed", "source": source, "at": self.clock.now().isoformat()}
            )

    def _cancel_run_impl(self, run_id: str) -> None:
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        if run["status"] in ("completed", "failed", "cancelled"):
            return
        adapter = self._adapter_for(run)
        for st in run["block_states"].values():
            if st.get("handle"):
                adapter.cancel(TaskHandle.from_doc(st["handle"]))
        run["status"] = "cancelled"
        run["finished_at"] = self.clock.now().isoformat()
        with self.store.transact() as tx:
            tx.put_run(run_id, run)
            tx.append_audit(run_id, {"event": "run-cancelled", "at": run["finished_at"]})

    def _pause_platform_tasks(self, run: dict[str, Any], paused: bool) -> None:
        adapter = self._adapter_for(run)
        for st in run["block_states"].values():
            if st.get("handle"):
                handle = TaskHandle.from_doc(st["handle"])
                if paused:
                    adapter.pause(handle)
                else:
                    adapter.resume(handle)

    def apply_commands(self, run_id: str, commands: list[Command]) -> None:
        for cmd in commands:
            if cmd.kind == "pause-run":
                self.pause_run(run_id, source="schedule")
            elif cmd.kind == "resume-run":
                run = self.store.get_run(run_id)
                if run and run["status"] == "paused" and (run.get("pause") or {}).get("source") == "schedule":
                    self.unpause_run(run_id, source="schedule")
            elif cmd.kind == "checkpoint":
                self._checkpoint(run_id, cmd.at)

    def _checkpoint_impl(self, run_id: str, at: datetime) -> None:
        run = self.store.get_run(run_id)
        if run is None:
            return
        pending = self.store.kv_get(f"quota-edits:{run_id}", "pending")
        if pending:
            run["quota"] = pending
            with self.store.transact() as tx:
                tx.put_run(run_id, run)
                tx.kv_delete(f"quota-edits:{run_id}", "pending")
                tx.append_audit(
                    run_id,
                    {"event": "quota-edit-applied", "quota": pending, "at": at.isoformat()},
                )
        quota = run.get("quota")
        if quota and quota.get("enforcement") == "soft-rotate":
            from .workers import _quota_from_doc

            config = _quota_from_doc(quota)
            groups = [g["id"] for g in run["groups"]]
            self.workers.apply_rotation(run_id, config, groups, now=at.isoformat())
        self.store.append_audit(run_id, {"event": "checkpoint", "at": at.isoformat()})

    # -- execution ----------------------------------------------------------

    def _execute_next_impl(self, run_id: str) -> StepOutcome:
        """Advance the run by at most one actionable step.

        Publishes the first unpublished ready Do block or executes the first
        ready Lambda; otherwise polls every collecting block for judgments
        and completion. Cache entries are written exactly once per block.
        """
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        if run["status"] == "completed":
            return StepOutcome.RUN_COMPLETE
        if run["status"] == "paused":
            return StepOutcome.BLOCKED_BY_SCHEDULE
        if run["status"] in ("failed", "cancelled"):
            return StepOutcome.RUN_COMPLETE

        wf = self._workflow(run)
        order = topological_order(wf)
        cached = self.store.cache_keys(run_id)
        if set(order) <= cached:
            return self._finalize(run, "completed")

        states = run["block_states"]
        ready = [
            bid
            for bid in order
            if bid not in cached and all(p in cached for p in wf.parents(bid))
        ]
        live = [bid for bid in ready if states[bid]["status"] != "failed"]
        if not live:
            return self._finalize(run, "failed")

        now = self.clock.now()
        for bid in live:
            block = wf.block(bid)
            st = states[bid]
            if block.kind == "Lambda":
                self._run_lambda(run, wf, bid)
                return StepOutcome.ADVANCED
            if st.get("handle") is None:
                nxt = st.get("next_attempt_at")
                if nxt and now.isoformat() < nxt:
                    continue
                if self._publish(run, wf, bid):
                    return StepOutcome.ADVANCED
                continue  # publish failed; try siblings

        progressed = False
        for bid in live:
            if states[bid].get("handle") is not None:
                if self._poll(run, wf, bid):
                    progressed = True
        if progressed:
            return StepOutcome.ADVANCED
        cached = self.store.cache_keys(run_id)
        if set(order) <= cached:
            return self._finalize(run, "completed")
        return StepOutcome.WAITING_ON_PLATFORM

    def _drain_impl(self, run_id: str) -> int:
        """Ingest any outstanding platform judgments without advancing state.

        Used when a run is stopped at a horizon while tasks are still
        collecting; returns the number of newly ingested judgments.
        """
        run = self.store.get_run(run_id)
        if run is None:
            raise KeyError(f"unknown run: {run_id}")
        wf = self._workflow(run)
        total = 0
        for bid, st in run["block_states"].items():
            if st.get("handle") is not None and bid not in self.store.cache_keys(run_id):
                total += self._ingest(run, wf, bid)
        return total


    # -- public entry points, serialized per run ------------------------------

    def resume_run(self, run_id: str) -> dict[str, Any]:
        with self._run_lock(run_id):
            return self._resume_run_impl(run_id)

    def pause_run(self, run_id: str, source: str = "user") -> None:
        with self._run_lock(run_id):
            self._pause_run_impl(run_id, source)

    def unpause_run(self, run_id: str, source: str = "user") -> None:
        with self._run_lock(run_id):
            self._unpause_run_impl(run_id, source)

    def cancel_run(self, run_id: str) -> None:
        with self._run_lock(run_id):
            self._cancel_run_impl(run_id)

    def execute_next(self, run_id: str) -> StepOutcome:
        with self._run_lock(run_id):
            return self._execute_next_impl(run_id)

    def drain(self, run_id: str) -> int:
        with self._run_lock(run_id):
            return self._drain_impl(run_id)

    def _checkpoint(self, run_id: str, at: datetime) -> None:
        with self._run_lock(run_id):
            self._checkpoint_impl(run_id, at)

    # -- internals ----------------------------------------------------------

    def _workflow(self, run: dict[str, Any]) -> WorkflowDef:
        key = (run["workflow_id"], run["workflow_version"])
        if key not in self._wf_cache:
            doc = self.store.get_workflow(*key)
            if doc is None:
                raise LookupError("definition unavailable")
            self._wf_cache[key] = workflow_from_dict(doc)
        return self._wf_cache[key]

    def _adapter_for(self, run: dict[str, Any]) -> Adapter:
        aid = run.get("adapter")
        if aid is None:
            raise ValueError("run has no adapter bound")
        return self.adapters[aid]

    def _gather_inputs(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> list[Any]:
        """Parent outputs concatenated in edge-declaration order.

        A partitioning parent (output is a list of lists) with several
        children feeds child i its i-th partition, in the order the parent's
        outgoing edges were declared; with a single child the partitions are
        flattened back into one list.
        """
        parents = wf.parents(bid)
        if not parents:
            return list(self.store.kv_get("units", run["run_id"]) or [])
        gathered: list[Any] = []
        for parent in parents:
            entry = self.store.get_cache(run["run_id"], parent)
            output = entry["output"] if entry else []
            if _is_partitioned(output):
                siblings = wf.children(parent)
                if len(siblings) > 1:
                    index = siblings.index(bid)
                    part = output[index] if index < len(output) else []
                    gathered.extend(part)
                else:
                    for part in output:
                        gathered.extend(part)
            else:
                gathered.extend(output)
        return gathered

    def _do_inputs(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> tuple[list[Any], dict[str, Any], int]:
        """Cached (units, unit-map, non-gold count) for a ready Do block.

        Safe to memoize: a block only becomes ready once its parents are
        cached, and cache entries are write-once.
        """
        key = (run["run_id"], bid)
        hit = self._do_inputs_cache.get(key)
        if hit is None:
            units = self._gather_inputs(run, wf, bid)
            unit_map = {u["id"]: u for u in units}
            non_gold = sum(1 for u in units if u.get("gold") is None)
            hit = (units, unit_map, non_gold)
            self._do_inputs_cache[key] = hit
        return hit

    def _run_lambda(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> None:
        block = wf.block(bid)
        st = run["block_states"][bid]
        st["status"] = "transforming"
        inputs = self._gather_inputs(run, wf, bid)
        output = eval_transform(block.transform, inputs)
        st["status"] = "done"
        now = self.clock.now().isoformat()
        with self.store.transact() as tx:
            outcome = tx.put_once(run["run_id"], bid, output, now)
            tx.put_run(run["run_id"], run)
        if not outcome.ok:
            # already cached by an earlier attempt; the cache wins
            pass

    def _publish(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> bool:
        block = wf.block(bid)
        st = run["block_states"][bid]
        run_id = run["run_id"]
        adapter = self._adapter_for(run)

        if st.get("intent_token") is None:
            st["intent_token"] = f"{run_id}:{bid}"
            st["status"] = "publishing"
            with self.store.transact() as tx:  # write-ahead: intent before side effect
                tx.put_run(run_id, run)

        units, _, _ = self._do_inputs(run, wf, bid)
        payload = translate_template(
            block.do.template,
            adapter.adapter_id,
            supported_elements=adapter.supported_elements,
            eligibility_hook={
                "url": f"/runs/{run_id}/eligibility",
                "token": run["hook_token"],
                "block_id": bid,
            },
        )
        payload["block_id"] = bid
        payload["group_id"] = block.do.group
        payload["votes_per_unit"] = block.do.votes_per_unit
        payload["reward_minor_units"] = block.do.reward_minor_units

        try:
            handle = adapter.publish(payload, units, st["intent_token"])
        except Exception as exc:  # noqa: BLE001 - adapter faults are data here
            st["attempt_count"] += 1
            backoff = BACKOFF_BASE_SECONDS * (2 ** (st["attempt_count"] - 1))
            st["next_attempt_at"] = (
                self.clock.now() + timedelta(seconds=backoff)
            ).isoformat()
            st["error"] = str(exc)
            if st["attempt_count"] >= self.max_attempts:
                st["status"] = "failed"
            with self.store.transact() as tx:
                tx.put_run(run_id, run)
                tx.append_audit(
                    run_id,
                    {"event": "publish-failed", "block_id": bid, "error": str(exc)},
                )
            return False

        st["handle"] = handle.to_doc()
        st["status"] = "collecting"
        st["cursor"] = 0
        st["error"] = None
        with self.store.transact() as tx:
            tx.put_run(run_id, run)
            tx.append_audit(run_id, {"event": "task-published", "block_id": bid})
        return True

    def _poll(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> bool:
        """Ingest new judgments and cache the block output when complete."""
        ingested = self._ingest(run, wf, bid)
        block = wf.block(bid)
        run_id = run["run_id"]
        if self._block_complete(run, wf, bid):
            rows = [
                doc
                for _, doc in self.store.judgments(run_id)
                if doc.get("block_id") == bid
            ]
            rows.sort(key=lambda d: d["uid"])
            st = run["block_states"][bid]
            st["status"] = "done"
            now = self.clock.now().isoformat()
            with self.store.transact() as tx:
                tx.put_once(run_id, bid, rows, now)
                tx.put_run(run_id, run)
                tx.append_audit(
                    run_id,
                    {"event": "block-complete", "block_id": bid, "judgments": len(rows)},
                )
            return True
        return ingested > 0

    def _block_complete(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> bool:
        """Every non-gold unit has >= votes-per-unit judgments from trusted workers."""
        run_id = run["run_id"]
        _, _, non_gold = self._do_inputs(run, wf, bid)
        if non_gold == 0:
            return True
        satisfied = self.store.kv_get(f"counters:{run_id}", f"satisfied:{bid}") or 0
        return int(satisfied) >= non_gold

    def _ingest(self, run: dict[str, Any], wf: WorkflowDef, bid: str) -> int:
        st = run["block_states"][bid]
        run_id = run["run_id"]
        adapter = self._adapter_for(run)
        handle = TaskHandle.from_doc(st["handle"])
        cursor = int(self.store.kv_get(f"cursors:{run_id}", bid) or 0)
        raw_batch, new_cursor = adapter.fetch_judgments(handle, cursor)
        if not raw_batch:
            return 0
        block = wf.block(bid)
        _, unit_map, _ = self._do_inputs(run, wf, bid)
        group_id = block.do.group
        eligibility_on = run["toggles"].get("eligibility", True)
        schedule_doc = run.get("schedule") if run["toggles"].get("schedule", True) else None
        schedule = _schedule_from_doc(schedule_doc)
        from .workers import _quota_from_doc

        quota = _quota_from_doc(run.get("quota"))
        docs: list[dict[str, Any]] = []
        count = 0
        # the cursor commits atomically with the batch; a crash before the
        # commit replays the fetch, and replays are idempotent per uid
        with self.store.transact() as tx:
            for raw in raw_batch:
                doc, violation = self._map_raw(
                    tx, run, raw, bid, group_id, unit_map, eligibility_on, schedule, adapter, quota
                )
                if violation is not None:
                    tx.append_audit(
                        run_id,
                        {
                            "event": "protocol-violation",
                            "block_id": bid,
                            "reason": violation,
                            "uid": raw.get("uid"),
                        },
                    )
                    continue
                docs.append(doc)
            count = self.workers.record_batch_in_tx(
                tx, run_id, docs, votes_needed=block.do.votes_per_unit
            )
            tx.kv_put(f"cursors:{run_id}", bid, new_cursor)
        return count

    def _map_raw(
        self,
        tx: Tx,
        run: dict[str, Any],
        raw: dict[str, Any],
        bid: str,
        group_id: str,
        unit_map: dict[str, dict[str, Any]],
        eligibility_on: bool,
        schedule: Any,
        adapter: Adapter,
        quota: Any = None,
    ) -> tuple[dict[str, Any], str | None]:
        run_id = run["run_id"]
        platform_worker = str(raw.get("worker_id", ""))
        fingerprint = str(raw.get("fingerprint") or platform_worker)
        canonical = self.workers._resolve_in_tx(tx, platform_worker, fingerprint)
        country = raw.get("country") or adapter.worker_country(platform_worker)
        unit = unit_map.get(str(raw.get("unit_id")))
        if unit is None:
            return {}, f"unknown unit {raw.get('unit_id')!r}"

        compliant = True
        if eligibility_on:
            assignment = tx.get_assignment(run_id, canonical)
            if assignment is None:
                return {}, f"judgment from unassigned worker {canonical}"
            if assignment["group_id"] != group_id:
                return {}, f"judgment outside assigned group ({canonical})"

        gold = unit.get("gold")
        answer = str(raw.get("answer", ""))
        is_gold = gold is not None
        gold_correct = (answer == str(gold.get("expected-answer"))) if is_gold else None
        submitted_at = str(raw.get("timestamp", ""))
        session = raw.get("session")
        if session is None:
            session = _infer_session(tx, run_id, canonical, bid, submitted_at)
        window = active_window_index(schedule, datetime.fromisoformat(submitted_at)) if (
            schedule is not None and submitted_at
        ) else None
        doc = {
            "uid": str(raw.get("uid") or f"{bid}:{raw.get('unit_id')}:{canonical}:{session}"),
            "unit_id": str(raw["unit_id"]),
            "worker_id": canonical,
            "platform_worker_id": platform_worker,
            "block_id": bid,
            "group_id": group_id,
            "answer": answer,
            "decision_time_s": float(raw.get("decision_time_ms", 0)) / 1000.0,
            "submitted_at": submitted_at,
            "is_gold": is_gold,
            "gold_correct": gold_correct,
            "country": country,
            "bucket": bucket_for_country(quota, country),
            "window": window,
            "session": int(session),
            "compliant": compliant,
        }
        return doc, None

    def _finalize(self, run: dict[str, Any], status: str) -> StepOutcome:
        run["status"] = status
        run["finished_at"] = self.clock.now().isoformat()
        with self.store.transact() as tx:
            tx.put_run(run["run_id"], run)
            tx.append_audit(
                run["run_id"], {"event": f"run-{status}", "at": run["finished_at"]}
            )
        return StepOutcome.RUN_COMPLETE


def _is_partitioned(output: Any) -> bool:
    return (
        isinstance(output, list)
        and bool(output)
        and all(isinstance(part, list) for part in output)
    )


def _infer_session(tx: Tx, run_id: str, canonical: str, bid: str, submitted_at: str) -> int:
    """Best-effort session index for logs without explicit markers: a new
    block or a gap above the threshold starts a new participation."""
    worker = tx.get_worker(canonical)
    if worker is None or not worker.get("participations"):
        return 0
    parts = [p for p in worker["participations"] if p["run_id"] == run_id]
    if not parts:
        return 0
    last = max(parts, key=lambda p: p.get("at") or "")
    if last["block_id"] == bid and last.get("at") and submitted_at:
        try:
            gap = datetime.fromisoformat(submitted_at) - datetime.fromisoformat(last["at"])
            if gap <= timedelta(minutes=SESSION_GAP_MINUTES):
                return int(last["session"])
        except ValueError:
            pass
    return int(last["session"]) + 1


def _schedule_from_doc(doc: dict[str, Any] | None):
    if not doc:
        return None
    from .model import Schedule, ScheduleWindow

    return Schedule(
        windows=tuple(
            ScheduleWindow(
                days=tuple(w.get("days", [])),
                start_hour=int(w["startHour"]),
                end_hour=int(w["endHour"]),
            )
            for w in doc.get("windows", [])
        ),
        checkpoint_every_judgments=int(doc.get("checkpointEveryJudgments", 0)),
        checkpoint_every_seconds=int(doc.get("checkpointEverySeconds", 0)),
        spread_over_days=int(doc.get("spreadOverDays", 0)),
        balance_across_groups=bool(doc.get("balanceAcrossGroups", False)),
    )
