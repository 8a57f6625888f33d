"""Kill-and-restart harness: drives a run on virtual time, crashing the
orchestrator at chosen persistence boundaries while the simulated platform
(the outside world) survives."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from typing import Any

from crowdlab.engine import Engine, StepOutcome
from crowdlab.platforms.sim import PopulationProfile, SimulatedPlatform
from crowdlab.scheduling import VirtualClock
from crowdlab.store import SimulatedCrash, Store
from crowdlab.workers import WorkerManager

START = datetime(2020, 6, 1, tzinfo=timezone.utc)


def crash_profile(seed: int = 4) -> PopulationProfile:
    return PopulationProfile(
        country_mix={"US": 1.0},
        diurnal_curves={"US": tuple([1.0] * 24)},
        arrival_rate_per_hour=60.0,
        return_probability=0.0,
        base_accuracy=1.0,
        decision_time_sigma=0.2,
        judgment_budget_mean=12.0,
        seed=seed,
    )


class CrashingRun:
    """Executes one run to completion, optionally crashing once at the
    (phase, op-index) persistence boundary and resuming."""

    def __init__(self, workflow, units, profile, store_path, crash_at=None, step_minutes=15.0):
        self.workflow = workflow
        self.units = units
        self.profile = profile
        self.store_path = store_path
        self.crash_at = crash_at  # (phase, op_index) or None
        self.step = timedelta(minutes=step_minutes)
        self.crashes = 0
        self.platform = SimulatedPlatform(profile, START, horizon_hours=24.0)
        self.clock = VirtualClock(START)
        self.run_id = "run-crash-test"
        self.ops_seen = 0

    def _fresh_orchestrator(self) -> tuple[Store, Engine]:
        store = Store(self.store_path)
        armed = self.crash_at is not None and self.crashes == 0
        phase, target = self.crash_at if armed else (None, None)

        def hook(p: str, n: int) -> None:
            self.ops_seen = max(self.ops_seen, n)
            if armed and p == phase and n == target:
                raise SimulatedCrash(f"{phase}@{n}")

        store.fault_hook = hook
        workers = WorkerManager(store)
        engine = Engine(store, {"sim": self.platform}, workers, clock=self.clock)
        return store, engine

    def execute(self, max_steps: int = 3000) -> dict[str, Any]:
        store, engine = self._fresh_orchestrator()
        started = False
        for _ in range(max_steps):
            try:
                if not started:
                    if store.get_run(self.run_id) is None:
                        engine.start_run(
                            self.workflow,
                            self.units,
                            adapter_id="sim",
                            toggles={"eligibility": False, "quotas": False, "schedule": False},
                            seed=self.profile.seed,
                            run_id=self.run_id,
                        )
                    else:
                        engine.resume_run(self.run_id)
                    started = True
                outcome = engine.execute_next(self.run_id)
            except SimulatedCrash:
                self.crashes += 1
                store.abandon()
                store, engine = self._fresh_orchestrator()  # hook disarmed after one crash
                started = False
                continue
            if outcome == StepOutcome.RUN_COMPLETE:
                break
            if outcome in (StepOutcome.WAITING_ON_PLATFORM, StepOutcome.BLOCKED_BY_SCHEDULE):
                self.clock.advance(self.step.total_seconds())
                self.platform.advance(self.clock.now())
        else:
            raise AssertionError("run did not complete within the step budget")

        judgments = [doc for _, doc in store.judgments(self.run_id)]
        cache_digests = {
            bid: store.get_cache(self.run_id, bid)["digest"]
            for bid in store.cache_keys(self.run_id)
        }
        run_doc = store.get_run(self.run_id)
        store.close()
        return {
            "judgments": judgments,
            "cache_digests": cache_digests,
            "publish_counts": dict(self.platform.publish_counts),
            "status": run_doc["status"],
            "crashes": self.crashes,
            "ops_seen": self.ops_seen,
        }


def count_persistence_ops(workflow, units, profile, store_path) -> int:
    """Dry run with a counting hook; returns total mutating transactions."""
    seen = {"n": 0}
    run = CrashingRun(workflow, units, profile, store_path, crash_at=None)
    store = Store(store_path)

    def hook(phase: str, n: int) -> None:
        if phase == "after-commit":
            seen["n"] = max(seen["n"], n)

    store.fault_hook = hook
    workers = WorkerManager(store)
    engine = Engine(store, {"sim": run.platform}, workers, clock=run.clock)
    engine.start_run(
        workflow,
        units,
        adapter_id="sim",
        toggles={"eligibility": False, "quotas": False, "schedule": False},
        seed=profile.seed,
        run_id=run.run_id,
    )
    for _ in range(3000):
        outcome = engine.execute_next(run.run_id)
        if outcome == StepOutcome.RUN_COMPLETE:
            break
        if outcome in (StepOutcome.WAITING_ON_PLATFORM, StepOutcome.BLOCKED_BY_SCHEDULE):
            run.clock.advance(run.step.total_seconds())
            run.platform.advance(run.clock.now())
    store.close()
    return seen["n"]
