"""Drives a run end-to-end against the simulated platform on virtual time.

The driver owns the loop: scheduler tick, engine step, and virtual-time
advance whenever the engine is waiting on the platform. Admission control
(the gate) sits between the simulated workers and the judgment log: it
enforces schedule windows, window-balance caps, and hard-block quotas at
the moment a judgment would be produced, which is the only place the
"never exceed the cap by more than one in-flight grant" bound can be
guaranteed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any

from .engine import Engine, StepOutcome
from .model import DataUnit, QuotaConfig, Schedule, WorkflowDef
from .platforms.sim import PopulationProfile, SimulatedPlatform
from .scheduling import (
    SchedulerState,
    VirtualClock,
    active_window_index,
    is_active,
    on_tick,
    window_cap,
)
from .store import Store
from .workers import WorkerManager, bucket_for_country, check_quota

DEFAULT_START = datetime(2020, 6, 1, 0, 0, tzinfo=timezone.utc)


@dataclass
class Toggles:
    eligibility: bool = True
    quotas: bool = True
    schedule: bool = True

    def to_dict(self) -> dict[str, bool]:
        return {"eligibility": self.eligibility, "quotas": self.quotas, "schedule": self.schedule}


class GateKeeper:
    """Deterministic admission control applied per prospective judgment."""

    def __init__(
        self,
        schedule: Schedule | None,
        quota: QuotaConfig | None,
        balance_caps: dict[str, int] | None,
    ):
        self.schedule = schedule
        self.quota = quota
        self.balance_caps = balance_caps or {}
        self.bucket_counts: dict[str, int] = {}
        self.window_counts: dict[tuple[str, int], int] = {}

    def admit(self, at: datetime, group: str, country: str) -> tuple[bool, str]:
        window = None
        if self.schedule is not None:
            if not is_active(self.schedule, at):
                return False, "outside-window"
            window = active_window_index(self.schedule, at)
            if self.balance_caps and window is not None:
                cap = self.balance_caps.get(group)
                if cap is not None and self.window_counts.get((group, window), 0) >= cap:
                    return False, "window-balance"
        if self.quota is not None:
            qc = check_quota(self.quota, self.bucket_counts, country)
            if not qc.allowed:
                return False, "quota-exhausted"
        if self.quota is not None:
            bucket = bucket_for_country(self.quota, country)
            self.bucket_counts[bucket] = self.bucket_counts.get(bucket, 0) + 1
        if window is not None:
            key = (group, window)
            self.window_counts[key] = self.window_counts.get(key, 0) + 1
        return True, ""


@dataclass
class SimulationResult:
    run_id: str
    store: Store
    platform: SimulatedPlatform
    judgments: list[dict[str, Any]] = field(default_factory=list)
    trace: list[dict[str, Any]] = field(default_factory=list)
    outcome: str = ""

    @property
    def workers_created(self) -> int:
        return len(self.platform.workers)

    def publish_counts(self) -> dict[str, int]:
        return dict(self.platform.publish_counts)


def run_simulation(
    workflow: WorkflowDef,
    profile: PopulationProfile,
    toggles: Toggles | dict[str, bool] | None = None,
    units: list[DataUnit] | None = None,
    horizon_hours: float = 168.0,
    step_minutes: float = 30.0,
    start_time: datetime = DEFAULT_START,
    store: Store | None = None,
    max_steps: int | None = None,
) -> SimulationResult:
    """Execute one workflow against the simulated platform.

    Fully deterministic per (workflow, profile, toggles, seed): the virtual
    clock advances in fixed steps and the platform draws everything from one
    seeded stream in event order.
    """
    if isinstance(toggles, dict):
        toggles = Toggles(**toggles)
    toggles = toggles or Toggles()
    units = units or []
    store = store or Store(":memory:")

    clock = VirtualClock(start_time)
    workers = WorkerManager(store)

    schedule = workflow.schedule if toggles.schedule else None
    quota = workflow.quotas if toggles.quotas else None
    hard_quota = quota if (quota and quota.enforcement == "hard-block") else None

    balance_caps: dict[str, int] | None = None
    if schedule is not None and schedule.balance_across_groups and schedule.windows:
        non_gold = sum(1 for u in units if u.gold is None)
        caps: dict[str, int] = {}
        for block in workflow.do_blocks():
            if not workflow.parents(block.id):
                gid = block.do.group
                caps[gid] = caps.get(gid, 0) + non_gold * block.do.votes_per_unit
        balance_caps = {
            gid: window_cap(target, len(schedule.windows)) for gid, target in caps.items()
        }

    gate = GateKeeper(schedule, hard_quota, balance_caps)
    group_kinds = {g.id: (g.kind or "base") for g in workflow.groups}

    run_box: dict[str, str] = {}

    def eligibility_fn(platform_id: str, fingerprint: str, country: str, block_id: str):
        return workers.decide_eligibility(
            run_box["run_id"],
            platform_id,
            fingerprint,
            country,
            block_id,
            now=clock.now().isoformat(),
        )

    platform = SimulatedPlatform(
        profile,
        start_time,
        horizon_hours=horizon_hours,
        eligibility_fn=eligibility_fn if toggles.eligibility else None,
        gate_fn=gate.admit,
        group_kinds=group_kinds,
    )
    engine = Engine(store, {"sim": platform}, workers, clock=clock)
    run_id = engine.start_run(
        workflow,
        units,
        adapter_id="sim",
        toggles=toggles.to_dict(),
        seed=profile.seed,
    )
    run_box["run_id"] = run_id

    end_time = start_time + timedelta(hours=horizon_hours)
    step = timedelta(minutes=step_minutes)
    limit = max_steps if max_steps is not None else int(horizon_hours * 60 / step_minutes) + 10_000
    outcome = StepOutcome.WAITING_ON_PLATFORM
    sched_state = SchedulerState(run_id=run_id, active=True)

    count_needed = schedule is not None and schedule.checkpoint_every_judgments > 0
    for _ in range(limit):
        jc = store.count_judgments(run_id) if count_needed else 0
        commands = on_tick(sched_state, schedule, clock.now(), judgment_count=jc)
        if commands:
            engine.apply_commands(run_id, commands)
        outcome = engine.execute_next(run_id)
        if outcome == StepOutcome.RUN_COMPLETE:
            break
        if outcome in (StepOutcome.WAITING_ON_PLATFORM, StepOutcome.BLOCKED_BY_SCHEDULE):
            if clock.now() >= end_time:
                break
            clock.advance(step.total_seconds())
            platform.advance(clock.now())

    engine.drain(run_id)
    judgments = [doc for _, doc in store.judgments(run_id)]
    return SimulationResult(
        run_id=run_id,
        store=store,
        platform=platform,
        judgments=judgments,
        trace=list(platform.trace),
        outcome=outcome.value,
    )


def report_for_run(store: Store, run_id: str, per_condition_z: bool = False) -> dict[str, Any]:
    """Assemble the bias report for a persisted run."""
    from .analysis import ReportConfig, build_report

    run = store.get_run(run_id)
    if run is None:
        raise KeyError(f"unknown run: {run_id}")
    judgments = [doc for _, doc in store.judgments(run_id)]
    if not judgments:
        return {
            "report_version": 1,
            "total_judgments": 0,
            "total_workers": 0,
            "note": "no judgments collected yet",
        }
    group_kinds = {g["id"]: (g.get("kind") or "base") for g in run.get("groups", [])}
    schedule = run.get("schedule") or {}
    n_windows = len(schedule.get("windows", []) or [])
    window_counts: dict[str, dict[int, int]] = {}
    for key, value in store.kv_items(f"counters:{run_id}"):
        if key.startswith("window:"):
            _, gid, widx = key.split(":", 2)
            window_counts.setdefault(gid, {})[int(widx)] = int(value)
    config = ReportConfig(
        group_kinds=group_kinds, n_windows=n_windows, per_condition_z=per_condition_z
    )
    return build_report(
        judgments, config, window_counts=window_counts if n_windows else None
    )
