"""Deterministic discrete-event crowd platform simulator.

The simulator plays the role of the external platform plus its worker
population. Virtual time advances event-to-event, so a weeks-long deployment
simulates in seconds, and everything is drawn from a single seeded generator
consumed in event order: identical (profile, workload, seed) yields a
byte-identical judgment log.

Population model knobs and their defaults are calibrated so that an
uncontrolled deployment reproduces the bias phenomena a real one exhibits:

* country mix is heavy-tailed (three dominant countries over a geometric
  tail) and arrival intensity follows each country's diurnal curve in its
  local timezone;
* a fixed fraction of workers come back for a second visit, and a fraction
  of those land in a different condition than their first;
* every worker carries a personal judgment budget; returners split the
  budget across visits, so returning workers contribute the same total
  volume as one-shot workers and cleanup policies that drop them discard a
  contribution share close to the returning-worker fraction;
* decision time is lognormal, scaled by per-condition multipliers, a
  speedup for returning to the same condition, and direction-only crossover
  multipliers (faster when switching between support and no support, slower
  from bad support to good support); gold accuracy is deliberately
  unaffected by any of this.

The multiplier magnitudes are qualitative estimates and are configuration,
not assertions.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta, timezone
from typing import Any, Callable

import numpy as np

from .base import TaskHandle, TaskProgress, register_adapter

ALL_ELEMENTS = frozenset(
    {
        "text",
        "image",
        "text-input",
        "single-choice",
        "multi-choice",
        "highlightable-text",
        "highlightable-image",
    }
)

# activity multiplier per local hour 0..23: quiet nights, busy evenings
DEFAULT_DIURNAL = (
    0.15, 0.10, 0.08, 0.08, 0.10, 0.18,
    0.30, 0.50, 0.75, 0.95, 1.05, 1.10,
    1.05, 1.00, 1.00, 1.00, 1.05, 1.10,
    1.15, 1.10, 0.95, 0.75, 0.50, 0.30,
)

DEFAULT_COUNTRY_OFFSETS = {
    "VE": -4.0, "EG": 2.0, "UA": 2.0, "IN": 5.5, "PH": 8.0, "US": -5.0,
    "BR": -3.0, "RS": 1.0, "PK": 5.0, "ID": 7.0, "CO": -5.0, "MA": 1.0,
    "TR": 3.0, "RO": 2.0, "MX": -6.0, "ES": 1.0, "IT": 1.0, "GB": 0.0,
    "PL": 1.0, "AR": -3.0, "PE": -5.0, "BD": 6.0, "NG": 1.0, "KE": 3.0,
}


def default_country_mix() -> dict[str, float]:
    """Three dominant countries plus a geometric tail over the rest.

    The tail ratio keeps every tail country below the third head country,
    so the top three contributors stay the head trio.
    """
    head = {"VE": 0.285, "EG": 0.118, "UA": 0.078}
    tail_countries = [c for c in DEFAULT_COUNTRY_OFFSETS if c not in head]
    remaining = 1.0 - sum(head.values())
    ratio = 0.88
    raw = [ratio**i for i in range(len(tail_countries))]
    scale = remaining / sum(raw)
    mix = dict(head)
    for c, r in zip(tail_countries, raw):
        mix[c] = r * scale
    return mix


@dataclass
class PopulationProfile:
    country_mix: dict[str, float] = field(default_factory=default_country_mix)
    country_utc_offsets: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_COUNTRY_OFFSETS)
    )
    diurnal_curves: dict[str, tuple[float, ...]] = field(default_factory=dict)
    arrival_rate_per_hour: float = 5.0
    return_probability: float = 0.38
    cross_condition_probability: float = 0.79  # P(crosser | worker returns)
    return_delay_hours: tuple[float, float] = (1.0, 36.0)
    judgment_budget_mean: float = 11.5
    judgment_budget_min: int = 3
    first_visit_fraction: tuple[float, float] = (0.55, 0.80)
    base_decision_time_median_s: float = 24.0
    decision_time_sigma: float = 0.55
    group_time_multipliers: dict[str, float] = field(default_factory=dict)
    returning_same_speedup: float = 14.0 / 24.0
    crossover_multipliers: dict[str, float] = field(
        default_factory=lambda: {
            "good>base": 0.80,
            "bad>base": 0.80,
            "base>good": 0.80,
            "base>bad": 0.80,
            "bad>good": 1.30,
            "good>bad": 0.90,
        }
    )
    default_crossover_multiplier: float = 0.90
    base_accuracy: float = 0.90
    fingerprint_collision_rate: float = 0.0
    new_account_on_return_rate: float = 0.0
    seed: int = 0

    def diurnal(self, country: str, local_hour: int) -> float:
        curve = self.diurnal_curves.get(country) or self.diurnal_curves.get("default") or DEFAULT_DIURNAL
        return float(curve[local_hour % 24])

    def utc_offset(self, country: str) -> float:
        return float(self.country_utc_offsets.get(country, 0.0))

    def local_hour(self, country: str, at: datetime) -> int:
        h = at.hour + at.minute / 60.0 + self.utc_offset(country)
        return int(h) % 24

    def to_json(self) -> str:
        doc = asdict(self)
        doc["return_delay_hours"] = list(self.return_delay_hours)
        doc["first_visit_fraction"] = list(self.first_visit_fraction)
        doc["diurnal_curves"] = {k: list(v) for k, v in self.diurnal_curves.items()}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PopulationProfile":
        doc = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"profile: unknown fields: {', '.join(sorted(unknown))}")
        if "return_delay_hours" in doc:
            doc["return_delay_hours"] = tuple(doc["return_delay_hours"])
        if "first_visit_fraction" in doc:
            doc["first_visit_fraction"] = tuple(doc["first_visit_fraction"])
        if "diurnal_curves" in doc:
            doc["diurnal_curves"] = {k: tuple(v) for k, v in doc["diurnal_curves"].items()}
        return cls(**doc)


@dataclass(frozen=True)
class SimEvent:
    time: datetime
    kind: str  # worker-arrival | worker-returns | judgment-submitted
    worker: int | None
    payload: dict[str, Any] = field(default_factory=dict)


def simulate_arrivals(
    profile: PopulationProfile,
    window: tuple[datetime, datetime],
    rng: np.random.Generator | None = None,
) -> list[SimEvent]:
    """Inhomogeneous arrival process over [t0, t1).

    Expected arrivals in an hour are the sum over countries of
    rate * weight(country) * diurnal(country, local hour); realized counts
    are Poisson draws from the profile seed, so results are deterministic
    per seed.
    """
    t0, t1 = window
    if not t0 < t1:
        raise ValueError("window start must precede end")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(profile.seed))
    events: list[tuple[datetime, int]] = []
    seq = 0
    out: list[SimEvent] = []
    slice_start = t0
    while slice_start < t1:
        next_hour = (slice_start + timedelta(hours=1)).replace(minute=0, second=0, microsecond=0)
        slice_end = min(next_hour, t1)
        frac = (slice_end - slice_start).total_seconds() / 3600.0
        for country in sorted(profile.country_mix):
            weight = profile.country_mix[country]
            lam = (
                profile.arrival_rate_per_hour
                * weight
                * profile.diurnal(country, profile.local_hour(country, slice_start))
                * frac
            )
            n = int(rng.poisson(lam)) if lam > 0 else 0
            if n:
                offsets = np.sort(rng.uniform(0.0, frac * 3600.0, size=n))
                for off in offsets:
                    out.append(
                        SimEvent(
                            time=slice_start + timedelta(seconds=float(off)),
                            kind="worker-arrival",
                            worker=None,
                            payload={"country": country},
                        )
                    )
                    seq += 1
        slice_start = slice_end
    out.sort(key=lambda e: e.time)
    return out


def simulate_worker_behavior(
    profile: PopulationProfile,
    group_id: str,
    context: dict[str, Any],
    rng: np.random.Generator,
    group_kinds: dict[str, str] | None = None,
) -> tuple[float, bool]:
    """Draw one (decision-time seconds, answer-correct) pair.

    Decision time: lognormal(median, sigma) x condition multiplier, with a
    speedup for returning to the same condition and a crossover multiplier
    looked up by (from-kind, to-kind). Accuracy is a flat Bernoulli draw:
    returning status does not touch it.
    """
    kinds = group_kinds or {}
    mu = math.log(profile.base_decision_time_median_s)
    sigma = profile.decision_time_sigma
    base = math.exp(mu + sigma * float(rng.standard_normal()))
    mult = float(profile.group_time_multipliers.get(group_id, 1.0))
    if context.get("is_returning"):
        from_group = context.get("from_group")
        if from_group == group_id or from_group is None:
            mult *= profile.returning_same_speedup
        else:
            key = f"{kinds.get(from_group, 'base')}>{kinds.get(group_id, 'base')}"
            mult *= profile.crossover_multipliers.get(key, profile.default_crossover_multiplier)
    correct = bool(rng.random() < profile.base_accuracy)
    return base * mult, correct


@dataclass
class _SimWorker:
    index: int
    platform_id: str
    fingerprint: str
    country: str
    will_return: bool
    crosser: bool
    budget: int
    first_units: int
    visits: int = 0
    first_group: str | None = None
    blocked: bool = False


@dataclass
class _SimTask:
    task_id: str
    block_id: str
    group_id: str
    payload: dict[str, Any]
    units: list[dict[str, Any]]
    votes_per_unit: int
    gold: list[dict[str, Any]] = field(default_factory=list)
    plain: list[dict[str, Any]] = field(default_factory=list)
    votes: dict[str, int] = field(default_factory=dict)
    judgments: list[dict[str, Any]] = field(default_factory=list)
    seen: dict[int, set[str]] = field(default_factory=dict)
    paused: bool = False
    cancelled: bool = False
    created_at: str = ""

    def __post_init__(self) -> None:
        self.gold = [u for u in self.units if u.get("gold") is not None]
        self.plain = [u for u in self.units if u.get("gold") is None]

    @property
    def options(self) -> list[str]:
        for el in self.payload.get("elements", []):
            if el.get("type") == "choice" and el.get("options"):
                return list(el["options"])
        return ["yes", "no"]

    def open_units(self) -> list[dict[str, Any]]:
        return [u for u in self.plain if self.votes.get(u["id"], 0) < self.votes_per_unit]

    @property
    def open(self) -> bool:
        return not self.paused and not self.cancelled and bool(self.open_units())


GateFn = Callable[[datetime, str, str], tuple[bool, str]]
EligibilityFn = Callable[[str, str, str, str], Any]


class SimulatedPlatform:
    """Adapter plus virtual world. Survives orchestrator crashes by design:
    it models the outside platform, so the crash harness keeps it alive and
    resumed runs re-attach to its task handles."""

    adapter_id = "sim"
    supported_elements = ALL_ELEMENTS

    def __init__(
        self,
        profile: PopulationProfile,
        start_time: datetime,
        horizon_hours: float | None = None,
        eligibility_fn: EligibilityFn | None = None,
        gate_fn: GateFn | None = None,
        group_kinds: dict[str, str] | None = None,
    ):
        self.profile = profile
        self.rng = np.random.Generator(np.random.PCG64(profile.seed))
        self.start_time = start_time
        self.now = start_time
        self.horizon_end = (
            start_time + timedelta(hours=horizon_hours) if horizon_hours else None
        )
        self.eligibility_fn = eligibility_fn
        self.gate_fn = gate_fn
        self.group_kinds = group_kinds or {}
        self.tasks: dict[str, _SimTask] = {}
        self.tokens: dict[str, str] = {}
        self.publish_counts: dict[str, int] = {}  # block_id -> real creations
        self.workers: list[_SimWorker] = []
        self.trace: list[dict[str, Any]] = []
        self._events: list[tuple[datetime, int, str, dict[str, Any]]] = []
        self._event_seq = 0
        self._arrival_frontier = start_time
        self._judgment_seq = 0

    # -- adapter surface ---------------------------------------------------

    def publish(
        self, payload: dict[str, Any], units: list[dict[str, Any]], idempotency_token: str
    ) -> TaskHandle:
        if idempotency_token in self.tokens:
            task = self.tasks[self.tokens[idempotency_token]]
            return TaskHandle(self.adapter_id, task.task_id, task.created_at)
        block_id = payload.get("block_id", f"block-{len(self.tasks)}")
        task_id = f"sim-{len(self.tasks):03d}-{block_id}"
        task = _SimTask(
            task_id=task_id,
            block_id=block_id,
            group_id=payload.get("group_id", ""),
            payload=payload,
            units=units,
            votes_per_unit=int(payload.get("votes_per_unit", 1)),
            created_at=self.now.isoformat(),
        )
        self.tasks[task_id] = task
        self.tokens[idempotency_token] = task_id
        self.publish_counts[block_id] = self.publish_counts.get(block_id, 0) + 1
        self.trace.append({"event": "publish", "task": task_id, "block": block_id})
        return TaskHandle(self.adapter_id, task_id, task.created_at)

    def status(self, handle: TaskHandle) -> TaskProgress:
        task = self.tasks[handle.platform_task_id]
        return TaskProgress(
            published=True,
            paused=task.paused,
            judgment_count=len(task.judgments),
            complete=not task.open_units(),
        )

    def pause(self, handle: TaskHandle) -> None:
        self.tasks[handle.platform_task_id].paused = True

    def resume(self, handle: TaskHandle) -> None:
        self.tasks[handle.platform_task_id].paused = False

    def fetch_judgments(
        self, handle: TaskHandle, since_cursor: int
    ) -> tuple[list[dict[str, Any]], int]:
        task = self.tasks[handle.platform_task_id]
        new = task.judgments[since_cursor:]
        return list(new), len(task.judgments)

    def cancel(self, handle: TaskHandle) -> None:
        self.tasks[handle.platform_task_id].cancelled = True

    def worker_country(self, platform_worker_id: str) -> str:
        for w in self.workers:
            if w.platform_id == platform_worker_id:
                return w.country
        return "ZZ"

    # -- virtual world -------------------------------------------------------

    def _push(self, at: datetime, kind: str, payload: dict[str, Any]) -> None:
        self._event_seq += 1
        heapq.heappush(self._events, (at, self._event_seq, kind, payload))

    def advance(self, to_time: datetime) -> None:
        """Advance virtual time, generating and processing events up to it."""
        if to_time <= self.now and not self._events:
            return
        if self._arrival_frontier < to_time:
            for ev in simulate_arrivals(
                self.profile, (self._arrival_frontier, to_time), rng=self.rng
            ):
                self._push(ev.time, "arrival", dict(ev.payload))
            self._arrival_frontier = to_time
        while self._events and self._events[0][0] <= to_time:
            at, _, kind, payload = heapq.heappop(self._events)
            if kind == "arrival":
                self._on_arrival(at, payload["country"])
            elif kind == "return":
                self._on_return(at, payload["worker"])
        self.now = to_time

    def _on_arrival(self, at: datetime, country: str) -> None:
        rng = self.rng
        n = len(self.workers)
        fingerprint = f"fp{n:05d}"
        if self.workers and float(rng.random()) < self.profile.fingerprint_collision_rate:
            fingerprint = self.workers[int(rng.integers(len(self.workers)))].fingerprint
        will_return = bool(rng.random() < self.profile.return_probability)
        crosser = bool(rng.random() < self.profile.cross_condition_probability)
        extra = max(0.0, self.profile.judgment_budget_mean - self.profile.judgment_budget_min)
        budget = self.profile.judgment_budget_min + int(rng.poisson(extra))
        if will_return and budget >= 2:
            frac = float(rng.uniform(*self.profile.first_visit_fraction))
            first_units = min(budget - 1, max(1, round(budget * frac)))
        else:
            first_units = budget
        worker = _SimWorker(
            index=n,
            platform_id=f"w{n:05d}",
            fingerprint=fingerprint,
            country=country,
            will_return=will_return,
            crosser=crosser,
            budget=budget,
            first_units=first_units,
        )
        self.workers.append(worker)
        self._run_visit(worker, at)

    def _on_return(self, at: datetime, worker_index: int) -> None:
        worker = self.workers[worker_index]
        if float(self.rng.random()) < self.profile.new_account_on_return_rate:
            worker.platform_id = f"w{worker.index:05d}r"
        self._run_visit(worker, at)

    def _open_tasks(self) -> list[_SimTask]:
        return [t for _, t in sorted(self.tasks.items()) if t.open]

    def _pick_landing(self, worker: _SimWorker, open_tasks: list[_SimTask]) -> _SimTask | None:
        rng = self.rng
        if worker.visits == 0:
            return open_tasks[int(rng.integers(len(open_tasks)))]
        if worker.crosser:
            pool = [t for t in open_tasks if t.group_id != worker.first_group]
        else:
            pool = [t for t in open_tasks if t.group_id == worker.first_group]
        if not pool:
            return None
        return pool[int(rng.integers(len(pool)))]

    def _run_visit(self, worker: _SimWorker, at: datetime) -> None:
        open_tasks = self._open_tasks()
        if not open_tasks:
            self.trace.append({"event": "no-open-task", "worker": worker.index})
            return
        landing = self._pick_landing(worker, open_tasks)
        if landing is None:
            self.trace.append({"event": "no-matching-task", "worker": worker.index})
            return

        session = worker.visits
        group = landing.group_id
        task = landing
        if self.eligibility_fn is not None:
            decision = self.eligibility_fn(
                worker.platform_id, worker.fingerprint, worker.country, landing.block_id
            )
            if not decision.proceed:
                worker.blocked = True
                self.trace.append(
                    {
                        "event": "blocked",
                        "worker": worker.index,
                        "reason": decision.reason,
                        "session": session,
                    }
                )
                return
            if decision.group_id and decision.group_id != group:
                matches = [t for t in open_tasks if t.group_id == decision.group_id]
                if not matches:
                    self.trace.append(
                        {"event": "assigned-group-closed", "worker": worker.index}
                    )
                    return
                task = matches[0]
                group = task.group_id

        worker.visits += 1
        if worker.visits == 1:
            worker.first_group = group
        target_units = (
            worker.first_units if session == 0 else max(0, worker.budget - worker.first_units)
        )
        if target_units <= 0:
            return
        produced = self._session(worker, task, at, session, target_units)
        self.trace.append(
            {
                "event": "session",
                "worker": worker.index,
                "task": task.task_id,
                "group": group,
                "session": session,
                "judgments": produced,
            }
        )
        if session == 0 and worker.will_return and not worker.blocked:
            self._schedule_return(worker, at)

    def _schedule_return(self, worker: _SimWorker, at: datetime) -> None:
        lo, hi = self.profile.return_delay_hours
        delay_h = float(self.rng.uniform(lo, hi))
        when = at + timedelta(hours=delay_h)
        if self.horizon_end is not None and when >= self.horizon_end:
            remaining_h = (self.horizon_end - at).total_seconds() / 3600.0 - 0.1
            if remaining_h <= 0.25:
                self.trace.append({"event": "return-lost", "worker": worker.index})
                return
            when = at + timedelta(hours=float(self.rng.uniform(0.25, remaining_h)))
        self._push(when, "return", {"worker": worker.index})

    def _session(
        self,
        worker: _SimWorker,
        task: _SimTask,
        at: datetime,
        session: int,
        target_units: int,
    ) -> int:
        """One visit: pages of units judged in sequence on the virtual clock."""
        paging = task.payload.get("paging", {})
        units_per_page = int(paging.get("units_per_page", 3))
        gold_per_page = min(int(paging.get("gold_per_page", 1)), units_per_page)
        first_all_gold = bool(paging.get("first_page_all_gold", False))
        max_pages = int(paging.get("max_pages", 6))

        seen = task.seen.setdefault(worker.index, set())
        clock = at
        produced = 0
        context = {
            "is_returning": session > 0,
            "from_group": worker.first_group if session > 0 else None,
        }
        for page in range(max_pages):
            if produced >= target_units:
                break
            page_units = self._page_units(
                task, seen, units_per_page, gold_per_page, first_all_gold and page == 0
            )
            if not page_units:
                break
            for unit in page_units:
                if produced >= target_units:
                    break
                decision_time, correct = simulate_worker_behavior(
                    self.profile, task.group_id, context, self.rng, self.group_kinds
                )
                clock = clock + timedelta(seconds=decision_time)
                if self.horizon_end is not None and clock >= self.horizon_end:
                    return produced
                if self.gate_fn is not None:
                    ok, reason = self.gate_fn(clock, task.group_id, worker.country)
                    if not ok:
                        self.trace.append(
                            {
                                "event": "gated",
                                "worker": worker.index,
                                "reason": reason,
                                "group": task.group_id,
                            }
                        )
                        return produced
                answer = self._answer(task, unit, correct)
                self._record(task, worker, unit, answer, decision_time, clock, session)
                seen.add(unit["id"])
                produced += 1
        return produced

    def _page_units(
        self,
        task: _SimTask,
        seen: set[str],
        units_per_page: int,
        gold_per_page: int,
        all_gold: bool,
    ) -> list[dict[str, Any]]:
        rng = self.rng
        picked: list[dict[str, Any]] = []
        if not task.gold:
            all_gold = False  # tasks without screening items use mixed pages only
        gold_needed = units_per_page if all_gold else (gold_per_page if task.gold else 0)
        gold_pool = [u for u in task.gold if u["id"] not in seen]
        if len(gold_pool) < gold_needed:  # small gold sets are reused
            gold_pool = list(task.gold)
        for _ in range(min(gold_needed, len(gold_pool))):
            idx = int(rng.integers(len(gold_pool)))
            picked.append(gold_pool.pop(idx))
        if not all_gold:
            open_units = [u for u in task.open_units() if u["id"] not in seen]
            open_units.sort(key=lambda u: (task.votes.get(u["id"], 0), u["id"]))
            picked.extend(open_units[: max(0, units_per_page - len(picked))])
        return picked

    def _answer(self, task: _SimTask, unit: dict[str, Any], correct: bool) -> str:
        options = task.options
        gold = unit.get("gold")
        if gold is not None:
            expected = str(gold.get("expected-answer"))
            if correct:
                return expected
            wrong = [o for o in options if o != expected]
            if not wrong:
                return expected
            return wrong[int(self.rng.integers(len(wrong)))]
        return options[int(self.rng.integers(len(options)))]

    def _record(
        self,
        task: _SimTask,
        worker: _SimWorker,
        unit: dict[str, Any],
        answer: str,
        decision_time: float,
        at: datetime,
        session: int,
    ) -> None:
        self._judgment_seq += 1
        raw = {
            "uid": f"{task.task_id}:{self._judgment_seq:06d}",
            "unit_id": unit["id"],
            "worker_id": worker.platform_id,
            "fingerprint": worker.fingerprint,
            "country": worker.country,
            "answer": answer,
            "decision_time_ms": int(round(decision_time * 1000)),
            "timestamp": at.isoformat(),
            "session": session,
            "block_id": task.block_id,
        }
        task.judgments.append(raw)
        if unit.get("gold") is None:
            task.votes[unit["id"]] = task.votes.get(unit["id"], 0) + 1


def make_sim_adapter(**kwargs: Any) -> SimulatedPlatform:
    profile = kwargs.pop("profile", None) or PopulationProfile()
    start = kwargs.pop("start_time", None) or datetime(2020, 6, 1, tzinfo=timezone.utc)
    return SimulatedPlatform(profile, start, **kwargs)


register_adapter("sim", make_sim_adapter)
