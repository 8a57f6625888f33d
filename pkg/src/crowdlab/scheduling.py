"""Time-window gating and progress checkpoints for runs.

All schedule times are UTC; worker-local time is a population concern that
lives in the simulator. The scheduler is driven by an injected clock so
tests and simulations run on virtual time.

Checkpoints are the single hook where progress-interval work fires: quota
bucket rotation and progress snapshots both hang off the ``checkpoint``
command emitted here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Any, Protocol

from .model import Schedule, ScheduleWindow


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class VirtualClock:
    """Manually advanced clock for simulation and tests."""

    def __init__(self, start: datetime):
        self._now = _as_utc(start)

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float) -> datetime:
        self._now = self._now + timedelta(seconds=seconds)
        return self._now

    def set(self, t: datetime) -> None:
        self._now = _as_utc(t)


def _as_utc(t: datetime) -> datetime:
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def _window_matches(w: ScheduleWindow, now: datetime) -> bool:
    hour = now.hour + now.minute / 60 + now.second / 3600
    day = now.weekday()
    if w.start_hour < w.end_hour:
        in_hours = w.start_hour <= hour < w.end_hour
        day_ok = not w.days or day in w.days
        return in_hours and day_ok
    # wraps midnight: the after-midnight part belongs to the window that
    # started the previous day
    if hour >= w.start_hour:
        return not w.days or day in w.days
    if hour < w.end_hour:
        prev_day = (day - 1) % 7
        return not w.days or prev_day in w.days
    return False


def is_active(schedule: Schedule | None, now: datetime) -> bool:
    """True iff ``now`` falls inside a window. Start inclusive, end exclusive.

    An empty window list means the run is unscheduled and always active.
    """
    if schedule is None or not schedule.windows:
        return True
    now = _as_utc(now)
    return any(_window_matches(w, now) for w in schedule.windows)


def active_window_index(schedule: Schedule | None, now: datetime) -> int | None:
    if schedule is None or not schedule.windows:
        return None
    now = _as_utc(now)
    for i, w in enumerate(schedule.windows):
        if _window_matches(w, now):
            return i
    return None


@dataclass
class SchedulerState:
    run_id: str
    active: bool = True
    last_checkpoint_at: datetime | None = None
    judgments_at_checkpoint: int = 0
    checkpoint_index: int = 0

    def to_doc(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "active": self.active,
            "last_checkpoint_at": (
                self.last_checkpoint_at.isoformat() if self.last_checkpoint_at else None
            ),
            "judgments_at_checkpoint": self.judgments_at_checkpoint,
            "checkpoint_index": self.checkpoint_index,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "SchedulerState":
        return cls(
            run_id=doc["run_id"],
            active=bool(doc.get("active", True)),
            last_checkpoint_at=(
                datetime.fromisoformat(doc["last_checkpoint_at"])
                if doc.get("last_checkpoint_at")
                else None
            ),
            judgments_at_checkpoint=int(doc.get("judgments_at_checkpoint", 0)),
            checkpoint_index=int(doc.get("checkpoint_index", 0)),
        )


@dataclass(frozen=True)
class Command:
    kind: str  # "pause-run" | "resume-run" | "checkpoint"
    at: datetime


def on_tick(
    state: SchedulerState,
    schedule: Schedule | None,
    now: datetime,
    judgment_count: int = 0,
) -> list[Command]:
    """Emit pause/resume on window transitions and checkpoints on progress.

    Commands are idempotent downstream (pausing a paused run is a no-op),
    and this function itself never emits two pauses without a resume between
    because it tracks the last known activity state.
    """
    now = _as_utc(now)
    commands: list[Command] = []
    active_now = is_active(schedule, now)
    if active_now and not state.active:
        commands.append(Command(kind="resume-run", at=now))
        state.active = True
    elif not active_now and state.active:
        commands.append(Command(kind="pause-run", at=now))
        state.active = False

    if schedule is not None:
        if state.last_checkpoint_at is None:
            state.last_checkpoint_at = now
            state.judgments_at_checkpoint = judgment_count
        due = False
        if schedule.checkpoint_every_judgments:
            due = judgment_count - state.judgments_at_checkpoint >= schedule.checkpoint_every_judgments
        if not due and schedule.checkpoint_every_seconds:
            due = (now - state.last_checkpoint_at).total_seconds() >= schedule.checkpoint_every_seconds
        if due:
            commands.append(Command(kind="checkpoint", at=now))
            state.last_checkpoint_at = now
            state.judgments_at_checkpoint = judgment_count
            state.checkpoint_index += 1
    return commands


def window_balance(per_group_window_counts: dict[str, dict[int, int]], n_windows: int) -> dict[str, Any]:
    """Per-group window counts with a single imbalance score.

    Score = max over groups of (max window count - min window count) / mean,
    where the mean is over that group's window counts. Zero windows or a
    single window score 0 by convention.
    """
    per_group: dict[str, dict[str, Any]] = {}
    worst = 0.0
    for group, counts in sorted(per_group_window_counts.items()):
        filled = [counts.get(i, 0) for i in range(n_windows)]
        if n_windows <= 1 or not filled:
            score = 0.0
        else:
            mean = sum(filled) / len(filled)
            score = 0.0 if mean == 0 else (max(filled) - min(filled)) / mean
        per_group[group] = {"counts": filled, "score": score}
        worst = max(worst, score)
    return {"per_group": per_group, "score": worst}


def window_cap(group_target: int, n_windows: int) -> int:
    """Per-window admission cap used when balance-across-groups is on."""
    if n_windows <= 0:
        return group_target
    return math.ceil(group_target / n_windows)
