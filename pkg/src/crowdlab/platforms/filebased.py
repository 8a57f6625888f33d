"""File-backed adapter: tasks as directories, judgments as append-only NDJSON.

Useful for real deployments without API coupling: the orchestrator writes
``task.json`` (translated payload plus units) into one directory per
published task, and an external process (or a human) appends judgment lines
to ``judgments.ndjson``. Each line carries: unit-id, worker-id, fingerprint,
answer, decision-time-ms, timestamp.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .base import TaskHandle, TaskProgress, register_adapter

# deliberately narrower than the simulator: offline task pages render static
# markup, so region selection on images is not available
FILE_SUPPORTED_ELEMENTS = frozenset(
    {
        "text",
        "image",
        "text-input",
        "single-choice",
        "multi-choice",
        "highlightable-text",
    }
)


class FileAdapter:
    adapter_id = "file"
    supported_elements = FILE_SUPPORTED_ELEMENTS

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _task_dir(self, task_id: str) -> Path:
        return self.root / task_id

    def publish(
        self, payload: dict[str, Any], units: list[dict[str, Any]], idempotency_token: str
    ) -> TaskHandle:
        task_id = f"task-{idempotency_token}"
        task_dir = self._task_dir(task_id)
        created_at = datetime.now(timezone.utc).isoformat()
        marker = task_dir / "task.json"
        if marker.exists():  # idempotent re-publish under the same token
            doc = json.loads(marker.read_text())
            return TaskHandle(adapter_id=self.adapter_id, platform_task_id=task_id, created_at=doc["created_at"])
        task_dir.mkdir(parents=True, exist_ok=True)
        marker.write_text(
            json.dumps(
                {"payload": payload, "units": units, "created_at": created_at},
                indent=2,
                sort_keys=True,
            )
        )
        (task_dir / "judgments.ndjson").touch()
        (task_dir / "status.json").write_text(json.dumps({"paused": False}))
        return TaskHandle(adapter_id=self.adapter_id, platform_task_id=task_id, created_at=created_at)

    def status(self, handle: TaskHandle) -> TaskProgress:
        task_dir = self._task_dir(handle.platform_task_id)
        paused = False
        status_file = task_dir / "status.json"
        if status_file.exists():
            paused = bool(json.loads(status_file.read_text()).get("paused", False))
        count = len(self._lines(handle))
        return TaskProgress(published=True, paused=paused, judgment_count=count)

    def pause(self, handle: TaskHandle) -> None:
        self._set_paused(handle, True)

    def resume(self, handle: TaskHandle) -> None:
        self._set_paused(handle, False)

    def _set_paused(self, handle: TaskHandle, paused: bool) -> None:
        status_file = self._task_dir(handle.platform_task_id) / "status.json"
        status_file.write_text(json.dumps({"paused": paused}))

    def _lines(self, handle: TaskHandle) -> list[str]:
        path = self._task_dir(handle.platform_task_id) / "judgments.ndjson"
        if not path.exists():
            return []
        return [line for line in path.read_text().splitlines() if line.strip()]

    def fetch_judgments(
        self, handle: TaskHandle, since_cursor: int
    ) -> tuple[list[dict[str, Any]], int]:
        lines = self._lines(handle)
        new = lines[since_cursor:]
        return [json.loads(line) for line in new], len(lines)

    def cancel(self, handle: TaskHandle) -> None:
        status_file = self._task_dir(handle.platform_task_id) / "status.json"
        status_file.write_text(json.dumps({"paused": True, "cancelled": True}))

    def worker_country(self, platform_worker_id: str) -> str:
        mapping_file = self.root / "workers.json"
        if mapping_file.exists():
            mapping = json.loads(mapping_file.read_text())
            return mapping.get(platform_worker_id, "ZZ")
        return "ZZ"


register_adapter("file", FileAdapter)
