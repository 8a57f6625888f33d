"""Adapter contract isolating the orchestrator from any crowd platform.

Adapters are registered by name; the engine only ever talks to this
interface. Two adapters ship in-tree: the deterministic simulator (``sim``)
and a file-backed one (``file``) for manual or offline deployments. Live
platform clients are third-party extension points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol, runtime_checkable


class UnsupportedElementError(ValueError):
    """An adapter cannot render a template element; raised at deploy time."""

    def __init__(self, adapter_id: str, element_kind: str):
        super().__init__(f"adapter {adapter_id!r} does not support element kind {element_kind!r}")
        self.adapter_id = adapter_id
        self.element_kind = element_kind


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskHandle:
    adapter_id: str
    platform_task_id: str
    created_at: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "adapter_id": self.adapter_id,
            "platform_task_id": self.platform_task_id,
            "created_at": self.created_at,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "TaskHandle":
        return cls(
            adapter_id=doc["adapter_id"],
            platform_task_id=doc["platform_task_id"],
            created_at=doc["created_at"],
        )


@dataclass(frozen=True)
class TaskProgress:
    published: bool
    paused: bool
    judgment_count: int
    complete: bool = False


@runtime_checkable
class Adapter(Protocol):
    """Capability set every crowd platform adapter implements.

    ``publish`` must be idempotent under the same idempotency token, and
    ``fetch_judgments`` must be cursor-monotone: no judgment delivered twice,
    none skipped, replay from any saved cursor yields the exact suffix.
    """

    adapter_id: str
    supported_elements: frozenset[str]

    def publish(
        self, payload: dict[str, Any], units: list[dict[str, Any]], idempotency_token: str
    ) -> TaskHandle: ...

    def status(self, handle: TaskHandle) -> TaskProgress: ...

    def pause(self, handle: TaskHandle) -> None: ...

    def resume(self, handle: TaskHandle) -> None: ...

    def fetch_judgments(
        self, handle: TaskHandle, since_cursor: int
    ) -> tuple[list[dict[str, Any]], int]: ...

    def cancel(self, handle: TaskHandle) -> None: ...

    def worker_country(self, platform_worker_id: str) -> str: ...


_ADAPTER_FACTORIES: dict[str, Callable[..., Adapter]] = {}


def register_adapter(adapter_id: str, factory: Callable[..., Adapter]) -> None:
    _ADAPTER_FACTORIES[adapter_id] = factory


def adapter_factory(adapter_id: str) -> Callable[..., Adapter]:
    try:
        return _ADAPTER_FACTORIES[adapter_id]
    except KeyError:
        raise AdapterError(f"unknown adapter: {adapter_id!r}") from None


def known_adapters() -> list[str]:
    return sorted(_ADAPTER_FACTORIES)
