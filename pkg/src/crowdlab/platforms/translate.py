"""Template-to-platform payload translation.

Every UI element maps to a payload fragment; unknown kinds were rejected at
workflow validation, and kinds an adapter cannot render raise
``UnsupportedElementError`` at deploy time, never at runtime. The payload
carries the eligibility hook (callback URL plus a per-run signed token) that
task pages invoke before a worker may start.
"""

from __future__ import annotations

from typing import Any

from ..model import TaskTemplate, UiElement
from .base import UnsupportedElementError

_FRAGMENT_BUILDERS = {
    "text": lambda el: {"type": "display-text", "binding": el.binding},
    "image": lambda el: {"type": "display-image", "binding": el.binding},
    "text-input": lambda el: {"type": "input-text", "binding": el.binding, "required": el.required},
    "single-choice": lambda el: {
        "type": "choice",
        "multiple": False,
        "options": list(el.options),
        "binding": el.binding,
        "required": el.required,
    },
    "multi-choice": lambda el: {
        "type": "choice",
        "multiple": True,
        "options": list(el.options),
        "binding": el.binding,
        "required": el.required,
    },
    "highlightable-text": lambda el: {
        "type": "display-text",
        "binding": el.binding,
        "selectable_spans": True,
    },
    "highlightable-image": lambda el: {
        "type": "display-image",
        "binding": el.binding,
        "selectable_regions": True,
    },
}


def translate_template(
    template: TaskTemplate,
    adapter_id: str,
    supported_elements: frozenset[str] | None = None,
    eligibility_hook: dict[str, str] | None = None,
) -> dict[str, Any]:
    if supported_elements is None:
        from .base import adapter_factory  # late import to avoid cycles

        supported_elements = getattr(adapter_factory(adapter_id), "supported_elements", None)
        if supported_elements is None:
            supported_elements = frozenset(_FRAGMENT_BUILDERS)
    fragments = []
    for el in template.elements:
        if el.kind not in supported_elements:
            raise UnsupportedElementError(adapter_id, el.kind)
        fragments.append(_translate_element(el))
    payload: dict[str, Any] = {
        "title": template.title,
        "instructions": template.instructions,
        "elements": fragments,
        "paging": {
            "units_per_page": template.paging.units_per_page,
            "gold_per_page": template.paging.gold_per_page,
            "first_page_all_gold": template.paging.first_page_all_gold,
            "max_pages": template.paging.max_pages,
        },
    }
    if eligibility_hook is not None:
        payload["eligibility"] = dict(eligibility_hook)
    return payload


def _translate_element(el: UiElement) -> dict[str, Any]:
    builder = _FRAGMENT_BUILDERS.get(el.kind)
    if builder is None:
        raise UnsupportedElementError("(any)", el.kind)
    return builder(el)
