"""Closed transform vocabulary for Lambda blocks.

Transforms are pure functions over lists of plain dicts (serialized units or
judgments), so their outputs are directly cacheable and digestable. New ops
register by name via :func:`register_transform`.
"""

from __future__ import annotations

import random
from typing import Any, Callable

from .model import TransformSpec


class TransformError(ValueError):
    pass


Items = list
TransformFn = Callable[[dict[str, Any], Items], Items]

_REGISTRY: dict[str, TransformFn] = {}


def register_transform(op: str, fn: TransformFn) -> None:
    _REGISTRY[op] = fn


def eval_transform(spec: TransformSpec, items: Items) -> Items:
    """Apply ``spec`` to ``items``. Deterministic: sampling uses an explicit seed."""
    fn = _REGISTRY.get(spec.op)
    if fn is None:
        raise TransformError(f"unknown transform op: {spec.op!r}")
    return fn(spec.parameters, items)


def _field_value(item: dict[str, Any], field: str) -> Any:
    payload = item.get("payload")
    if isinstance(payload, dict) and field in payload:
        return payload[field]
    if field in item:
        return item[field]
    raise TransformError(f"unknown field in predicate: {field!r}")


def _op_filter(params: dict[str, Any], items: Items) -> Items:
    field, value = params["field"], params["value"]
    return [it for it in items if _field_value(it, field) == value]


def _op_map_field(params: dict[str, Any], items: Items) -> Items:
    field = params["field"]
    mapping = params["mapping"]
    out = []
    for it in items:
        current = _field_value(it, field)
        new = dict(it)
        if isinstance(new.get("payload"), dict) and field in new["payload"]:
            new["payload"] = dict(new["payload"])
            new["payload"][field] = mapping.get(current, current)
        else:
            new[field] = mapping.get(current, current)
        out.append(new)
    return out


def _op_partition(params: dict[str, Any], items: Items) -> Items:
    """Group by a key field, key groups ordered by first appearance,
    input order preserved within each group."""
    field = params["field"]
    groups: dict[Any, list] = {}
    for it in items:
        groups.setdefault(_field_value(it, field), []).append(it)
    return list(groups.values())


def _op_sample(params: dict[str, Any], items: Items) -> Items:
    n, seed = int(params["n"]), int(params["seed"])
    if n > len(items):
        raise TransformError(f"sample n={n} exceeds input size {len(items)}")
    rng = random.Random(seed)
    return rng.sample(items, n)


def _op_aggregate_majority(params: dict[str, Any], items: Items) -> Items:
    """Majority vote per unit over judgment dicts.

    Ties are broken by lexicographic label order and flagged on the output
    row, so downstream analysis can see where the crowd was split.
    """
    answer_field = params["answer_field"]
    by_unit: dict[str, dict[str, int]] = {}
    order: list[str] = []
    for it in items:
        uid = str(it.get("unit_id", it.get("id")))
        answer = str(_field_value(it, answer_field))
        if uid not in by_unit:
            by_unit[uid] = {}
            order.append(uid)
        by_unit[uid][answer] = by_unit[uid].get(answer, 0) + 1
    out = []
    for uid in order:
        votes = by_unit[uid]
        top = max(votes.values())
        winners = sorted(a for a, c in votes.items() if c == top)
        out.append(
            {
                "unit_id": uid,
                "answer": winners[0],
                "votes": dict(sorted(votes.items())),
                "tie": len(winners) > 1,
            }
        )
    return out


def _op_concat(params: dict[str, Any], items: Items) -> Items:
    # Fan-in concatenation happens when the engine gathers parent outputs
    # in edge-declaration order; by the time we run, items is already flat.
    return list(items)


register_transform("filter", _op_filter)
register_transform("map-field", _op_map_field)
register_transform("partition", _op_partition)
register_transform("sample", _op_sample)
register_transform("aggregate-majority", _op_aggregate_majority)
register_transform("concat", _op_concat)
