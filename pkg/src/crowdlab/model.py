"""Experiment workflow graphs: blocks, task templates, groups, and validation.

A workflow is a DAG. ``Do`` blocks publish a crowd task on a platform and
collect judgments; ``Lambda`` blocks apply a data transform between tasks.
Every Do block belongs to exactly one experiment group (condition), which is
what eligibility control and balanced assignment operate on.

Workflow files are strict, versioned JSON documents: unknown keys are
rejected so that typos in experiment configs surface at validation time
instead of silently skewing a deployment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

SCHEMA_VERSION = 1

UI_ELEMENT_KINDS = frozenset(
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
CHOICE_KINDS = frozenset({"single-choice", "multi-choice"})

TRANSFORM_OPS = frozenset(
    {"filter", "map-field", "partition", "sample", "aggregate-majority", "concat"}
)

DEFAULT_GROUP_ID = "default"


class WorkflowFormatError(ValueError):
    """Raised when a workflow document cannot even be parsed structurally."""


@dataclass(frozen=True)
class UiElement:
    """One widget of the task interface, bound to a unit field or a literal."""

    kind: str
    binding: str
    options: tuple[str, ...] = ()
    required: bool = True


@dataclass(frozen=True)
class Paging:
    units_per_page: int = 3
    gold_per_page: int = 1
    first_page_all_gold: bool = False
    max_pages: int = 6


@dataclass(frozen=True)
class TaskTemplate:
    title: str
    instructions: str
    elements: tuple[UiElement, ...]
    paging: Paging = field(default_factory=Paging)


@dataclass(frozen=True)
class ExperimentGroup:
    """An experimental condition. ``color_hint`` is display-only."""

    id: str
    label: str
    color_hint: str = ""
    kind: str = ""  # behavioral family of the condition, used by the simulator


@dataclass(frozen=True)
class TransformSpec:
    op: str
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class DoPayload:
    template: TaskTemplate
    platform: str
    reward_minor_units: int = 0
    votes_per_unit: int = 1
    group: str = DEFAULT_GROUP_ID


@dataclass(frozen=True)
class BlockDef:
    id: str
    kind: str  # "Do" | "Lambda"
    do: DoPayload | None = None
    transform: TransformSpec | None = None
    display: dict[str, float] | None = None  # optional x/y canvas hints


@dataclass(frozen=True)
class EligibilityPolicy:
    """Who may participate again, and in which condition.

    ``between-subjects`` with ``crossover="allow"`` is contradictory (a
    between-subjects design is defined by subjects not crossing conditions)
    and is rejected at validation.
    """

    design: str = "between-subjects"  # or "within-subjects"
    recurrence: str = "block-all-repeats"  # block-all-repeats | allow-same-condition | allow-all
    crossover: str = "block"  # block | allow
    message_on_block: str = "You have already participated in this experiment. Thank you!"


@dataclass(frozen=True)
class CountryBucket:
    head_country: str
    members: tuple[str, ...]


@dataclass(frozen=True)
class QuotaConfig:
    buckets: tuple[CountryBucket, ...]
    max_share_per_bucket: float = 1.0
    enforcement: str = "hard-block"  # hard-block | soft-rotate
    rest_max_share: float | None = None


@dataclass(frozen=True)
class ScheduleWindow:
    days: tuple[int, ...]  # 0=Monday .. 6=Sunday; empty = every day
    start_hour: int
    end_hour: int


@dataclass(frozen=True)
class Schedule:
    windows: tuple[ScheduleWindow, ...] = ()
    checkpoint_every_judgments: int = 0  # 0 disables count-based checkpoints
    checkpoint_every_seconds: int = 0  # 0 disables duration-based checkpoints
    spread_over_days: int = 0  # informational span; honored as configured
    balance_across_groups: bool = False


@dataclass(frozen=True)
class DataUnit:
    id: str
    payload: dict[str, Any]
    gold: dict[str, Any] | None = None  # {"expected-answer": ..., "explanation": ...}

    @property
    def is_gold(self) -> bool:
        return self.gold is not None


@dataclass(frozen=True)
class WorkflowDef:
    id: str
    name: str
    version: int
    blocks: tuple[BlockDef, ...]
    edges: tuple[tuple[str, str], ...]
    groups: tuple[ExperimentGroup, ...]
    policy: EligibilityPolicy = field(default_factory=EligibilityPolicy)
    schedule: Schedule | None = None
    quotas: QuotaConfig | None = None

    def block(self, block_id: str) -> BlockDef:
        for b in self.blocks:
            if b.id == block_id:
                return b
        raise KeyError(block_id)

    def do_blocks(self) -> list[BlockDef]:
        return [b for b in self.blocks if b.kind == "Do"]

    def group_of_block(self, block_id: str) -> str:
        b = self.block(block_id)
        if b.do is None:
            raise ValueError(f"block {block_id!r} is not a Do block")
        return b.do.group

    def parents(self, block_id: str) -> list[str]:
        """Inbound neighbors in edge-declaration order (fan-in order matters)."""
        return [u for (u, v) in self.edges if v == block_id]

    def children(self, block_id: str) -> list[str]:
        return [v for (u, v) in self.edges if u == block_id]


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_workflow(wf: WorkflowDef, unit_schema: set[str] | None = None) -> ValidationResult:
    """Collect every violation in the definition; never stops at the first.

    ``unit_schema`` is the set of field names available on the data units;
    element bindings are resolved against it when given.
    """
    violations: list[str] = []

    ids = [b.id for b in wf.blocks]
    seen: set[str] = set()
    for bid in ids:
        if bid in seen:
            violations.append(f"duplicate block id: {bid}")
        seen.add(bid)

    if wf.version < 1:
        violations.append(f"version must be >= 1, got {wf.version}")

    group_ids = [g.id for g in wf.groups]
    gseen: set[str] = set()
    for gid in group_ids:
        if gid in gseen:
            violations.append(f"duplicate group id: {gid}")
        gseen.add(gid)

    for u, v in wf.edges:
        for endpoint in (u, v):
            if endpoint not in seen:
                violations.append(f"edge endpoint does not exist: {endpoint}")

    cycle = _find_cycle(ids, [e for e in wf.edges if e[0] in seen and e[1] in seen])
    if cycle:
        violations.append("cycle: " + ",".join(cycle))

    for b in wf.blocks:
        violations.extend(_validate_block(b, gseen, unit_schema))

    if wf.policy.design == "between-subjects" and wf.policy.crossover == "allow":
        violations.append("policy contradiction: between-subjects design cannot allow crossover")
    if wf.policy.design not in ("between-subjects", "within-subjects"):
        violations.append(f"unknown design: {wf.policy.design}")
    if wf.policy.recurrence not in ("block-all-repeats", "allow-same-condition", "allow-all"):
        violations.append(f"unknown recurrence policy: {wf.policy.recurrence}")
    if wf.policy.crossover not in ("block", "allow"):
        violations.append(f"unknown crossover policy: {wf.policy.crossover}")

    if wf.schedule is not None:
        violations.extend(_validate_schedule(wf.schedule))
    if wf.quotas is not None:
        violations.extend(_validate_quotas(wf.quotas))

    return ValidationResult(tuple(violations))


def _validate_block(b: BlockDef, group_ids: set[str], unit_schema: set[str] | None) -> list[str]:
    out: list[str] = []
    if b.kind not in ("Do", "Lambda"):
        out.append(f"block {b.id}: unknown kind {b.kind!r}")
        return out
    if b.kind == "Do":
        if b.do is None or b.transform is not None:
            out.append(f"block {b.id}: Do block must carry exactly a Do payload")
            return out
        if b.do.votes_per_unit < 1:
            out.append(f"block {b.id}: votes-per-unit must be >= 1")
        if b.do.reward_minor_units < 0:
            out.append(f"block {b.id}: reward must be >= 0")
        if b.do.group not in group_ids:
            out.append(f"block {b.id}: unknown group {b.do.group!r}")
        out.extend(_validate_template(b.id, b.do.template, unit_schema))
    else:
        if b.transform is None or b.do is not None:
            out.append(f"block {b.id}: Lambda block must carry exactly a transform payload")
            return out
        out.extend(_validate_transform(b.id, b.transform))
    return out


def _validate_template(block_id: str, t: TaskTemplate, unit_schema: set[str] | None) -> list[str]:
    out: list[str] = []
    p = t.paging
    if p.gold_per_page > p.units_per_page:
        out.append(f"block {block_id}: gold-per-page exceeds units-per-page")
    if p.max_pages < 1:
        out.append(f"block {block_id}: max-pages must be >= 1")
    if p.units_per_page < 1:
        out.append(f"block {block_id}: units-per-page must be >= 1")
    for i, el in enumerate(t.elements):
        if el.kind not in UI_ELEMENT_KINDS:
            out.append(f"block {block_id}: element {i} has unknown kind {el.kind!r}")
            continue
        if el.kind in CHOICE_KINDS and len(el.options) < 2:
            out.append(f"block {block_id}: element {i} ({el.kind}) needs >= 2 options")
        if (
            unit_schema is not None
            and not el.binding.startswith("literal:")
            and el.binding not in unit_schema
        ):
            out.append(f"block {block_id}: element {i} has unresolved binding {el.binding!r}")
    return out


def _validate_transform(block_id: str, spec: TransformSpec) -> list[str]:
    out: list[str] = []
    if spec.op not in TRANSFORM_OPS:
        out.append(f"block {block_id}: unknown transform op {spec.op!r}")
        return out
    required = {
        "filter": {"field", "value"},
        "map-field": {"field", "mapping"},
        "partition": {"field"},
        "sample": {"n", "seed"},
        "aggregate-majority": {"answer_field"},
        "concat": set(),
    }[spec.op]
    missing = required - set(spec.parameters)
    if missing:
        out.append(
            f"block {block_id}: transform {spec.op} missing parameters: "
            + ", ".join(sorted(missing))
        )
    return out


def _validate_schedule(s: Schedule) -> list[str]:
    out: list[str] = []
    for i, w in enumerate(s.windows):
        if not (0 <= w.start_hour < 24 and 0 <= w.end_hour < 24):
            out.append(f"schedule window {i}: hours must be in [0, 24)")
        if w.start_hour == w.end_hour:
            out.append(f"schedule window {i}: start equals end")
        for d in w.days:
            if not 0 <= d <= 6:
                out.append(f"schedule window {i}: invalid day {d}")
    return out


def _validate_quotas(q: QuotaConfig) -> list[str]:
    out: list[str] = []
    if not (0 < q.max_share_per_bucket <= 1):
        out.append("quota max-share-per-bucket must be in (0, 1]")
    if q.enforcement not in ("hard-block", "soft-rotate"):
        out.append(f"unknown quota enforcement: {q.enforcement}")
    seen: set[str] = set()
    for b in q.buckets:
        if b.head_country not in b.members:
            out.append(f"quota bucket {b.head_country}: head country not in members")
        overlap = seen & set(b.members)
        if overlap:
            out.append("quota buckets overlap on: " + ", ".join(sorted(overlap)))
        seen |= set(b.members)
    return out


def _find_cycle(node_ids: list[str], edges: list[tuple[str, str]]) -> list[str] | None:
    """Kahn's algorithm; returns the nodes stuck in a cycle (sorted) or None."""
    indegree = {n: 0 for n in node_ids}
    children: dict[str, list[str]] = {n: [] for n in node_ids}
    for u, v in edges:
        children[u].append(v)
        indegree[v] += 1
    ready = sorted(n for n in node_ids if indegree[n] == 0)
    done = 0
    while ready:
        n = ready.pop(0)
        done += 1
        for c in children[n]:
            indegree[c] -= 1
            if indegree[c] == 0:
                ready.append(c)
        ready.sort()
    if done == len(node_ids):
        return None
    return sorted(n for n in node_ids if indegree[n] > 0)


def topological_order(wf: WorkflowDef) -> list[str]:
    """Deterministic topological order; ties broken lexicographically by id.

    The engine replays runs from the definition, so this order must be a
    pure function of the graph.
    """
    ids = [b.id for b in wf.blocks]
    indegree = {n: 0 for n in ids}
    children: dict[str, list[str]] = {n: [] for n in ids}
    for u, v in wf.edges:
        children[u].append(v)
        indegree[v] += 1
    import heapq

    ready = [n for n in ids if indegree[n] == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for c in children[n]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(ids):
        raise ValueError("workflow contains a cycle")
    return order


def expand_factorial(
    factors: list[tuple[str, list[str]]],
    template: TaskTemplate,
    group_naming: str = "{levels}",
    platform: str = "sim",
    votes_per_unit: int = 3,
    reward_minor_units: int = 0,
) -> tuple[list[BlockDef], list[ExperimentGroup]]:
    """Expand a factorial design into one Do block per level combination.

    ``group_naming`` may reference ``{levels}`` (dash-joined level tuple) or
    any factor by name, e.g. ``"{dataset}-{size}-{condition}"``. Returns the
    blocks plus the matching group list; block and group count equals the
    product of level counts.
    """
    if not factors:
        raise ValueError("no factors")
    for name, levels in factors:
        if not levels:
            raise ValueError(f"factor {name!r} has no levels")

    combos: list[list[tuple[str, str]]] = [[]]
    for name, levels in factors:
        combos = [combo + [(name, level)] for combo in combos for level in levels]

    blocks: list[BlockDef] = []
    groups: list[ExperimentGroup] = []
    for combo in combos:
        values = {name: level for name, level in combo}
        values["levels"] = "-".join(level for _, level in combo)
        gid = group_naming.format(**values)
        groups.append(ExperimentGroup(id=gid, label=gid))
        blocks.append(
            BlockDef(
                id=f"do-{gid}",
                kind="Do",
                do=DoPayload(
                    template=template,
                    platform=platform,
                    reward_minor_units=reward_minor_units,
                    votes_per_unit=votes_per_unit,
                    group=gid,
                ),
            )
        )
    return blocks, groups


# --------------------------------------------------------------------------
# JSON document format (strict)
# --------------------------------------------------------------------------

def _reject_unknown(obj: dict[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise WorkflowFormatError(f"{where}: unknown fields: {', '.join(sorted(unknown))}")


def workflow_to_dict(wf: WorkflowDef) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schemaVersion": SCHEMA_VERSION,
        "id": wf.id,
        "name": wf.name,
        "version": wf.version,
        "blocks": [_block_to_dict(b) for b in wf.blocks],
        "edges": [{"from": u, "to": v} for u, v in wf.edges],
        "groups": [
            {"id": g.id, "label": g.label, "colorHint": g.color_hint, "kind": g.kind}
            for g in wf.groups
        ],
        "policy": {
            "design": wf.policy.design,
            "recurrence": wf.policy.recurrence,
            "crossover": wf.policy.crossover,
            "messageOnBlock": wf.policy.message_on_block,
        },
    }
    if wf.schedule is not None:
        doc["schedule"] = {
            "windows": [
                {"days": list(w.days), "startHour": w.start_hour, "endHour": w.end_hour}
                for w in wf.schedule.windows
            ],
            "checkpointEveryJudgments": wf.schedule.checkpoint_every_judgments,
            "checkpointEverySeconds": wf.schedule.checkpoint_every_seconds,
            "spreadOverDays": wf.schedule.spread_over_days,
            "balanceAcrossGroups": wf.schedule.balance_across_groups,
        }
    if wf.quotas is not None:
        doc["quotas"] = {
            "buckets": [
                {"headCountry": b.head_country, "members": list(b.members)}
                for b in wf.quotas.buckets
            ],
            "maxSharePerBucket": wf.quotas.max_share_per_bucket,
            "enforcement": wf.quotas.enforcement,
            "restMaxShare": wf.quotas.rest_max_share,
        }
    return doc


def _block_to_dict(b: BlockDef) -> dict[str, Any]:
    d: dict[str, Any] = {"id": b.id, "kind": b.kind}
    if b.do is not None:
        t = b.do.template
        d["do"] = {
            "template": {
                "title": t.title,
                "instructions": t.instructions,
                "elements": [
                    {
                        "kind": el.kind,
                        "binding": el.binding,
                        "options": list(el.options),
                        "required": el.required,
                    }
                    for el in t.elements
                ],
                "paging": {
                    "unitsPerPage": t.paging.units_per_page,
                    "goldPerPage": t.paging.gold_per_page,
                    "firstPageAllGold": t.paging.first_page_all_gold,
                    "maxPages": t.paging.max_pages,
                },
            },
            "platform": b.do.platform,
            "rewardMinorUnits": b.do.reward_minor_units,
            "votesPerUnit": b.do.votes_per_unit,
            "group": b.do.group,
        }
    if b.transform is not None:
        d["transform"] = {"op": b.transform.op, "parameters": b.transform.parameters}
    if b.display is not None:
        d["display"] = b.display
    return d


def workflow_from_dict(doc: dict[str, Any]) -> WorkflowDef:
    if not isinstance(doc, dict):
        raise WorkflowFormatError("workflow document must be a JSON object")
    _reject_unknown(
        doc,
        {
            "schemaVersion",
            "id",
            "name",
            "version",
            "blocks",
            "edges",
            "groups",
            "policy",
            "schedule",
            "quotas",
        },
        "workflow",
    )
    if doc.get("schemaVersion") != SCHEMA_VERSION:
        raise WorkflowFormatError(
            f"unsupported schemaVersion: {doc.get('schemaVersion')!r} (expected {SCHEMA_VERSION})"
        )
    for req in ("name", "blocks", "edges", "groups"):
        if req not in doc:
            raise WorkflowFormatError(f"workflow: missing required field {req!r}")

    blocks = tuple(_block_from_dict(b) for b in doc["blocks"])
    edges = []
    for e in doc["edges"]:
        _reject_unknown(e, {"from", "to"}, "edge")
        edges.append((str(e["from"]), str(e["to"])))
    groups = []
    for g in doc["groups"]:
        _reject_unknown(g, {"id", "label", "colorHint", "kind"}, "group")
        groups.append(
            ExperimentGroup(
                id=str(g["id"]),
                label=str(g.get("label", g["id"])),
                color_hint=str(g.get("colorHint", "")),
                kind=str(g.get("kind", "")),
            )
        )

    policy = EligibilityPolicy()
    if "policy" in doc and doc["policy"] is not None:
        p = doc["policy"]
        _reject_unknown(p, {"design", "recurrence", "crossover", "messageOnBlock"}, "policy")
        policy = EligibilityPolicy(
            design=p.get("design", policy.design),
            recurrence=p.get("recurrence", policy.recurrence),
            crossover=p.get("crossover", policy.crossover),
            message_on_block=p.get("messageOnBlock", policy.message_on_block),
        )

    schedule = None
    if doc.get("schedule") is not None:
        s = doc["schedule"]
        _reject_unknown(
            s,
            {
                "windows",
                "checkpointEveryJudgments",
                "checkpointEverySeconds",
                "spreadOverDays",
                "balanceAcrossGroups",
            },
            "schedule",
        )
        windows = []
        for w in s.get("windows", []):
            _reject_unknown(w, {"days", "startHour", "endHour"}, "schedule window")
            windows.append(
                ScheduleWindow(
                    days=tuple(int(d) for d in w.get("days", [])),
                    start_hour=int(w["startHour"]),
                    end_hour=int(w["endHour"]),
                )
            )
        schedule = Schedule(
            windows=tuple(windows),
            checkpoint_every_judgments=int(s.get("checkpointEveryJudgments", 0)),
            checkpoint_every_seconds=int(s.get("checkpointEverySeconds", 0)),
            spread_over_days=int(s.get("spreadOverDays", 0)),
            balance_across_groups=bool(s.get("balanceAcrossGroups", False)),
        )

    quotas = None
    if doc.get("quotas") is not None:
        q = doc["quotas"]
        _reject_unknown(
            q, {"buckets", "maxSharePerBucket", "enforcement", "restMaxShare"}, "quotas"
        )
        buckets = []
        for b in q.get("buckets", []):
            _reject_unknown(b, {"headCountry", "members"}, "quota bucket")
            buckets.append(
                CountryBucket(
                    head_country=str(b["headCountry"]),
                    members=tuple(str(m) for m in b["members"]),
                )
            )
        quotas = QuotaConfig(
            buckets=tuple(buckets),
            max_share_per_bucket=float(q.get("maxSharePerBucket", 1.0)),
            enforcement=str(q.get("enforcement", "hard-block")),
            rest_max_share=(
                None if q.get("restMaxShare") is None else float(q["restMaxShare"])
            ),
        )

    # single-condition workflows may omit groups entirely; the default group
    # is auto-created so eligibility logic never special-cases groupless runs
    group_ids = {g.id for g in groups}
    needs_default = any(
        b.do is not None and b.do.group == DEFAULT_GROUP_ID for b in blocks
    )
    if needs_default and DEFAULT_GROUP_ID not in group_ids:
        groups.append(ExperimentGroup(id=DEFAULT_GROUP_ID, label=DEFAULT_GROUP_ID))

    return WorkflowDef(
        id=str(doc.get("id", doc["name"])),
        name=str(doc["name"]),
        version=int(doc.get("version", 1)),
        blocks=blocks,
        edges=tuple(edges),
        groups=tuple(groups),
        policy=policy,
        schedule=schedule,
        quotas=quotas,
    )


def _block_from_dict(d: dict[str, Any]) -> BlockDef:
    _reject_unknown(d, {"id", "kind", "do", "transform", "display"}, "block")
    do = None
    transform = None
    if d.get("do") is not None:
        p = d["do"]
        _reject_unknown(
            p, {"template", "platform", "rewardMinorUnits", "votesPerUnit", "group"}, "do payload"
        )
        t = p["template"]
        _reject_unknown(t, {"title", "instructions", "elements", "paging"}, "template")
        elements = []
        for el in t.get("elements", []):
            _reject_unknown(el, {"kind", "binding", "options", "required"}, "element")
            elements.append(
                UiElement(
                    kind=str(el["kind"]),
                    binding=str(el["binding"]),
                    options=tuple(str(o) for o in el.get("options", [])),
                    required=bool(el.get("required", True)),
                )
            )
        paging = Paging()
        if t.get("paging") is not None:
            pg = t["paging"]
            _reject_unknown(
                pg, {"unitsPerPage", "goldPerPage", "firstPageAllGold", "maxPages"}, "paging"
            )
            paging = Paging(
                units_per_page=int(pg.get("unitsPerPage", 3)),
                gold_per_page=int(pg.get("goldPerPage", 1)),
                first_page_all_gold=bool(pg.get("firstPageAllGold", False)),
                max_pages=int(pg.get("maxPages", 6)),
            )
        do = DoPayload(
            template=TaskTemplate(
                title=str(t.get("title", "")),
                instructions=str(t.get("instructions", "")),
                elements=tuple(elements),
                paging=paging,
            ),
            platform=str(p.get("platform", "sim")),
            reward_minor_units=int(p.get("rewardMinorUnits", 0)),
            votes_per_unit=int(p.get("votesPerUnit", 1)),
            group=str(p.get("group", DEFAULT_GROUP_ID)),
        )
    if d.get("transform") is not None:
        tr = d["transform"]
        _reject_unknown(tr, {"op", "parameters"}, "transform")
        transform = TransformSpec(op=str(tr["op"]), parameters=dict(tr.get("parameters", {})))
    return BlockDef(
        id=str(d["id"]),
        kind=str(d["kind"]),
        do=do,
        transform=transform,
        display=d.get("display"),
    )


def dump_workflow(wf: WorkflowDef) -> str:
    return json.dumps(workflow_to_dict(wf), indent=2, sort_keys=True)


def load_workflow(text: str) -> WorkflowDef:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorkflowFormatError(f"invalid JSON: {exc}") from exc
    return workflow_from_dict(doc)


def unit_to_dict(u: DataUnit) -> dict[str, Any]:
    d: dict[str, Any] = {"id": u.id, "payload": u.payload}
    if u.gold is not None:
        d["gold"] = u.gold
    return d


def unit_from_dict(d: dict[str, Any]) -> DataUnit:
    _reject_unknown(d, {"id", "payload", "gold"}, "unit")
    payload = dict(d.get("payload", {}))
    if not payload:
        raise WorkflowFormatError(f"unit {d.get('id')!r}: payload must be non-empty")
    return DataUnit(id=str(d["id"]), payload=payload, gold=d.get("gold"))


def load_units(text: str) -> list[DataUnit]:
    doc = json.loads(text)
    if not isinstance(doc, list):
        raise WorkflowFormatError("units file must be a JSON array")
    return [unit_from_dict(u) for u in doc]


def dump_units(units: list[DataUnit]) -> str:
    return json.dumps([unit_to_dict(u) for u in units], indent=2, sort_keys=True)
