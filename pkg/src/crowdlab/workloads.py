"""Canonical experiment workloads used by the CLI demo and the test suite.

The reference workload is a document-screening study: workers judge whether
a text is relevant, under six interface conditions (a no-highlight baseline
plus highlight variants of varying quality), with tasks organized in pages
that embed gold questions for quality control.
"""

from __future__ import annotations

from .model import (
    BlockDef,
    CountryBucket,
    DataUnit,
    DoPayload,
    EligibilityPolicy,
    ExperimentGroup,
    Paging,
    QuotaConfig,
    Schedule,
    ScheduleWindow,
    TaskTemplate,
    UiElement,
    WorkflowDef,
)

# condition id -> behavioral kind for the simulator's crossover model
CONDITIONS: dict[str, str] = {
    "baseline": "base",
    "h000": "bad",
    "h033": "bad",
    "h066": "good",
    "h100": "good",
    "aggr": "good",
}

ANSWER_OPTIONS = ("in", "out")

SIZES = ("short", "medium", "long")


def screening_template(highlight: bool = False, max_pages: int = 6) -> TaskTemplate:
    text_kind = "highlightable-text" if highlight else "text"
    return TaskTemplate(
        title="Document screening",
        instructions="Read each document and decide whether it is relevant.",
        elements=(
            UiElement(kind=text_kind, binding="text"),
            UiElement(kind="single-choice", binding="text", options=ANSWER_OPTIONS),
        ),
        paging=Paging(units_per_page=3, gold_per_page=1, first_page_all_gold=True, max_pages=max_pages),
    )


def screening_units(n_plain: int = 480, n_gold: int = 36) -> list[DataUnit]:
    units: list[DataUnit] = []
    for i in range(n_plain):
        size = SIZES[i % len(SIZES)]
        units.append(
            DataUnit(
                id=f"u{i:04d}",
                payload={"doc_id": f"doc-{i:04d}", "text": f"document body {i}", "size": size},
            )
        )
    for i in range(n_gold):
        expected = ANSWER_OPTIONS[i % 2]
        units.append(
            DataUnit(
                id=f"g{i:04d}",
                payload={"doc_id": f"gold-{i:04d}", "text": f"gold body {i}", "size": SIZES[i % 3]},
                gold={"expected-answer": expected, "explanation": "screening control item"},
            )
        )
    return units


def default_quota() -> QuotaConfig:
    return QuotaConfig(
        buckets=(
            CountryBucket(head_country="VE", members=("VE",)),
            CountryBucket(head_country="EG", members=("EG",)),
            CountryBucket(head_country="UA", members=("UA",)),
        ),
        max_share_per_bucket=0.15,
        enforcement="hard-block",
    )


def screening_experiment(
    conditions: dict[str, str] | None = None,
    votes_per_unit: int = 3,
    policy: EligibilityPolicy | None = None,
    schedule: Schedule | None = None,
    quotas: QuotaConfig | None = None,
    name: str = "screening-study",
) -> WorkflowDef:
    """One Do block per condition, all fed the same unit set."""
    conditions = conditions or CONDITIONS
    groups = tuple(
        ExperimentGroup(id=cid, label=cid, kind=kind) for cid, kind in conditions.items()
    )
    blocks = tuple(
        BlockDef(
            id=f"do-{cid}",
            kind="Do",
            do=DoPayload(
                template=screening_template(highlight=(kind != "base")),
                platform="sim",
                reward_minor_units=4,
                votes_per_unit=votes_per_unit,
                group=cid,
            ),
        )
        for cid, kind in conditions.items()
    )
    return WorkflowDef(
        id=name,
        name=name,
        version=1,
        blocks=blocks,
        edges=(),
        groups=groups,
        policy=policy or EligibilityPolicy(),
        schedule=schedule,
        quotas=quotas if quotas is not None else default_quota(),
    )


def two_window_schedule(balance: bool = True) -> Schedule:
    """Opposite 4-hour UTC windows, for diurnal-coverage experiments."""
    return Schedule(
        windows=(
            ScheduleWindow(days=(), start_hour=2, end_hour=6),
            ScheduleWindow(days=(), start_hour=14, end_hour=18),
        ),
        checkpoint_every_judgments=200,
        balance_across_groups=balance,
    )


def pipeline_workflow(
    name: str = "screening-pipeline",
    votes_per_unit: int = 1,
    sample_n: int = 9,
) -> WorkflowDef:
    """A 10-block pipeline: sample, partition by size into three parallel Do
    blocks plus one full-sample Do block, aggregate, merge, filter.
    Exercises fan-out over partitions and fan-in concatenation."""
    from .model import TransformSpec

    conditions = {"baseline": "base", "h100": "good"}
    groups = tuple(
        ExperimentGroup(id=cid, label=cid, kind=kind) for cid, kind in conditions.items()
    )

    def do_block(block_id: str, condition: str) -> BlockDef:
        kind = conditions[condition]
        return BlockDef(
            id=block_id,
            kind="Do",
            do=DoPayload(
                template=screening_template(highlight=(kind != "base"), max_pages=12),
                platform="sim",
                votes_per_unit=votes_per_unit,
                group=condition,
            ),
        )

    blocks = (
        BlockDef(
            id="sample",
            kind="Lambda",
            transform=TransformSpec(op="sample", parameters={"n": sample_n, "seed": 11}),
        ),
        BlockDef(
            id="split",
            kind="Lambda",
            transform=TransformSpec(op="partition", parameters={"field": "size"}),
        ),
        do_block("do-short", "baseline"),
        do_block("do-medium", "h100"),
        do_block("do-long", "baseline"),
        do_block("do-all", "h100"),
        BlockDef(
            id="agg-a",
            kind="Lambda",
            transform=TransformSpec(op="aggregate-majority", parameters={"answer_field": "answer"}),
        ),
        BlockDef(
            id="agg-b",
            kind="Lambda",
            transform=TransformSpec(op="aggregate-majority", parameters={"answer_field": "answer"}),
        ),
        BlockDef(id="merge", kind="Lambda", transform=TransformSpec(op="concat", parameters={})),
        BlockDef(
            id="keep-final",
            kind="Lambda",
            transform=TransformSpec(op="filter", parameters={"field": "tie", "value": False}),
        ),
    )
    edges = (
        ("sample", "split"),
        ("split", "do-short"),
        ("split", "do-medium"),
        ("split", "do-long"),
        ("sample", "do-all"),
        ("do-short", "agg-a"),
        ("do-medium", "agg-a"),
        ("do-long", "agg-b"),
        ("do-all", "agg-b"),
        ("agg-a", "merge"),
        ("agg-b", "merge"),
        ("merge", "keep-final"),
    )
    return WorkflowDef(
        id=name,
        name=name,
        version=1,
        blocks=blocks,
        edges=edges,
        groups=groups,
        policy=EligibilityPolicy(
            recurrence="allow-all", crossover="allow", design="within-subjects"
        ),
        quotas=None,
    )
