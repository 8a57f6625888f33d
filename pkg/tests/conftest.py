from __future__ import annotations

import pytest

ACCEPTANCE_LABELS = {
    "test_factorial_expansion": "factorial expansion (54 configurations, <1s)",
    "test_crash_and_rerun": "crash-and-rerun (100 crash points, exactly-once publish)",
    "test_eligibility_soundness": "eligibility soundness (0 returning; 0.38/0.30 uncontrolled)",
    "test_dominance_and_quotas": "dominance 0.48 and hard-block quota bound",
    "test_discard_estimate": "discard estimate 0.38 under drop-returning",
    "test_behavioral_cohort_directions": "cohort z directions and accuracy independence",
    "test_assignment_balance": "assignment balance (prefix max-min <= 1 over 10k)",
    "test_scheduler_gating": "scheduler gating and window balancing",
    "test_concurrency": "concurrent eligibility single-proceed (100x50)",
    "test_analysis_oracle": "robust z against independent oracle (1e-9)",
}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1].split("[")[0]
    label = ACCEPTANCE_LABELS.get(name, name)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"\n[ACCEPTANCE] {verdict}: {label}", flush=True)


from crowdlab.model import (
    BlockDef,
    DataUnit,
    DoPayload,
    EligibilityPolicy,
    ExperimentGroup,
    Paging,
    TaskTemplate,
    TransformSpec,
    UiElement,
    WorkflowDef,
)


def choice_template(max_pages: int = 6, first_page_all_gold: bool = False) -> TaskTemplate:
    return TaskTemplate(
        title="Classify",
        instructions="Pick the right label.",
        elements=(
            UiElement(kind="text", binding="text"),
            UiElement(kind="single-choice", binding="text", options=("in", "out")),
        ),
        paging=Paging(
            units_per_page=3,
            gold_per_page=1,
            first_page_all_gold=first_page_all_gold,
            max_pages=max_pages,
        ),
    )


def make_units(n_plain: int = 6, n_gold: int = 2) -> list[DataUnit]:
    units = [
        DataUnit(id=f"u{i}", payload={"text": f"body {i}", "size": ["short", "medium", "long"][i % 3]})
        for i in range(n_plain)
    ]
    units += [
        DataUnit(
            id=f"g{i}",
            payload={"text": f"gold {i}", "size": "short"},
            gold={"expected-answer": ["in", "out"][i % 2]},
        )
        for i in range(n_gold)
    ]
    return units


def do_block(block_id: str, group: str, votes: int = 1, platform: str = "sim") -> BlockDef:
    return BlockDef(
        id=block_id,
        kind="Do",
        do=DoPayload(template=choice_template(), platform=platform, votes_per_unit=votes, group=group),
    )


def lambda_block(block_id: str, op: str, **params) -> BlockDef:
    return BlockDef(id=block_id, kind="Lambda", transform=TransformSpec(op=op, parameters=params))


def simple_workflow(
    policy: EligibilityPolicy | None = None,
    groups: tuple[str, ...] = ("A", "B"),
    votes: int = 1,
) -> WorkflowDef:
    return WorkflowDef(
        id="wf-simple",
        name="simple",
        version=1,
        blocks=tuple(do_block(f"do-{g}", g, votes=votes) for g in groups),
        edges=(),
        groups=tuple(ExperimentGroup(id=g, label=g) for g in groups),
        policy=policy or EligibilityPolicy(),
    )


@pytest.fixture
def units():
    return make_units()
