from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from crowdlab.model import (
    EligibilityPolicy,
    ExperimentGroup,
    WorkflowDef,
    WorkflowFormatError,
    dump_workflow,
    expand_factorial,
    load_workflow,
    topological_order,
    validate_workflow,
)
from conftest import choice_template, do_block, lambda_block, simple_workflow


def wf_of(blocks, edges, groups=("A",), policy=None):
    return WorkflowDef(
        id="wf-t",
        name="t",
        version=1,
        blocks=tuple(blocks),
        edges=tuple(edges),
        groups=tuple(ExperimentGroup(id=g, label=g) for g in groups),
        policy=policy or EligibilityPolicy(),
    )


class TestValidate:
    def test_minimal_legal_graph(self):
        wf = wf_of(
            [do_block("a", "A"), lambda_block("b", "concat")],
            [("a", "b")],
        )
        assert validate_workflow(wf, {"text", "size"}).ok

    def test_smallest_cycle_reported(self):
        wf = wf_of([lambda_block("A", "concat"), lambda_block("B", "concat")], [("A", "B"), ("B", "A")])
        result = validate_workflow(wf)
        assert not result.ok
        assert any(v == "cycle: A,B" for v in result.violations)

    def test_unresolved_binding(self):
        wf = wf_of([do_block("a", "A")], [])
        # valid against the real schema...
        assert validate_workflow(wf, {"text"}).ok
        # ...broken against a schema with the typo'd field missing
        result = validate_workflow(wf, {"abstrct"})
        assert any("unresolved binding" in v for v in result.violations)

    def test_collects_all_violations(self):
        wf = wf_of(
            [do_block("a", "NOPE"), do_block("a", "A"), lambda_block("c", "concat")],
            [("a", "missing"), ("c", "a"), ("a", "c")],
        )
        result = validate_workflow(wf)
        assert len(result.violations) >= 3

    def test_between_subjects_crossover_contradiction(self):
        wf = simple_workflow(policy=EligibilityPolicy(design="between-subjects", crossover="allow"))
        result = validate_workflow(wf)
        assert any("contradiction" in v for v in result.violations)

    def test_votes_and_reward_bounds(self):
        bad = do_block("a", "A", votes=0)
        wf = wf_of([bad], [])
        assert any("votes-per-unit" in v for v in validate_workflow(wf).violations)


class TestTopologicalOrder:
    def test_chain(self):
        wf = wf_of(
            [lambda_block(x, "concat") for x in "ABC"],
            [("A", "B"), ("B", "C")],
        )
        assert topological_order(wf) == ["A", "B", "C"]

    def test_diamond_with_tie_rule(self):
        wf = wf_of(
            [lambda_block(x, "concat") for x in "ABCD"],
            [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")],
        )
        assert topological_order(wf) == ["A", "B", "C", "D"]

    def test_single_node(self):
        wf = wf_of([lambda_block("only", "concat")], [])
        assert topological_order(wf) == ["only"]

    def test_ties_lexicographic(self):
        wf = wf_of([lambda_block(x, "concat") for x in ("z", "m", "a")], [])
        assert topological_order(wf) == ["a", "m", "z"]


class TestExpandFactorial:
    def test_paper_design_expands_to_54(self):
        factors = [
            ("dataset", ["slr1", "slr2", "amazon"]),
            ("size", ["short", "medium", "long"]),
            ("condition", ["baseline", "h000", "h033", "h066", "h100", "aggr"]),
        ]
        blocks, groups = expand_factorial(factors, choice_template())
        assert len(blocks) == 54
        assert len({g.id for g in groups}) == 54
        assert all(b.kind == "Do" for b in blocks)

    def test_single_factor_single_level(self):
        blocks, groups = expand_factorial([("only", ["x"])], choice_template())
        assert len(blocks) == 1

    def test_two_by_three_distinct_groups(self):
        blocks, _ = expand_factorial([("a", ["1", "2"]), ("b", ["x", "y", "z"])], choice_template())
        assert len(blocks) == 6
        group_ids = {b.do.group for b in blocks}
        assert group_ids == {"1-x", "1-y", "1-z", "2-x", "2-y", "2-z"}

    def test_no_factors_rejected(self):
        with pytest.raises(ValueError, match="no factors"):
            expand_factorial([], choice_template())

    @given(counts=st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_size_is_product_and_groups_distinct(self, counts):
        factors = [
            (f"f{i}", [f"v{i}_{j}" for j in range(n)]) for i, n in enumerate(counts)
        ]
        blocks, groups = expand_factorial(factors, choice_template())
        expected = 1
        for n in counts:
            expected *= n
        assert len(blocks) == expected
        assert len({g.id for g in groups}) == expected


# -- random DAG property: validation accepts iff a topological order exists ------


@st.composite
def random_graph(draw):
    n = draw(st.integers(min_value=1, max_value=8))
    ids = [f"n{i}" for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(n):
            if i != j and draw(st.booleans()) and draw(st.integers(0, 3)) == 0:
                edges.append((ids[i], ids[j]))
    return ids, edges


@given(random_graph())
@settings(max_examples=60, deadline=None)
def test_random_graph_valid_iff_acyclic(graph):
    ids, edges = graph
    wf = wf_of([lambda_block(i, "concat") for i in ids], edges)
    result = validate_workflow(wf)
    try:
        order = topological_order(wf)
        has_order = True
        position = {b: i for i, b in enumerate(order)}
        assert all(position[u] < position[v] for u, v in edges)
    except ValueError:
        has_order = False
    assert result.ok == has_order


# -- serialization ------------------------------------------------------------


def test_round_trip_preserves_structure():
    from crowdlab.workloads import screening_experiment, two_window_schedule

    wf = screening_experiment(schedule=two_window_schedule())
    again = load_workflow(dump_workflow(wf))
    assert again == wf


def test_unknown_fields_rejected():
    from crowdlab.workloads import screening_experiment
    import json

    doc = json.loads(dump_workflow(screening_experiment()))
    doc["surprise"] = 1
    with pytest.raises(WorkflowFormatError, match="unknown fields"):
        load_workflow(json.dumps(doc))

    doc.pop("surprise")
    doc["blocks"][0]["typo"] = True
    with pytest.raises(WorkflowFormatError, match="unknown fields"):
        load_workflow(json.dumps(doc))


def test_wrong_schema_version_rejected():
    from crowdlab.workloads import screening_experiment
    import json

    doc = json.loads(dump_workflow(screening_experiment()))
    doc["schemaVersion"] = 99
    with pytest.raises(WorkflowFormatError, match="schemaVersion"):
        load_workflow(json.dumps(doc))


def test_single_condition_workflow_auto_creates_default_group():
    import json

    doc = {
        "schemaVersion": 1,
        "name": "one-condition",
        "blocks": [
            {
                "id": "only",
                "kind": "Do",
                "do": {
                    "template": {
                        "title": "t",
                        "instructions": "i",
                        "elements": [
                            {"kind": "single-choice", "binding": "text", "options": ["a", "b"]}
                        ],
                    },
                    "platform": "sim",
                    "votesPerUnit": 1,
                },
            }
        ],
        "edges": [],
        "groups": [],
    }
    wf = load_workflow(json.dumps(doc))
    assert [g.id for g in wf.groups] == ["default"]
    assert wf.blocks[0].do.group == "default"
    assert validate_workflow(wf, {"text"}).ok


def test_documented_example_workflow_is_valid():
    from pathlib import Path

    text = Path(__file__).resolve().parent.parent.joinpath("docs", "example-workflow.json").read_text()
    wf = load_workflow(text)
    assert len(wf.blocks) == 6
    assert wf.policy.design == "between-subjects"
    assert validate_workflow(wf, {"text", "size"}).ok
    assert load_workflow(dump_workflow(wf)) == wf
