from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from searchstream import (
    BudgetSpec,
    MalformedLine,
    Problem,
    budget_used,
    emit_event,
    emit_trajectory,
    make_prompt,
    parse_line,
    parse_trajectory,
    rebuild_tree,
    verify,
)
from searchstream.countdown import OpSpec
from searchstream.trajectory import (
    ROOT_INDEX,
    TERMINAL_GOAL,
    TERMINAL_NO_SOLUTION,
    TERMINAL_TRUNCATED,
    CurrentState,
    ExploringOperation,
    GeneratedNode,
    MovingToNode,
    NoSolutionFound,
    VerifyFail,
    VerifySuccess,
    line_cost,
    truncate_to_budget,
)

from samples import (
    BFS_LEAF_WALK,
    BFS_LEAF_WALK_PROBLEM,
    MISALIGNED_SPLICE,
    MISALIGNED_SPLICE_PROBLEM,
    SEARCH_SUCCESS,
    SEARCH_SUCCESS_PROBLEM,
)


def test_parse_emit_round_trip_on_fixtures():
    for text in (SEARCH_SUCCESS, BFS_LEAF_WALK, MISALIGNED_SPLICE):
        trajectory = parse_trajectory(text)
        assert trajectory.text == text
        assert emit_trajectory(trajectory.events) == text


def test_fixture_terminals():
    assert parse_trajectory(SEARCH_SUCCESS).terminal == TERMINAL_GOAL
    assert parse_trajectory(BFS_LEAF_WALK).terminal == TERMINAL_NO_SOLUTION
    assert parse_trajectory(MISALIGNED_SPLICE).terminal == TERMINAL_GOAL


def test_parse_line_each_kind():
    assert parse_line("Current State: 25:[56, 58, 15, 8], Operations: []") == CurrentState(
        25, (56, 58, 15, 8), ()
    )
    assert parse_line(
        "Current State: 22:[5, 20], Operations: ['66-61=5', '35-15=20']"
    ) == CurrentState(22, (5, 20), ("66-61=5", "35-15=20"))
    assert parse_line(
        "Exploring Operation: 56+58=114, Resulting Numbers: [15, 8, 114]"
    ) == ExploringOperation(OpSpec(56, "+", 58, 114), (15, 8, 114))
    assert parse_line(
        "Generated Node #0,0: 25:[15, 8, 114] Operation: 56+58=114"
    ) == GeneratedNode((0, 0), 25, (15, 8, 114), OpSpec(56, "+", 58, 114))
    assert parse_line("Moving to Node #0,0,1") == MovingToNode((0, 0, 1))
    assert parse_line("7,25 unequal: No Solution") == VerifyFail(7, 25)
    assert parse_line("25,25 equal: Goal Reached") == VerifySuccess(25, 25)
    assert parse_line("No solution found.") == NoSolutionFound()


@pytest.mark.parametrize(
    "line",
    [
        "",
        "Current State: [56, 58], Operations: []",
        "Current State: 25:[56, 58] Operations: []",
        "Exploring Operation: 56+58, Resulting Numbers: [114]",
        "Generated Node 0,0: 25:[114] Operation: 56+58=114",
        "Generated Node #0,0: 25:[114], Operation: 56+58=114",
        "Moving to Node 0,0",
        "7 25 unequal: No Solution",
        "we are done now",
    ],
)
def test_parse_line_rejects(line):
    with pytest.raises(MalformedLine):
        parse_line(line, line_no=7)
    try:
        parse_line(line, line_no=7)
    except MalformedLine as exc:
        assert exc.line_no == 7


def test_emit_parse_inverse_per_line():
    for line in SEARCH_SUCCESS.split("\n"):
        assert emit_event(parse_line(line)) == line


def test_lenient_parse_truncates_at_garbage():
    text = SEARCH_SUCCESS.split("\n")
    cut = 10
    broken = "\n".join(text[:cut] + ["!!! interference !!!"] + text[cut:])
    with pytest.raises(MalformedLine) as exc_info:
        parse_trajectory(broken)
    assert exc_info.value.line_no == cut + 1
    lenient = parse_trajectory(broken, strict=False)
    assert len(lenient.events) == cut
    assert lenient.terminal == TERMINAL_TRUNCATED
    assert lenient.text == "\n".join(text[:cut])


def test_first_line_must_be_state_even_lenient():
    with pytest.raises(MalformedLine):
        parse_trajectory("Moving to Node #0,0", strict=False)
    with pytest.raises(MalformedLine):
        parse_trajectory("", strict=False)


def test_verify_search_success_fixture():
    trajectory = parse_trajectory(SEARCH_SUCCESS)
    correct, diagnostics = verify(trajectory, SEARCH_SUCCESS_PROBLEM)
    assert correct == 1
    assert diagnostics == []


def test_verify_bfs_leaf_walk_fixture():
    # The legacy searcher materializes leaves as nodes; that is structurally
    # tolerated, but giving up with untried operations everywhere is not a
    # valid no-solution claim.
    trajectory = parse_trajectory(BFS_LEAF_WALK)
    correct, diagnostics = verify(trajectory, BFS_LEAF_WALK_PROBLEM)
    assert correct == 0
    assert diagnostics == ["line 14: NoSolutionTerminal"]


def test_verify_misaligned_splice_fixture():
    # 28*23 applied to [28, 23, 28, 14] must leave [28, 14, 644]; the fixture
    # drops the duplicated 28, so re-simulation flags the second line.
    trajectory = parse_trajectory(MISALIGNED_SPLICE)
    correct, diagnostics = verify(trajectory, MISALIGNED_SPLICE_PROBLEM)
    assert correct == 0
    assert diagnostics[0] == "line 2: ResultingNumbersMismatch"


def test_verify_flags_wrong_arithmetic():
    mutated = SEARCH_SUCCESS.replace("8*2=16", "8*2=17")
    assert mutated != SEARCH_SUCCESS
    trajectory = parse_trajectory(mutated)
    correct, diagnostics = verify(trajectory, SEARCH_SUCCESS_PROBLEM)
    assert correct == 0
    assert diagnostics


def test_verify_flags_wrong_prompt():
    trajectory = parse_trajectory(SEARCH_SUCCESS)
    other = Problem("other", 24, (56, 58, 15, 8))
    correct, diagnostics = verify(trajectory, other)
    assert correct == 0
    assert any("Prompt" in d or "Target" in d for d in diagnostics)


def test_rebuild_tree_on_success_fixture():
    trajectory = parse_trajectory(SEARCH_SUCCESS)
    view = rebuild_tree(trajectory)
    assert view.diagnostics == []
    assert ROOT_INDEX in view.nodes
    assert view.explored_order[0] == ROOT_INDEX
    assert all(len(i) <= 4 for i in view.nodes)
    root_children = view.nodes[ROOT_INDEX].explored_children
    assert root_children and root_children[0] == (0, 0)
    assert view.next_child_index(ROOT_INDEX)[-1] == len(
        view.nodes[ROOT_INDEX].generated_children
    )


def test_rebuild_tree_survives_foreign_ops():
    text = (
        "Current State: 50:[10, 5], Operations: []\n"
        "Moving to Node #0,3\n"
        "Current State: 50:[2], Operations: ['garbage']"
    )
    trajectory = parse_trajectory(text)
    view = rebuild_tree(trajectory)
    assert (0, 3) in view.nodes
    assert any("unparseable" in d for d in view.diagnostics)


def test_make_prompt_matches_grammar():
    problem = Problem("p", 25, (56, 58, 15, 8))
    prompt = make_prompt(problem)
    assert prompt == "Current State: 25:[56, 58, 15, 8], Operations: []"
    assert SEARCH_SUCCESS.startswith(prompt)


def test_budget_used_chars_and_tokens():
    text = "ab\ncd e"
    assert budget_used(text, BudgetSpec("chars", 0)) == 7
    assert budget_used(text, BudgetSpec("whitespace_tokens", 0)) == 3
    prompt = make_prompt(Problem("p", 25, (56, 58, 15, 8)))
    assert budget_used(prompt, BudgetSpec("chars", 0)) == 49


def test_line_cost_accounts_for_separator():
    spec = BudgetSpec("chars", 100)
    assert line_cost("abc", spec, first=True) == 3
    assert line_cost("abc", spec, first=False) == 4
    total = sum(
        line_cost(line, spec, first=(i == 0))
        for i, line in enumerate(SEARCH_SUCCESS.split("\n"))
    )
    assert total == len(SEARCH_SUCCESS)


def test_truncate_to_budget_cuts_whole_lines():
    spec = BudgetSpec("chars", 120)
    text, truncated = truncate_to_budget(SEARCH_SUCCESS, spec)
    assert truncated
    assert text == "\n".join(SEARCH_SUCCESS.split("\n"))[:120].rsplit("\n", 1)[0]
    assert budget_used(text, spec) <= 120
    whole, untouched = truncate_to_budget(SEARCH_SUCCESS, BudgetSpec("chars", 0))
    assert whole == SEARCH_SUCCESS and not untouched


def test_truncate_keeps_first_line():
    prompt = make_prompt(Problem("p", 25, (56, 58, 15, 8)))
    text, truncated = truncate_to_budget(SEARCH_SUCCESS, BudgetSpec("chars", 10))
    assert text == prompt
    assert truncated


@given(
    st.integers(10, 99),
    st.lists(st.integers(1, 99), min_size=1, max_size=4),
    st.lists(
        st.tuples(st.integers(1, 99), st.sampled_from("+-*/"), st.integers(1, 99)),
        max_size=3,
    ),
)
def test_state_line_round_trip(target, numbers, op_parts):
    ops = tuple(f"{a}{op}{b}={a + b}" for a, op, b in op_parts)
    event = CurrentState(target, tuple(numbers), ops)
    assert parse_line(emit_event(event)) == event


@given(st.lists(st.integers(0, 6), min_size=1, max_size=5))
def test_index_line_round_trip(index):
    event = MovingToNode(tuple(index))
    assert parse_line(emit_event(event)) == event
