from __future__ import annotations

import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from searchstream import (
    IllegalOperation,
    OperandMissing,
    OpSpec,
    Problem,
    SearchState,
    TargetSplit,
    apply_operation,
    enumerate_children,
    generate_problem,
    solve_all,
    split_targets,
)
from searchstream.countdown import (
    evaluate_op,
    iter_subgoal_multisets,
    make_prompt_state,
    remove_operands,
    verify_optimal_path,
)


def test_evaluate_op_basics():
    assert evaluate_op(3, "+", 4) == 7
    assert evaluate_op(9, "-", 9) == 0
    assert evaluate_op(6, "*", 7) == 42
    assert evaluate_op(84, "/", 12) == 7


@pytest.mark.parametrize(
    "left,op,right",
    [(3, "-", 4), (7, "/", 2), (5, "/", 0), (1, "^", 1)],
)
def test_evaluate_op_rejects(left, op, right):
    with pytest.raises(IllegalOperation):
        evaluate_op(left, op, right)


def test_opspec_render_parse_round_trip():
    op = OpSpec(56, "+", 58, 114)
    assert op.render() == "56+58=114"
    assert OpSpec.parse("56+58=114") == op
    with pytest.raises(ValueError):
        OpSpec.parse("56 + 58 = 114")
    with pytest.raises(ValueError):
        OpSpec.parse("not an op")


def test_remove_operands_takes_leftmost_copies():
    assert remove_operands([2, 5, 2, 3], 2, 3) == [5, 2]
    assert remove_operands([2, 2, 2], 2, 2) == [2]
    with pytest.raises(OperandMissing):
        remove_operands([2, 5], 2, 3)
    with pytest.raises(OperandMissing):
        remove_operands([4], 4, 4)


def test_apply_operation_appends_result():
    state = SearchState((56, 58, 15, 8), ())
    op = OpSpec(56, "+", 58, 114)
    out = apply_operation(state, op)
    assert out.remaining == (15, 8, 114)
    assert out.applied == (op,)


def test_apply_operation_rejects_wrong_claim():
    state = SearchState((3, 4), ())
    with pytest.raises(IllegalOperation):
        apply_operation(state, OpSpec(3, "+", 4, 8))


def test_enumerate_children_canonical_order():
    # Pairs follow list position, ops cycle +,-,*,/ within a pair, and the
    # printed operand order keeps the list order for + and * but puts the
    # larger number first for - and /.
    state = SearchState((56, 58, 15, 8), ())
    rendered = [op.render() for op, _ in enumerate_children(state)]
    assert rendered == [
        "56+58=114",
        "58-56=2",
        "56*58=3248",
        "56+15=71",
        "56-15=41",
        "56*15=840",
        "56+8=64",
        "56-8=48",
        "56*8=448",
        "56/8=7",
        "58+15=73",
        "58-15=43",
        "58*15=870",
        "58+8=66",
        "58-8=50",
        "58*8=464",
        "15+8=23",
        "15-8=7",
        "15*8=120",
    ]


def test_enumerate_children_dedupes_value_pairs():
    state = SearchState((2, 2, 3), ())
    pairs = {(op.left, op.right) for op, _ in enumerate_children(state)}
    assert pairs == {(2, 2), (2, 3), (3, 2)}
    rendered = [op.render() for op, _ in enumerate_children(state)]
    assert rendered.count("2+3=5") == 1


def test_enumerate_children_states_are_ordered():
    state = SearchState((10, 4, 6), ())
    children = dict(
        (op.render(), child.remaining) for op, child in enumerate_children(state)
    )
    assert children["10-4=6"] == (6, 6)
    assert children["4+6=10"] == (10, 10)


def test_split_targets_partition():
    split = split_targets(0)
    assert len(split.train_targets) == 81
    assert len(split.test_targets) == 9
    assert set(split.train_targets) | set(split.test_targets) == set(range(10, 100))
    assert not set(split.train_targets) & set(split.test_targets)
    assert split.targets_for("train") == split.targets_for("test_seen")
    assert split.targets_for("test_unseen") == split.test_targets
    with pytest.raises(ValueError):
        split.targets_for("validation")


def test_split_text_round_trip():
    split = split_targets(3)
    text = split.to_text()
    assert text.startswith("# train\n")
    assert "# test\n" in text
    back = TargetSplit.from_text(text, seed=3)
    assert back.train_targets == split.train_targets
    assert back.test_targets == split.test_targets


def test_split_deterministic_per_seed():
    assert split_targets(5).test_targets == split_targets(5).test_targets
    assert split_targets(5).test_targets != split_targets(6).test_targets


def test_generate_problem_deterministic_and_solvable():
    split = split_targets(0)
    rng = random.Random("gen-test")
    problem, path = generate_problem(rng, split, "train", "g0")
    rng2 = random.Random("gen-test")
    problem2, path2 = generate_problem(rng2, split, "train", "g0")
    assert problem == problem2
    assert path.ops == path2.ops
    assert len(problem.inputs) == 4
    assert problem.target in split.targets_for("train")
    assert len(path.ops) == problem.num_ops
    verify_optimal_path(problem, path)


def test_generate_problem_respects_side():
    split = split_targets(0)
    rng = random.Random("side-test")
    for i in range(20):
        problem, _ = generate_problem(rng, split, "test_unseen", f"u{i}")
        assert problem.target in split.test_targets


def test_solve_all_contains_optimal_path():
    split = split_targets(0)
    rng = random.Random("solve-test")
    problem, path = generate_problem(rng, split, "train", "s0")
    solutions = solve_all(problem)
    assert any(ops == path.ops for ops in solutions)
    for ops in solutions:
        assert len(ops) == problem.num_ops
        assert ops[-1].result == problem.target


def test_iter_subgoal_multisets():
    split = split_targets(0)
    rng = random.Random("subgoal-test")
    problem, path = generate_problem(rng, split, "train", "m0")
    pairs = list(iter_subgoal_multisets(path))
    assert [n for n, _ in pairs] == list(range(1, problem.num_ops))
    sizes = [len(ms) for _, ms in pairs]
    assert sizes == [3, 2]
    first = path.subgoal_states[1]
    assert pairs[0][1] == first.multiset()


def test_make_prompt_state():
    problem = Problem("p", 25, (56, 58, 15, 8))
    state = make_prompt_state(problem)
    assert state.remaining == (56, 58, 15, 8)
    assert state.applied == ()


@given(
    st.integers(1, 99),
    st.sampled_from("+-*/"),
    st.integers(1, 99),
)
def test_evaluate_op_closure(left, op, right):
    try:
        value = evaluate_op(left, op, right)
    except IllegalOperation:
        return
    assert isinstance(value, int)
    assert value >= 0
    if op == "-":
        assert left >= right
    if op == "/":
        assert value * right == left


@given(st.lists(st.integers(1, 50), min_size=2, max_size=5))
def test_children_preserve_multiset(numbers):
    state = SearchState(tuple(numbers), ())
    before = Counter(numbers)
    for op, child in enumerate_children(state):
        after = Counter(child.remaining)
        expected = before.copy()
        expected[op.left] -= 1
        expected[op.right] -= 1
        expected[op.result] += 1
        assert after == +expected
        assert len(child.remaining) == len(numbers) - 1
