"""Countdown arithmetic domain: problems, operations, and target splits.

A problem asks for a 2-digit target to be produced from K input numbers,
consuming two numbers per operation (add/sub/mul/div) until one remains.
States carry their remaining numbers as an ordered tuple; all equality
checks against other states use multiset semantics, but the surface order
(untouched numbers first, new result appended) is preserved because the
trajectory text format depends on it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

OPERATORS = ("+", "-", "*", "/")

TARGET_MIN = 10
TARGET_MAX = 99
INPUT_MIN = 1
INPUT_MAX = 99
DEFAULT_K = 4


class CountdownError(Exception):
    """Base class for domain errors."""


class OperandMissing(CountdownError):
    """An operation names a number that is not in the remaining multiset."""


class IllegalOperation(CountdownError):
    """An operation violates the arithmetic rules (negative, inexact, /0)."""


class RejectionBudgetExceeded(CountdownError):
    """Problem generation failed to find an acceptable instance in time."""


@dataclass(frozen=True)
class OpSpec:
    """One arithmetic step, as written in trajectories: left op right = result.

    The result is stored, not recomputed, so that ops parsed from text can
    carry whatever the text claimed; legality is checked by apply_operation.
    """

    left: int
    operator: str
    right: int
    result: int

    def render(self) -> str:
        return f"{self.left}{self.operator}{self.right}={self.result}"

    @staticmethod
    def parse(text: str) -> "OpSpec":
        for sym in OPERATORS:
            head, sep, tail = text.partition(sym)
            if sep and head.isdigit():
                rhs, eq, res = tail.partition("=")
                if eq and rhs.isdigit() and res.isdigit():
                    return OpSpec(int(head), sym, int(rhs), int(res))
        raise ValueError(f"unparseable operation: {text!r}")


@dataclass(frozen=True)
class Problem:
    id: str
    target: int
    inputs: Tuple[int, ...]

    @property
    def num_ops(self) -> int:
        """Number of operations in any complete solution (K - 1)."""
        return len(self.inputs) - 1


@dataclass(frozen=True)
class SearchState:
    """Remaining numbers plus the ops applied so far, in order."""

    remaining: Tuple[int, ...]
    applied: Tuple[OpSpec, ...] = ()

    def multiset(self) -> Tuple[int, ...]:
        return tuple(sorted(self.remaining))


@dataclass(frozen=True)
class OptimalPath:
    """A known solving op sequence for a problem, with its subgoal states.

    subgoal_states[n] is the state after the first n ops (n = 0 is the root),
    covering depths 0..N-1; applying ops[N-1] to subgoal_states[N-1] yields
    the target.
    """

    problem_id: str
    ops: Tuple[OpSpec, ...]
    subgoal_states: Tuple[SearchState, ...]


def evaluate_op(left: int, operator: str, right: int) -> int:
    """Arithmetic for one op, raising IllegalOperation outside the domain."""
    if operator == "+":
        return left + right
    if operator == "-":
        if left < right:
            raise IllegalOperation(f"negative result: {left}-{right}")
        return left - right
    if operator == "*":
        return left * right
    if operator == "/":
        if right == 0:
            raise IllegalOperation("division by zero")
        if left % right != 0:
            raise IllegalOperation(f"inexact division: {left}/{right}")
        return left // right
    raise IllegalOperation(f"unknown operator: {operator!r}")


def remove_operands(remaining: Sequence[int], left: int, right: int) -> List[int]:
    """Drop one occurrence each of left and right (leftmost copies).

    Consuming exactly one copy per operand is what keeps duplicate inputs
    honest: [2, 2, 3] supports 2+2 but [2, 3] does not.
    """
    rest = list(remaining)
    for operand in (left, right):
        try:
            rest.remove(operand)
        except ValueError:
            raise OperandMissing(
                f"operand {operand} not available in {list(remaining)}"
            ) from None
    return rest


def apply_operation(state: SearchState, op: OpSpec) -> SearchState:
    """Apply op to state, validating operands, legality, and the claimed result.

    The new state keeps untouched numbers in order and appends the result.
    """
    rest = remove_operands(state.remaining, op.left, op.right)
    value = evaluate_op(op.left, op.operator, op.right)
    if value != op.result:
        raise IllegalOperation(f"result mismatch: {op.render()} evaluates to {value}")
    return SearchState(tuple(rest) + (value,), state.applied + (op,))


def enumerate_children(state: SearchState) -> List[Tuple[OpSpec, SearchState]]:
    """All legal (op, child state) pairs of a state, in canonical order.

    Operand pairs are visited by list position (i < j), one entry per
    distinct unordered value pair; operators in +, -, *, / order. Written
    operand order follows the list for + and *, and puts the larger number
    on the left for - and /. Distinct ops yielding equal results stay
    distinct entries.
    """
    if len(state.remaining) < 2:
        return []
    pairs: List[Tuple[int, int]] = []
    seen = set()
    for i, a in enumerate(state.remaining):
        for b in state.remaining[i + 1:]:
            key = (min(a, b), max(a, b))
            if key not in seen:
                seen.add(key)
                pairs.append((a, b))
    children: List[Tuple[OpSpec, SearchState]] = []
    for a, b in pairs:
        for sym in OPERATORS:
            left, right = (a, b) if sym in ("+", "*") else (max(a, b), min(a, b))
            try:
                value = evaluate_op(left, sym, right)
            except IllegalOperation:
                continue
            op = OpSpec(left, sym, right, value)
            children.append((op, apply_operation(state, op)))
    return children


def make_prompt_state(problem: Problem) -> SearchState:
    return SearchState(tuple(problem.inputs), ())


@dataclass(frozen=True)
class TargetSplit:
    """Train/test partition of the 2-digit target range (90/10 by count)."""

    seed: int
    train_targets: Tuple[int, ...]
    test_targets: Tuple[int, ...]

    def targets_for(self, side: str) -> Tuple[int, ...]:
        if side in ("train", "test_seen"):
            return self.train_targets
        if side == "test_unseen":
            return self.test_targets
        raise ValueError(f"unknown side: {side!r}")

    def to_text(self) -> str:
        lines = ["# train"]
        lines.extend(str(t) for t in self.train_targets)
        lines.append("# test")
        lines.extend(str(t) for t in self.test_targets)
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str, seed: int = -1) -> "TargetSplit":
        section: Optional[str] = None
        buckets: dict = {"train": [], "test": []}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line == "# train":
                section = "train"
            elif line == "# test":
                section = "test"
            elif section is None:
                raise ValueError("split text must start with a section header")
            else:
                buckets[section].append(int(line))
        return TargetSplit(seed, tuple(buckets["train"]), tuple(buckets["test"]))


def split_targets(seed: int) -> TargetSplit:
    """Deterministically hold out 10% of targets (9 of 90) for test_unseen."""
    targets = list(range(TARGET_MIN, TARGET_MAX + 1))
    rng = random.Random(f"split:{seed}")
    rng.shuffle(targets)
    n_test = round(0.1 * len(targets))
    test = tuple(sorted(targets[:n_test]))
    train = tuple(sorted(targets[n_test:]))
    return TargetSplit(seed, train, test)


def _random_solution(rng: random.Random, inputs: Sequence[int]) -> Tuple[Tuple[OpSpec, ...], int]:
    """Apply K-1 random legal ops to inputs; returns (ops, final value)."""
    state = SearchState(tuple(inputs))
    ops: List[OpSpec] = []
    while len(state.remaining) > 1:
        choices = enumerate_children(state)
        op, state = rng.choice(choices)
        ops.append(op)
    return tuple(ops), state.remaining[0]


def generate_problem(
    rng: random.Random,
    split: TargetSplit,
    side: str,
    problem_id: str = "p0",
    k: int = DEFAULT_K,
    max_attempts: int = 1000,
) -> Tuple[Problem, OptimalPath]:
    """Sample a solvable problem whose target lands in the side's target set.

    Construction works backwards: draw K inputs, apply K-1 random legal ops,
    and accept when the final value is a 2-digit member of the allowed
    targets. Each rejected attempt re-draws both inputs and ops.
    """
    allowed = set(split.targets_for(side))
    for _ in range(max_attempts):
        inputs = tuple(rng.randint(INPUT_MIN, INPUT_MAX) for _ in range(k))
        ops, value = _random_solution(rng, inputs)
        if TARGET_MIN <= value <= TARGET_MAX and value in allowed:
            problem = Problem(problem_id, value, inputs)
            states = [make_prompt_state(problem)]
            for op in ops[:-1]:
                states.append(apply_operation(states[-1], op))
            path = OptimalPath(problem_id, ops, tuple(states))
            verify_optimal_path(problem, path)
            return problem, path
    raise RejectionBudgetExceeded(f"no acceptable problem in {max_attempts} attempts")


def verify_optimal_path(problem: Problem, path: OptimalPath) -> None:
    """Assert that path's ops solve problem and its subgoal states line up."""
    if len(path.ops) != problem.num_ops:
        raise ValueError("op count must be K-1")
    state = make_prompt_state(problem)
    for depth, op in enumerate(path.ops):
        expected = path.subgoal_states[depth]
        if state.remaining != expected.remaining:
            raise ValueError(f"subgoal state mismatch at depth {depth}")
        state = apply_operation(state, op)
    if state.remaining != (problem.target,):
        raise ValueError("path does not reach the target")


def solve_all(problem: Problem, max_solutions: int = 0) -> List[Tuple[OpSpec, ...]]:
    """Exhaustively enumerate solving op sequences (capped if max_solutions > 0).

    Sequences are distinct by op order; duplicate numbers are consumed one
    copy at a time, so [1, 1, 4, 9] style inputs enumerate correctly.
    """
    solutions: List[Tuple[OpSpec, ...]] = []

    def walk(state: SearchState) -> bool:
        if len(state.remaining) == 1:
            if state.remaining[0] == problem.target:
                solutions.append(state.applied)
                return bool(max_solutions) and len(solutions) >= max_solutions
            return False
        for _, child in enumerate_children(state):
            if walk(child):
                return True
        return False

    walk(make_prompt_state(problem))
    return solutions


def iter_subgoal_multisets(path: OptimalPath) -> Iterator[Tuple[int, Tuple[int, ...]]]:
    """Yield (n, multiset) for the non-root subgoals n = 1..N-1."""
    for n, state in enumerate(path.subgoal_states):
        if n == 0:
            continue
        yield n, state.multiset()
