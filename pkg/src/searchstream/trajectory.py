"""Line-oriented search trajectory language: events, emitter, parser, verifier.

Trajectories are newline-joined lines with no trailing whitespace. The six
line forms (plus the give-up line) are:

    Current State: 25:[56, 58, 15, 8], Operations: []
    Exploring Operation: 58-56=2, Resulting Numbers: [15, 8, 2]
    Generated Node #0,0: 25:[15, 8, 2] Operation: 58-56=2
    Moving to Node #0,0
    31,25 unequal: No Solution
    25,25 equal: Goal Reached
    No solution found.

Node indices are comma-joined paths from the root (#0); child i of node a
is a,i. Single-number results are verified inline right after their
Exploring line and are never materialized as nodes, and duplicate numbers
are consumed one copy per operand; corpora emitted here bake in both rules.
emit_event(parse_line(line)) reproduces every legal line byte for byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .countdown import (
    OpSpec,
    OperandMissing,
    IllegalOperation,
    Problem,
    SearchState,
    apply_operation,
    evaluate_op,
    make_prompt_state,
    remove_operands,
)

NodeIndex = Tuple[int, ...]

ROOT_INDEX: NodeIndex = (0,)


class MalformedLine(Exception):
    """A line does not match the grammar (strict parsing)."""

    def __init__(self, line_no: int, line: str = ""):
        self.line_no = line_no
        self.line = line
        super().__init__(f"malformed line {line_no}: {line!r}")


class BridgeUnavailable(Exception):
    """An external tokenizer/generator was needed but not configured."""


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class CurrentState:
    target: int
    numbers: Tuple[int, ...]
    applied_ops: Tuple[str, ...]
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ExploringOperation:
    op: OpSpec
    resulting_numbers: Tuple[int, ...]
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class GeneratedNode:
    node_index: NodeIndex
    target: int
    numbers: Tuple[int, ...]
    op: OpSpec
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class MovingToNode:
    node_index: NodeIndex
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class VerifyFail:
    value: int
    target: int
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class VerifySuccess:
    # value == target on well-formed corpora, but foreign text can disagree
    # ("46,18 equal: ..."), and round-tripping must preserve what was written.
    value: int
    target: int
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class NoSolutionFound:
    source_line: Optional[str] = field(default=None, compare=False, repr=False)


TrajectoryEvent = Union[
    CurrentState,
    ExploringOperation,
    GeneratedNode,
    MovingToNode,
    VerifyFail,
    VerifySuccess,
    NoSolutionFound,
]

TERMINAL_GOAL = "goal_reached"
TERMINAL_NO_SOLUTION = "no_solution"
TERMINAL_TRUNCATED = "truncated"


@dataclass(frozen=True)
class Trajectory:
    problem_id: str
    events: Tuple[TrajectoryEvent, ...]
    terminal: str

    @property
    def text(self) -> str:
        return emit_trajectory(self.events)


# ---------------------------------------------------------------------------
# rendering


def render_numbers(numbers: Sequence[int]) -> str:
    return "[" + ", ".join(str(n) for n in numbers) + "]"


def render_ops(ops: Sequence[str]) -> str:
    return "[" + ", ".join(f"'{op}'" for op in ops) + "]"


def render_index(index: NodeIndex) -> str:
    return ",".join(str(i) for i in index)


def emit_event(event: TrajectoryEvent) -> str:
    """Render one event as its exact line (no newline)."""
    if isinstance(event, CurrentState):
        return (
            f"Current State: {event.target}:{render_numbers(event.numbers)}, "
            f"Operations: {render_ops(event.applied_ops)}"
        )
    if isinstance(event, ExploringOperation):
        return (
            f"Exploring Operation: {event.op.render()}, "
            f"Resulting Numbers: {render_numbers(event.resulting_numbers)}"
        )
    if isinstance(event, GeneratedNode):
        return (
            f"Generated Node #{render_index(event.node_index)}: "
            f"{event.target}:{render_numbers(event.numbers)} Operation: {event.op.render()}"
        )
    if isinstance(event, MovingToNode):
        return f"Moving to Node #{render_index(event.node_index)}"
    if isinstance(event, VerifyFail):
        return f"{event.value},{event.target} unequal: No Solution"
    if isinstance(event, VerifySuccess):
        return f"{event.value},{event.target} equal: Goal Reached"
    if isinstance(event, NoSolutionFound):
        return "No solution found."
    raise TypeError(f"not a trajectory event: {event!r}")


def emit_trajectory(events: Sequence[TrajectoryEvent]) -> str:
    return "\n".join(emit_event(e) for e in events)


# ---------------------------------------------------------------------------
# parsing

_NUM_LIST = r"\[((?:\d+(?:, \d+)*)?)\]"
_OP = r"(\d+[-+*/]\d+=\d+)"

_RE_CURRENT = re.compile(rf"^Current State: (\d+):{_NUM_LIST}, Operations: \[((?:'[^']*'(?:, '[^']*')*)?)\]$")
_RE_EXPLORE = re.compile(rf"^Exploring Operation: {_OP}, Resulting Numbers: {_NUM_LIST}$")
_RE_GENERATED = re.compile(rf"^Generated Node #(\d+(?:,\d+)*): (\d+):{_NUM_LIST} Operation: {_OP}$")
_RE_MOVING = re.compile(r"^Moving to Node #(\d+(?:,\d+)*)$")
_RE_FAIL = re.compile(r"^(\d+),(\d+) unequal: No Solution$")
_RE_SUCCESS = re.compile(r"^(\d+),(\d+) equal: Goal Reached$")
_NO_SOLUTION_LINE = "No solution found."


def _parse_numbers(inner: str) -> Tuple[int, ...]:
    if not inner:
        return ()
    return tuple(int(tok) for tok in inner.split(", "))


def _parse_applied_ops(inner: str) -> Tuple[str, ...]:
    if not inner:
        return ()
    return tuple(tok[1:-1] for tok in inner.split(", "))


def _parse_index(text: str) -> NodeIndex:
    return tuple(int(tok) for tok in text.split(","))


def parse_line(line: str, line_no: int = 1) -> TrajectoryEvent:
    """Parse one line into its event, raising MalformedLine otherwise."""
    m = _RE_CURRENT.match(line)
    if m:
        return CurrentState(
            int(m.group(1)),
            _parse_numbers(m.group(2)),
            _parse_applied_ops(m.group(3)),
            source_line=line,
        )
    m = _RE_EXPLORE.match(line)
    if m:
        return ExploringOperation(
            OpSpec.parse(m.group(1)), _parse_numbers(m.group(2)), source_line=line
        )
    m = _RE_GENERATED.match(line)
    if m:
        return GeneratedNode(
            _parse_index(m.group(1)),
            int(m.group(2)),
            _parse_numbers(m.group(3)),
            OpSpec.parse(m.group(4)),
            source_line=line,
        )
    m = _RE_MOVING.match(line)
    if m:
        return MovingToNode(_parse_index(m.group(1)), source_line=line)
    m = _RE_FAIL.match(line)
    if m:
        return VerifyFail(int(m.group(1)), int(m.group(2)), source_line=line)
    m = _RE_SUCCESS.match(line)
    if m:
        return VerifySuccess(int(m.group(1)), int(m.group(2)), source_line=line)
    if line == _NO_SOLUTION_LINE:
        return NoSolutionFound(source_line=line)
    raise MalformedLine(line_no, line)


def _terminal_of(events: Sequence[TrajectoryEvent]) -> str:
    last = events[-1]
    if isinstance(last, VerifySuccess):
        return TERMINAL_GOAL
    if isinstance(last, NoSolutionFound):
        return TERMINAL_NO_SOLUTION
    return TERMINAL_TRUNCATED


def parse_trajectory(text: str, problem_id: str = "", strict: bool = True) -> Trajectory:
    """Parse a whole trajectory.

    Strict mode raises MalformedLine at the first bad line (symbolic corpora
    must be byte-clean). Lenient mode truncates at the first bad line, which
    is the right posture for model-generated text; a trajectory cut that way
    reports terminal "truncated". The first line must parse as a Current
    State line in either mode, otherwise there is no trajectory at all.
    """
    lines = text.split("\n")
    events: List[TrajectoryEvent] = []
    for i, line in enumerate(lines, start=1):
        try:
            event = parse_line(line, i)
        except MalformedLine:
            if strict or i == 1:
                raise
            break
        if i == 1 and not isinstance(event, CurrentState):
            raise MalformedLine(1, line)
        events.append(event)
    return Trajectory(problem_id, tuple(events), _terminal_of(events))


# ---------------------------------------------------------------------------
# tree reconstruction


@dataclass
class TreeNode:
    index: NodeIndex
    state: SearchState
    tried_ops: List[OpSpec] = field(default_factory=list)
    generated_children: List[NodeIndex] = field(default_factory=list)
    explored_children: List[NodeIndex] = field(default_factory=list)


@dataclass
class TreeView:
    """Best-effort tree reconstruction of a trajectory.

    nodes covers the root plus every node that was generated (or arrived at
    via a Moving line whose Current State could pin its state down).
    explored order is the order of first Moving arrival; diagnostics collect
    structural oddities without interrupting reconstruction.
    """

    nodes: Dict[NodeIndex, TreeNode]
    current: NodeIndex
    explored_order: List[NodeIndex]
    diagnostics: List[str]

    def explored_children_of(self, index: NodeIndex) -> List[NodeIndex]:
        node = self.nodes.get(index)
        return list(node.explored_children) if node else []

    def next_child_index(self, index: NodeIndex) -> NodeIndex:
        node = self.nodes[index]
        used = [child[-1] for child in node.generated_children]
        return index + ((max(used) + 1) if used else 0,)


def rebuild_tree(trajectory: Trajectory) -> TreeView:
    events = trajectory.events
    if not events or not isinstance(events[0], CurrentState):
        raise ValueError("trajectory must open with a Current State line")
    prompt = events[0]
    root = TreeNode(ROOT_INDEX, SearchState(prompt.numbers, ()))
    nodes: Dict[NodeIndex, TreeNode] = {ROOT_INDEX: root}
    explored_order: List[NodeIndex] = [ROOT_INDEX]
    diagnostics: List[str] = []
    current = ROOT_INDEX
    pending_move: Optional[NodeIndex] = None

    for pos, event in enumerate(events[1:], start=2):
        if isinstance(event, ExploringOperation):
            nodes[current].tried_ops.append(event.op)
            pending_move = None
        elif isinstance(event, GeneratedNode):
            parent = event.node_index[:-1]
            if parent != current:
                diagnostics.append(f"line {pos}: generated under {parent} while at {current}")
            if event.node_index in nodes:
                diagnostics.append(f"line {pos}: duplicate node {event.node_index}")
            parent_node = nodes.get(parent)
            applied = parent_node.state.applied if parent_node else ()
            nodes[event.node_index] = TreeNode(
                event.node_index, SearchState(event.numbers, applied + (event.op,))
            )
            if parent_node is not None:
                parent_node.generated_children.append(event.node_index)
            pending_move = None
        elif isinstance(event, MovingToNode):
            pending_move = event.node_index
        elif isinstance(event, CurrentState):
            index = pending_move
            if index is None:
                diagnostics.append(f"line {pos}: state line without a preceding move")
                index = current
            if index not in nodes:
                parent = index[:-1]
                if parent not in nodes:
                    diagnostics.append(f"line {pos}: move to unknown node {index}")
                try:
                    ops = tuple(OpSpec.parse(o) for o in event.applied_ops)
                except ValueError:
                    diagnostics.append(f"line {pos}: unparseable applied ops at {index}")
                    ops = ()
                nodes[index] = TreeNode(index, SearchState(event.numbers, ops))
                if parent in nodes:
                    nodes[parent].generated_children.append(index)
            node = nodes[index]
            if node.state.remaining != event.numbers:
                diagnostics.append(f"line {pos}: state mismatch at {index}")
            if index not in explored_order:
                explored_order.append(index)
                parent = index[:-1]
                if parent in nodes:
                    nodes[parent].explored_children.append(index)
            current = index
            pending_move = None
        else:
            pending_move = None

    return TreeView(nodes, current, explored_order, diagnostics)


# ---------------------------------------------------------------------------
# verification


def verify(trajectory: Trajectory, problem: Problem) -> Tuple[int, List[str]]:
    """Re-simulate a trajectory against its problem; returns (M, diagnostics).

    M = 1 iff the trajectory terminates with a Goal Reached whose value is
    the target, every operation is arithmetically legal against the state it
    was explored from, every generated node / state line is consistent with
    its parent, and the goal is reached at a leaf (single remaining number).
    Diagnostics report the first failure as "line N: code".
    """
    diags: List[str] = []

    def fail(pos: int, code: str) -> Tuple[int, List[str]]:
        diags.append(f"line {pos}: {code}")
        return 0, diags

    events = trajectory.events
    if not events or not isinstance(events[0], CurrentState):
        return fail(1, "PromptMissing")
    prompt = events[0]
    if (
        prompt.target != problem.target
        or prompt.numbers != tuple(problem.inputs)
        or prompt.applied_ops
    ):
        return fail(1, "PromptMismatch")

    nodes: Dict[NodeIndex, Tuple[Tuple[int, ...], Tuple[str, ...]]] = {
        ROOT_INDEX: (prompt.numbers, ())
    }
    current = ROOT_INDEX
    last_explore: Optional[ExploringOperation] = None
    prev: TrajectoryEvent = prompt

    for pos, event in enumerate(events[1:], start=2):
        if isinstance(prev, (VerifySuccess, NoSolutionFound)):
            return fail(pos, "EventsAfterTerminal")
        if isinstance(prev, MovingToNode) and not isinstance(event, CurrentState):
            return fail(pos, "MissingStateAfterMove")

        if isinstance(event, ExploringOperation):
            numbers, _ = nodes[current]
            try:
                rest = remove_operands(numbers, event.op.left, event.op.right)
                value = evaluate_op(event.op.left, event.op.operator, event.op.right)
            except OperandMissing:
                return fail(pos, "OperandMissing")
            except IllegalOperation:
                return fail(pos, "IllegalOperation")
            if value != event.op.result:
                return fail(pos, "ArithmeticMismatch")
            if event.resulting_numbers != tuple(rest) + (value,):
                return fail(pos, "ResultingNumbersMismatch")
            last_explore = event
        elif isinstance(event, GeneratedNode):
            if last_explore is None or not isinstance(prev, ExploringOperation):
                return fail(pos, "GeneratedWithoutExploring")
            if (
                event.op != last_explore.op
                or event.numbers != last_explore.resulting_numbers
                or event.target != problem.target
            ):
                return fail(pos, "GeneratedMismatch")
            if len(event.numbers) < 2:
                return fail(pos, "GeneratedLeaf")
            if event.node_index[:-1] != current:
                return fail(pos, "GeneratedUnderWrongParent")
            if event.node_index in nodes:
                return fail(pos, "DuplicateNode")
            _, ops = nodes[current]
            nodes[event.node_index] = (event.numbers, ops + (event.op.render(),))
        elif isinstance(event, MovingToNode):
            pass  # judged by the state line that must follow
        elif isinstance(event, CurrentState):
            if not isinstance(prev, MovingToNode):
                return fail(pos, "StateWithoutMove")
            index = prev.node_index
            if event.target != problem.target:
                return fail(pos, "TargetMismatch")
            if index in nodes:
                numbers, ops = nodes[index]
                if event.numbers != numbers or event.applied_ops != ops:
                    return fail(pos, "InconsistentState")
            else:
                # Legacy corpora materialize leaves by moving into them; the
                # state is accepted when it follows from the parent's ops.
                parent = index[:-1]
                if parent not in nodes or not event.applied_ops:
                    return fail(pos, "UnknownNode")
                numbers, ops = nodes[parent]
                if event.applied_ops[:-1] != ops:
                    return fail(pos, "InconsistentState")
                try:
                    op = OpSpec.parse(event.applied_ops[-1])
                    rest = remove_operands(numbers, op.left, op.right)
                    value = evaluate_op(op.left, op.operator, op.right)
                except (ValueError, OperandMissing, IllegalOperation):
                    return fail(pos, "InconsistentState")
                if value != op.result or tuple(rest) + (value,) != event.numbers:
                    return fail(pos, "InconsistentState")
                nodes[index] = (event.numbers, event.applied_ops)
            current = index
            last_explore = None
        elif isinstance(event, VerifyFail):
            if last_explore is None or len(last_explore.resulting_numbers) != 1:
                return fail(pos, "VerifyWithoutLeaf")
            if event.value != last_explore.resulting_numbers[0]:
                return fail(pos, "VerifyValueMismatch")
            if event.target != problem.target:
                return fail(pos, "TargetMismatch")
            if event.value == event.target:
                return fail(pos, "WrongVerdict")
        elif isinstance(event, VerifySuccess):
            if last_explore is None or len(last_explore.resulting_numbers) != 1:
                return fail(pos, "VerifyWithoutLeaf")
            if event.value != last_explore.resulting_numbers[0]:
                return fail(pos, "VerifyValueMismatch")
            if event.value != event.target or event.target != problem.target:
                return fail(pos, "WrongVerdict")
        prev = event

    if trajectory.terminal == TERMINAL_GOAL:
        return 1, diags
    if trajectory.terminal == TERMINAL_NO_SOLUTION:
        return fail(len(events), "NoSolutionTerminal")
    return fail(len(events), "TruncatedTerminal")


# ---------------------------------------------------------------------------
# budgets


@dataclass(frozen=True)
class BudgetSpec:
    """How trajectory length is measured and capped.

    kind is one of chars, whitespace_tokens, external_tokenizer; limit <= 0
    means unlimited. external_tokenizer needs a tokenizer callback (usually a
    bridge client's) that maps text to spans.
    """

    kind: str = "chars"
    limit: int = 0

    def is_additive(self) -> bool:
        return self.kind in ("chars", "whitespace_tokens")


def budget_used(text: str, spec: BudgetSpec, tokenizer=None) -> int:
    """Measure text under a budget spec."""
    if spec.kind == "chars":
        return len(text)
    if spec.kind == "whitespace_tokens":
        return len(text.split())
    if spec.kind == "external_tokenizer":
        if tokenizer is None:
            raise BridgeUnavailable("external_tokenizer budget needs a bridge tokenizer")
        return len(tokenizer(text))
    raise ValueError(f"unknown budget kind: {spec.kind!r}")


def line_cost(line: str, spec: BudgetSpec, first: bool) -> int:
    """Incremental cost of appending line (plus its separator) to a text."""
    if spec.kind == "chars":
        return len(line) + (0 if first else 1)
    if spec.kind == "whitespace_tokens":
        return len(line.split())
    raise ValueError(f"non-additive budget kind: {spec.kind!r}")


def truncate_to_budget(text: str, spec: BudgetSpec) -> Tuple[str, bool]:
    """Cut text at the last complete line that fits the limit.

    Returns (text, was_truncated). The first line is always kept so that a
    trajectory remains openable even under absurdly small limits.
    """
    if spec.limit <= 0 or not spec.is_additive():
        return text, False
    lines = text.split("\n")
    kept: List[str] = []
    used = 0
    for i, line in enumerate(lines):
        cost = line_cost(line, spec, first=(i == 0))
        if i > 0 and used + cost > spec.limit:
            return "\n".join(kept), True
        kept.append(line)
        used += cost
    return text, False


def make_prompt(problem: Problem) -> str:
    """The canonical first line of every trajectory for a problem."""
    state = make_prompt_state(problem)
    return emit_event(CurrentState(problem.target, state.remaining, ()))
