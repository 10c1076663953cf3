"""Subgoal augmentation: splice optimal-path subgoals into failed searches.

A failed trajectory is guided by rewriting one explored child of the node
where the last reached subgoal lives: its Exploring / Generated lines and
its first Moving + Current State pair are rewritten to the next subgoal's
operation and numbers (keeping the original node index), everything after
is pruned, and a generator continues the search from the rewritten prefix.
Looping this over subgoals until the trajectory verifies is the guided
generation scheme; records carry enough provenance to audit every rewrite.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

from .countdown import OpSpec, OptimalPath, Problem, apply_operation
from .trajectory import (
    BudgetSpec,
    CurrentState,
    ExploringOperation,
    GeneratedNode,
    MovingToNode,
    NodeIndex,
    ROOT_INDEX,
    TERMINAL_GOAL,
    TERMINAL_TRUNCATED,
    Trajectory,
    TrajectoryEvent,
    VerifySuccess,
    budget_used,
    make_prompt,
    rebuild_tree,
    render_index,
    verify,
)
from .search import SearchConfig, continue_search, start_trajectory

NODE_SELECTIONS = ("first", "rand", "last")
DEFAULT_TAU = 0.5


class ContinuationGenerator(Protocol):
    """Anything that can extend a trajectory prefix to a full trajectory."""

    def generate(self, problem: Problem, prefix: Trajectory) -> Trajectory: ...


@dataclass
class BuiltinGenerator:
    """Continuation via the stochastic symbolic searcher."""

    cfg: SearchConfig

    def generate(self, problem: Problem, prefix: Trajectory) -> Trajectory:
        return continue_search(prefix, self.cfg)


@dataclass(frozen=True)
class AugmentationRecord:
    """Audit trail of one augment_subgoal call."""

    problem_id: str
    subgoal_index: int
    selection: str
    rewritten: bool
    synthesized: bool = False
    node_index: Optional[str] = None
    pool_size: int = 0
    pruned_events: int = 0
    prefix_units: int = 0

    def to_json(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "subgoal_index": self.subgoal_index,
            "selection": self.selection,
            "rewritten": self.rewritten,
            "synthesized": self.synthesized,
            "node_index": self.node_index,
            "pool_size": self.pool_size,
            "pruned_events": self.pruned_events,
            "prefix_units": self.prefix_units,
        }


@dataclass
class DatasetRecord:
    problem_id: str
    target: int
    inputs: Tuple[int, ...]
    prompt: str
    trajectory: str
    correct: int
    augmented: bool
    subgoals_used: int
    budget_used: int
    seed: int
    iteration: int
    provenance: List[dict] = field(default_factory=list)

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "problem": {
                    "id": self.problem_id,
                    "target": self.target,
                    "inputs": list(self.inputs),
                },
                "prompt": self.prompt,
                "trajectory": self.trajectory,
                "correct": self.correct,
                "augmented": self.augmented,
                "subgoals_used": self.subgoals_used,
                "budget_used": self.budget_used,
                "seed": self.seed,
                "iteration": self.iteration,
                "provenance": self.provenance,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json_line(line: str) -> "DatasetRecord":
        data = json.loads(line)
        return DatasetRecord(
            problem_id=data["problem"]["id"],
            target=data["problem"]["target"],
            inputs=tuple(data["problem"]["inputs"]),
            prompt=data["prompt"],
            trajectory=data["trajectory"],
            correct=data["correct"],
            augmented=data["augmented"],
            subgoals_used=data["subgoals_used"],
            budget_used=data["budget_used"],
            seed=data["seed"],
            iteration=data["iteration"],
            provenance=data.get("provenance", []),
        )


def make_hint_prefix(problem: Problem, path: OptimalPath, n: int) -> Trajectory:
    """A trajectory prefix that walks the first n optimal ops directly.

    Each hinted op contributes Exploring, Generated (child 0 at each level),
    Moving, and Current State lines; with n equal to the full op count the
    last op contributes its Exploring plus the success verification instead,
    which is already a complete correct trajectory.
    """
    if not 0 <= n <= problem.num_ops:
        raise ValueError(f"hint length must be in [0, {problem.num_ops}]")
    events: List[TrajectoryEvent] = []
    state = path.subgoal_states[0]
    events.append(CurrentState(problem.target, state.remaining, ()))
    for m in range(1, n + 1):
        op = path.ops[m - 1]
        child = apply_operation(state, op)
        events.append(ExploringOperation(op, child.remaining))
        if m == problem.num_ops:
            events.append(VerifySuccess(problem.target, problem.target))
            return Trajectory(problem.id, tuple(events), TERMINAL_GOAL)
        index: NodeIndex = (0,) * (m + 1)
        events.append(GeneratedNode(index, problem.target, child.remaining, op))
        events.append(MovingToNode(index))
        events.append(
            CurrentState(problem.target, child.remaining, tuple(o.render() for o in child.applied))
        )
        state = child
    return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)


def explored_subgoal(trajectory: Trajectory, path: OptimalPath, n: int) -> bool:
    """True iff some explored node matches the n-th subgoal state (multiset)."""
    if not 0 <= n < len(path.subgoal_states):
        raise ValueError(f"subgoal index out of range: {n}")
    view = rebuild_tree(trajectory)
    goal = path.subgoal_states[n].multiset()
    return any(
        tuple(sorted(view.nodes[index].state.remaining)) == goal
        for index in view.explored_order
    )


def _first_subgoal_occurrence(trajectory: Trajectory, path: OptimalPath, n: int):
    view = rebuild_tree(trajectory)
    goal = path.subgoal_states[n].multiset()
    for index in view.explored_order:
        if tuple(sorted(view.nodes[index].state.remaining)) == goal:
            return view, index
    return view, None


def _first_arrival_positions(events: Sequence[TrajectoryEvent], index: NodeIndex):
    """Event positions of a node's first Moving line and the state line after."""
    if index == ROOT_INDEX:
        return None, 0
    for pos, event in enumerate(events):
        if isinstance(event, MovingToNode) and event.node_index == index:
            if pos + 1 < len(events) and isinstance(events[pos + 1], CurrentState):
                return pos, pos + 1
            return pos, None
    return None, None


def augment_subgoal(
    generator: ContinuationGenerator,
    problem: Problem,
    trajectory: Trajectory,
    path: OptimalPath,
    n: int,
    selection: str = "first",
    rng: Optional[random.Random] = None,
    budget: Optional[BudgetSpec] = None,
) -> Tuple[Trajectory, AugmentationRecord]:
    """Guide a trajectory toward the n-th subgoal of its optimal path.

    No-op when the subgoal is already explored. Otherwise the selected
    explored child of the (n-1)-th subgoal's node is rewritten to the n-th
    subgoal (same node index), lines after the rewritten state line are
    pruned, and the generator continues from the rewritten prefix. When the
    parent has no explored children, a fresh child is synthesized right
    after the parent's first state line instead.
    """
    if selection not in NODE_SELECTIONS:
        raise ValueError(f"unknown selection: {selection!r}")
    if not 1 <= n <= problem.num_ops - 1:
        raise ValueError(f"subgoal index must be in [1, {problem.num_ops - 1}]")

    if explored_subgoal(trajectory, path, n):
        return trajectory, AugmentationRecord(problem.id, n, selection, rewritten=False)

    view, parent_index = _first_subgoal_occurrence(trajectory, path, n - 1)
    if parent_index is None:
        raise ValueError(f"trajectory never explored subgoal {n - 1}")
    parent = view.nodes[parent_index]
    op = path.ops[n - 1]
    new_state = apply_operation(parent.state, op)
    new_ops = tuple(o.render() for o in new_state.applied)

    events = list(trajectory.events)
    pool = parent.explored_children
    if pool:
        if selection == "first":
            child_index = pool[0]
        elif selection == "last":
            child_index = pool[-1]
        else:
            child_index = (rng or random.Random()).choice(pool)
        gen_pos = next(
            (i for i, e in enumerate(events)
             if isinstance(e, GeneratedNode) and e.node_index == child_index),
            None,
        )
        if gen_pos is None or gen_pos == 0 or not isinstance(events[gen_pos - 1], ExploringOperation):
            raise ValueError(f"child {child_index} has no rewritable generation lines")
        move_pos, state_pos = _first_arrival_positions(events, child_index)
        if move_pos is None or state_pos is None:
            raise ValueError(f"child {child_index} has no arrival lines")
        events[gen_pos - 1] = ExploringOperation(op, new_state.remaining)
        events[gen_pos] = GeneratedNode(child_index, problem.target, new_state.remaining, op)
        events[state_pos] = CurrentState(problem.target, new_state.remaining, new_ops)
        pruned = len(events) - (state_pos + 1)
        prefix_events = tuple(events[: state_pos + 1])
        synthesized = False
    else:
        child_index = view.next_child_index(parent_index)
        _, parent_state_pos = _first_arrival_positions(events, parent_index)
        if parent_state_pos is None:
            raise ValueError(f"subgoal node {parent_index} has no state line")
        inserted: List[TrajectoryEvent] = [
            ExploringOperation(op, new_state.remaining),
            GeneratedNode(child_index, problem.target, new_state.remaining, op),
            MovingToNode(child_index),
            CurrentState(problem.target, new_state.remaining, new_ops),
        ]
        pruned = len(events) - (parent_state_pos + 1)
        prefix_events = tuple(events[: parent_state_pos + 1]) + tuple(inserted)
        synthesized = True

    prefix = Trajectory(problem.id, prefix_events, TERMINAL_TRUNCATED)
    spec = budget or BudgetSpec()
    record = AugmentationRecord(
        problem_id=problem.id,
        subgoal_index=n,
        selection=selection,
        rewritten=True,
        synthesized=synthesized,
        node_index=render_index(child_index),
        pool_size=len(pool),
        pruned_events=pruned,
        prefix_units=budget_used(prefix.text, spec) if spec.is_additive() else len(prefix.text),
    )
    return generator.generate(problem, prefix), record


def gsos_generate(
    generator: ContinuationGenerator,
    problem: Problem,
    path: OptimalPath,
    tau: float = DEFAULT_TAU,
    selection: str = "first",
    seed: int = 0,
    iteration: int = 0,
    budget: Optional[BudgetSpec] = None,
) -> DatasetRecord:
    """One guided-generation pass: generate, then augment subgoals until the
    trajectory verifies or the subgoals run out."""
    selection_rng = random.Random(f"select:{seed}:{iteration}:{problem.id}")
    trajectory = generator.generate(problem, start_trajectory(problem))
    provenance: List[dict] = []
    for n in range(1, problem.num_ops):
        correct, _ = verify(trajectory, problem)
        if correct > tau:
            break
        trajectory, record = augment_subgoal(
            generator, problem, trajectory, path, n,
            selection=selection, rng=selection_rng, budget=budget,
        )
        provenance.append(record.to_json())
    correct, _ = verify(trajectory, problem)
    spec = budget or BudgetSpec()
    return DatasetRecord(
        problem_id=problem.id,
        target=problem.target,
        inputs=tuple(problem.inputs),
        prompt=make_prompt(problem),
        trajectory=trajectory.text,
        correct=correct,
        augmented=any(p["rewritten"] for p in provenance),
        subgoals_used=len(provenance),
        budget_used=budget_used(trajectory.text, spec) if spec.is_additive() else len(trajectory.text),
        seed=seed,
        iteration=iteration,
        provenance=provenance,
    )


def filter_records(records: Sequence[DatasetRecord], tau: float = DEFAULT_TAU):
    """Split records into (kept, dropped) by the binary correctness gate."""
    kept = [r for r in records if r.correct > tau]
    dropped = [r for r in records if r.correct <= tau]
    return kept, dropped
