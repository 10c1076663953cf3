"""Symbolic searchers over the Countdown tree, emitting trajectory text.

Two deterministic generators (heuristic DFS with threshold pruning, and
breadth-limited best-first BFS) plus a stochastic continuation engine that
can resume search from any parsed trajectory prefix. All three share the
same line conventions: single-number results are verified inline right
after their Exploring line, every Moving line is followed by the state it
arrives at, and failed branches jump straight to the node where search
resumes.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from .countdown import OpSpec, Problem, SearchState, enumerate_children, make_prompt_state
from .trajectory import (
    BudgetSpec,
    CurrentState,
    ExploringOperation,
    GeneratedNode,
    MovingToNode,
    NoSolutionFound,
    NodeIndex,
    ROOT_INDEX,
    TERMINAL_GOAL,
    TERMINAL_NO_SOLUTION,
    TERMINAL_TRUNCATED,
    Trajectory,
    TrajectoryEvent,
    VerifyFail,
    VerifySuccess,
    budget_used,
    emit_event,
    line_cost,
    rebuild_tree,
)

ALGORITHMS = ("dfs", "bfs", "stochastic_continuation")
HEURISTICS = ("sum", "multiply")
MAX_BREADTH = 5


class PrefixUnusable(Exception):
    """continue_search could not reconstruct a node to resume from."""


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for one symbolic search run.

    prune=None resolves by algorithm: DFS prunes children whose per-number
    mean |difference| reaches the target, the continuation engine defaults
    to exhaustive (no pruning) so it can serve as a completion oracle, and
    BFS never threshold-prunes (breadth is its only filter).
    """

    algorithm: str = "dfs"
    heuristic: str = "sum"
    breadth: int = 1
    budget: BudgetSpec = field(default_factory=BudgetSpec)
    temperature_analog: float = 0.0
    seed: int = 0
    prune: Optional[bool] = None

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm: {self.algorithm!r}")
        if self.heuristic not in HEURISTICS:
            raise ValueError(f"unknown heuristic: {self.heuristic!r}")
        if self.algorithm == "bfs" and not 1 <= self.breadth <= MAX_BREADTH:
            raise ValueError(f"breadth must be in [1, {MAX_BREADTH}]")
        if self.budget.limit > 0 and not self.budget.is_additive():
            raise ValueError("symbolic search budgets must be chars or whitespace_tokens")
        if self.temperature_analog < 0:
            raise ValueError("temperature_analog must be >= 0")

    def resolve_prune(self) -> bool:
        if self.prune is not None:
            return self.prune
        return self.algorithm == "dfs"


@lru_cache(maxsize=256)
def _factors(target: int) -> Tuple[int, ...]:
    return tuple(f for f in range(1, target + 1) if target % f == 0)


def heuristic_value(numbers: Sequence[int], target: int, kind: str) -> int:
    """Distance-to-target score of a state; lower is more promising.

    sum: total absolute difference to the target across the numbers.
    multiply: per number, distance to the nearest factor of the target
    (1 and the target itself count as factors), summed.
    """
    if kind == "sum":
        return sum(abs(n - target) for n in numbers)
    if kind == "multiply":
        factors = _factors(target)
        return sum(min(abs(n - f) for f in factors) for n in numbers)
    raise ValueError(f"unknown heuristic: {kind!r}")


def _keeps(numbers: Sequence[int], target: int, kind: str, prune: bool) -> bool:
    # Threshold pruning compares the per-number mean so 3-number and
    # 2-number children face the same bar the worked samples imply.
    if not prune:
        return True
    return heuristic_value(numbers, target, kind) / len(numbers) < target


class _Candidate:
    __slots__ = ("op", "numbers", "score")

    def __init__(self, op: OpSpec, numbers: Tuple[int, ...], score: int):
        self.op = op
        self.numbers = numbers
        self.score = score


def _candidates(
    state: SearchState, target: int, cfg: SearchConfig, prune: bool,
    skip: Optional[set] = None,
) -> List[_Candidate]:
    out: List[_Candidate] = []
    for op, child in enumerate_children(state):
        if skip and op.render() in skip:
            continue
        if not _keeps(child.remaining, target, cfg.heuristic, prune):
            continue
        out.append(_Candidate(op, child.remaining, heuristic_value(child.remaining, target, cfg.heuristic)))
    out.sort(key=lambda c: c.score)  # stable: canonical order breaks ties
    return out


class _Walker:
    """Accumulates events under an additive budget; drops lines that overflow."""

    def __init__(self, events: List[TrajectoryEvent], spec: BudgetSpec, used: int):
        self.events = events
        self.spec = spec
        self.used = used
        self.truncated = False

    def append(self, event: TrajectoryEvent) -> bool:
        if self.truncated:
            return False
        if self.spec.limit > 0:
            cost = line_cost(emit_event(event), self.spec, first=not self.events)
            if self.used + cost > self.spec.limit:
                self.truncated = True
                return False
            self.used += cost
        self.events.append(event)
        return True


@dataclass
class _Node:
    index: NodeIndex
    state: SearchState
    untried: List[_Candidate]
    next_child: int = 0


def _pick(cands: List[_Candidate], temperature: float, rng: random.Random) -> _Candidate:
    """Pop the next candidate: greedy at temperature 0, else a softmax draw
    over negative scores / temperature.

    Scores are normalized by the candidate spread before the softmax, so the
    useful temperature range stays near 1 regardless of how large the
    heuristic distances are for a given target.
    """
    if temperature <= 0 or len(cands) == 1:
        return cands.pop(0)
    low = cands[0].score
    spread = max(c.score for c in cands) - low
    scale = temperature * spread if spread > 0 else 1.0
    weights = [math.exp(-(c.score - low) / scale) for c in cands]
    total = rng.random() * sum(weights)
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if acc >= total:
            return cands.pop(i)
    return cands.pop()


def _state_event(target: int, state: SearchState) -> CurrentState:
    return CurrentState(target, state.remaining, tuple(op.render() for op in state.applied))


def _dfs_loop(
    target: int,
    nodes: Dict[NodeIndex, _Node],
    stack: List[NodeIndex],
    current: NodeIndex,
    ready: bool,
    walker: _Walker,
    cfg: SearchConfig,
    prune: bool,
    rng: random.Random,
) -> str:
    """Depth-first exploration from a prepared position; returns terminal."""
    while True:
        node = nodes[current]
        if not node.untried:
            resume = None
            while stack:
                index = stack.pop()
                if nodes[index].untried:
                    resume = index
                    break
            if resume is None:
                if walker.append(NoSolutionFound()):
                    return TERMINAL_NO_SOLUTION
                return TERMINAL_TRUNCATED
            current = resume
            if not (walker.append(MovingToNode(current))
                    and walker.append(_state_event(target, nodes[current].state))):
                return TERMINAL_TRUNCATED
            ready = True
            continue
        if not ready:
            if not (walker.append(MovingToNode(current))
                    and walker.append(_state_event(target, node.state))):
                return TERMINAL_TRUNCATED
            ready = True
            continue

        cand = _pick(node.untried, cfg.temperature_analog, rng)
        if not walker.append(ExploringOperation(cand.op, cand.numbers)):
            return TERMINAL_TRUNCATED
        if len(cand.numbers) == 1:
            if cand.numbers[0] == target:
                if walker.append(VerifySuccess(target, target)):
                    return TERMINAL_GOAL
                return TERMINAL_TRUNCATED
            if not walker.append(VerifyFail(cand.numbers[0], target)):
                return TERMINAL_TRUNCATED
            ready = False
            continue
        child_index = current + (node.next_child,)
        node.next_child += 1
        child_state = SearchState(cand.numbers, node.state.applied + (cand.op,))
        if not walker.append(GeneratedNode(child_index, target, cand.numbers, cand.op)):
            return TERMINAL_TRUNCATED
        nodes[child_index] = _Node(
            child_index, child_state,
            _candidates(child_state, target, cfg, prune),
        )
        if not (walker.append(MovingToNode(child_index))
                and walker.append(_state_event(target, child_state))):
            return TERMINAL_TRUNCATED
        stack.append(current)
        current = child_index
        ready = True


def _run_dfs(problem: Problem, cfg: SearchConfig) -> Trajectory:
    prune = cfg.resolve_prune()
    rng = random.Random(f"dfs:{cfg.seed}:{problem.id}")
    root_state = make_prompt_state(problem)
    events: List[TrajectoryEvent] = []
    walker = _Walker(events, cfg.budget, 0)
    walker.append(_state_event(problem.target, root_state))
    nodes = {ROOT_INDEX: _Node(ROOT_INDEX, root_state,
                               _candidates(root_state, problem.target, cfg, prune))}
    terminal = _dfs_loop(problem.target, nodes, [], ROOT_INDEX, True, walker, cfg, prune, rng)
    return Trajectory(problem.id, tuple(events), terminal)


def _run_bfs(problem: Problem, cfg: SearchConfig) -> Trajectory:
    prune = cfg.resolve_prune()
    target = problem.target
    root_state = make_prompt_state(problem)
    events: List[TrajectoryEvent] = []
    walker = _Walker(events, cfg.budget, 0)
    walker.append(_state_event(target, root_state))
    nodes = {ROOT_INDEX: _Node(ROOT_INDEX, root_state, [])}
    level: List[Tuple[int, int, NodeIndex]] = [(0, 0, ROOT_INDEX)]
    seq = 0

    while level:
        next_level: List[Tuple[int, int, NodeIndex]] = []
        for _, _, index in sorted(level):
            node = nodes[index]
            if index != ROOT_INDEX:
                if not (walker.append(MovingToNode(index))
                        and walker.append(_state_event(target, node.state))):
                    return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)
            best = _candidates(node.state, target, cfg, prune)[: cfg.breadth]
            for i, cand in enumerate(best):
                if not walker.append(ExploringOperation(cand.op, cand.numbers)):
                    return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)
                if len(cand.numbers) == 1:
                    if cand.numbers[0] == target:
                        if walker.append(VerifySuccess(target, target)):
                            return Trajectory(problem.id, tuple(events), TERMINAL_GOAL)
                        return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)
                    if not walker.append(VerifyFail(cand.numbers[0], target)):
                        return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)
                    if i + 1 < len(best):
                        if not (walker.append(MovingToNode(index))
                                and walker.append(_state_event(target, node.state))):
                            return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)
                    continue
                child_index = index + (node.next_child,)
                node.next_child += 1
                child_state = SearchState(cand.numbers, node.state.applied + (cand.op,))
                if not walker.append(GeneratedNode(child_index, target, cand.numbers, cand.op)):
                    return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)
                nodes[child_index] = _Node(child_index, child_state, [])
                seq += 1
                next_level.append((cand.score, seq, child_index))
        level = next_level

    if walker.append(NoSolutionFound()):
        return Trajectory(problem.id, tuple(events), TERMINAL_NO_SOLUTION)
    return Trajectory(problem.id, tuple(events), TERMINAL_TRUNCATED)


def run_symbolic(problem: Problem, cfg: SearchConfig) -> Trajectory:
    """Produce one full trajectory for a problem with a symbolic searcher."""
    cfg.validate()
    if cfg.algorithm == "dfs":
        return _run_dfs(problem, cfg)
    if cfg.algorithm == "bfs":
        return _run_bfs(problem, cfg)
    raise ValueError("run_symbolic handles dfs and bfs; use continue_search")


def continue_search(prefix: Trajectory, cfg: SearchConfig) -> Trajectory:
    """Resume search from a trajectory prefix, appending lines in place.

    The prefix's tree is rebuilt; search resumes at its current node without
    re-generating any existing node index or re-exploring ops already tried
    at a node. Terminal prefixes come back unchanged. The budget limit
    applies to the whole text, prefix included.
    """
    cfg.validate()
    if cfg.algorithm != "stochastic_continuation":
        raise ValueError("continue_search requires algorithm=stochastic_continuation")
    if prefix.terminal in (TERMINAL_GOAL, TERMINAL_NO_SOLUTION):
        return prefix
    if not prefix.events or not isinstance(prefix.events[0], CurrentState):
        raise PrefixUnusable("prefix has no opening state line")

    target = prefix.events[0].target
    prune = cfg.resolve_prune()
    try:
        view = rebuild_tree(prefix)
    except ValueError as exc:
        raise PrefixUnusable(str(exc)) from exc

    events = list(prefix.events)
    used = 0
    if cfg.budget.limit > 0:
        used = budget_used(prefix.text, cfg.budget)
        if used >= cfg.budget.limit:
            return Trajectory(prefix.problem_id, tuple(events), TERMINAL_TRUNCATED)
    walker = _Walker(events, cfg.budget, used)

    nodes: Dict[NodeIndex, _Node] = {}
    for index, tree_node in view.nodes.items():
        tried = {op.render() for op in tree_node.tried_ops}
        node = _Node(
            index,
            tree_node.state,
            _candidates(tree_node.state, target, cfg, prune, skip=tried),
        )
        children = [c[-1] for c in tree_node.generated_children]
        node.next_child = max(children) + 1 if children else 0
        nodes[index] = node

    current = view.current
    last = prefix.events[-1]
    ready = isinstance(last, CurrentState)
    if isinstance(last, MovingToNode) and last.node_index in nodes:
        current = last.node_index
        if not walker.append(_state_event(target, nodes[current].state)):
            return Trajectory(prefix.problem_id, tuple(events), TERMINAL_TRUNCATED)
        ready = True
    stack = [current[:i] for i in range(1, len(current)) if current[:i] in nodes]

    rng = random.Random(f"continue:{cfg.seed}:{prefix.problem_id}:{len(prefix.events)}")
    terminal = _dfs_loop(target, nodes, stack, current, ready, walker, cfg, prune, rng)
    return Trajectory(prefix.problem_id, tuple(events), terminal)


def start_trajectory(problem: Problem) -> Trajectory:
    """A prompt-only trajectory (the seed for continuation-based generation)."""
    state = make_prompt_state(problem)
    return Trajectory(
        problem.id,
        (CurrentState(problem.target, state.remaining, ()),),
        TERMINAL_TRUNCATED,
    )


# The pre-training corpus mixes every symbolic searcher uniformly: DFS plus
# BFS at each breadth, crossed with both heuristics.
MIXTURE: Tuple[Tuple[str, str, int], ...] = tuple(
    [("dfs", h, 1) for h in HEURISTICS]
    + [("bfs", h, b) for h in HEURISTICS for b in range(1, MAX_BREADTH + 1)]
)


def mixture_config(problem_id: str, seed: int, budget: BudgetSpec) -> SearchConfig:
    """Deterministically assign one of the 12 mixture configs to a problem."""
    rng = random.Random(f"mixture:{seed}:{problem_id}")
    algorithm, heuristic, breadth = MIXTURE[rng.randrange(len(MIXTURE))]
    return SearchConfig(
        algorithm=algorithm, heuristic=heuristic, breadth=breadth,
        budget=budget, seed=seed,
    )
