"""Operation-level reward and advantage machinery over trajectory text.

The generated portion of a trajectory (everything after the prompt line)
splits into one segment per line; segments are the units that carry
rewards, advantages, and per-operation log-probabilities. Token spans are
expressed in whatever unit the budget spec measures (chars, whitespace
tokens, or an external tokenizer's tokens), so a scorer's per-unit
log-probabilities can be summed segment by segment without re-tokenizing.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

from .countdown import OptimalPath
from .trajectory import (
    BudgetSpec,
    CurrentState,
    MalformedLine,
    Trajectory,
    parse_line,
)

DEFAULT_GAMMA = 1.0
DEFAULT_LAMBDA = 0.95
DEFAULT_ETA = 0.2
DEFAULT_SAVINGS_WEIGHT = 0.25
DEFAULT_KL_BETA = 0.01


class AlignmentError(Exception):
    """Tokenizer spans do not tile the text being segmented."""


@dataclass(frozen=True)
class OpSegment:
    """One generated line (with its newline, when present in the source)."""

    index: int
    text: str
    token_span: Tuple[int, int]
    is_terminal: bool
    is_truncated: bool


def _spans_for_segment(
    seg_start: int, seg_end: int, spans: Sequence[Tuple[int, int]], cursor: int
) -> Tuple[int, int]:
    """Token index range covering [seg_start, seg_end) chars; tokens must not
    straddle the boundary."""
    first = cursor
    while cursor < len(spans) and spans[cursor][1] <= seg_end:
        cursor += 1
    if cursor < len(spans) and spans[cursor][0] < seg_end:
        raise AlignmentError(
            f"token span {spans[cursor]} straddles segment boundary at {seg_end}"
        )
    if (first < len(spans) and spans[first][0] != seg_start) and seg_start != seg_end:
        raise AlignmentError(f"no token starts at segment offset {seg_start}")
    return first, cursor


def segment_operations(
    trajectory_text: str,
    prompt: str,
    spec: Optional[BudgetSpec] = None,
    tokenizer: Optional[Callable[[str], Sequence[Tuple[int, int]]]] = None,
) -> List[OpSegment]:
    """Split the generated portion of a trajectory at newline boundaries.

    The prompt line is excluded. Segment texts concatenate back to the
    generated portion exactly. The final segment is flagged truncated when
    its line is not a complete grammar line (a budget cut mid-line).
    """
    spec = spec or BudgetSpec()
    if not trajectory_text.startswith(prompt):
        raise ValueError("trajectory text does not start with the prompt")
    generated = trajectory_text[len(prompt):]
    if generated.startswith("\n"):
        generated = generated[1:]
    elif generated:
        raise ValueError("prompt is not newline-terminated in the trajectory")
    if not generated:
        return []

    pieces: List[str] = generated.splitlines(keepends=True)
    spans: Optional[Sequence[Tuple[int, int]]] = None
    if spec.kind == "external_tokenizer":
        if tokenizer is None:
            raise ValueError("external_tokenizer segmentation needs a tokenizer")
        spans = list(tokenizer(generated))
        covered = 0
        for s, e in spans:
            if s != covered or e <= s:
                raise AlignmentError(f"token spans do not tile the text at {covered}")
            covered = e
        if covered != len(generated):
            raise AlignmentError("token spans do not cover the full text")

    segments: List[OpSegment] = []
    char_cursor = 0
    unit_cursor = 0
    token_cursor = 0
    for i, piece in enumerate(pieces):
        is_last = i == len(pieces) - 1
        if spec.kind == "chars":
            span = (unit_cursor, unit_cursor + len(piece))
            unit_cursor = span[1]
        elif spec.kind == "whitespace_tokens":
            span = (unit_cursor, unit_cursor + len(piece.split()))
            unit_cursor = span[1]
        else:
            first, token_cursor = _spans_for_segment(
                char_cursor, char_cursor + len(piece), spans, token_cursor
            )
            span = (first, token_cursor)
        char_cursor += len(piece)
        line = piece.rstrip("\n")
        truncated = False
        if is_last:
            try:
                parse_line(line)
            except MalformedLine:
                truncated = True
        segments.append(OpSegment(i, piece, span, is_terminal=is_last, is_truncated=truncated))
    return segments


def terminal_reward(
    correct: float,
    used: int,
    limit: int,
    correctness_weight: float = 1.0,
    savings_weight: float = DEFAULT_SAVINGS_WEIGHT,
) -> float:
    """Final-segment reward: correctness plus a budget-savings bonus.

    The savings term only pays off on correct trajectories, so speed is
    never rewarded over solving; with no limit the term is zero.
    """
    reward = correctness_weight * correct
    if limit > 0:
        saved = max(0.0, 1.0 - used / limit)
        reward += savings_weight * correct * saved
    return reward


def subgoal_bonus(
    segments: Sequence[OpSegment],
    trajectory: Trajectory,
    path: OptimalPath,
    eta: float = DEFAULT_ETA,
) -> List[float]:
    """Per-segment bonus for the first arrival at each optimal-path subgoal.

    Arrival means a Current State line whose numbers match a subgoal's
    multiset; repeats pay nothing, the root is not a subgoal, and each of
    the N-1 subgoals pays at most once.
    """
    bonuses = [0.0] * len(segments)
    unclaimed = {}
    for n, state in enumerate(path.subgoal_states):
        if n > 0:
            unclaimed.setdefault(state.multiset(), n)
    for pos, event in enumerate(trajectory.events):
        if pos == 0 or pos - 1 >= len(segments):
            continue
        if isinstance(event, CurrentState):
            key = tuple(sorted(event.numbers))
            if key in unclaimed:
                del unclaimed[key]
                bonuses[pos - 1] += eta
    return bonuses


@dataclass(frozen=True)
class AdvantageSeries:
    advantages: List[float]
    returns: List[float]


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float = DEFAULT_GAMMA,
    lam: float = DEFAULT_LAMBDA,
) -> AdvantageSeries:
    """Generalized advantage estimation over one reward/value series.

    The value after the final step is zero; returns are advantages plus
    values, which is exactly the regression target for the value function.
    """
    if len(rewards) != len(values):
        raise ValueError("rewards and values must have equal length")
    n = len(rewards)
    advantages = [0.0] * n
    running = 0.0
    for h in range(n - 1, -1, -1):
        next_value = values[h + 1] if h + 1 < n else 0.0
        delta = rewards[h] + gamma * next_value - values[h]
        running = delta + gamma * lam * running
        advantages[h] = running
    returns = [a + v for a, v in zip(advantages, values)]
    return AdvantageSeries(advantages, returns)


def op_logprob(
    token_logprobs: Sequence[float], segments: Sequence[OpSegment]
) -> List[float]:
    """Sum per-unit log-probabilities over each segment's token span."""
    total = len(token_logprobs)
    covered = 0
    sums: List[float] = []
    for seg in segments:
        start, end = seg.token_span
        if start != covered or end < start or end > total:
            raise AlignmentError(
                f"segment span {seg.token_span} does not tile {total} logprobs"
            )
        sums.append(sum(token_logprobs[start:end]))
        covered = end
    if covered != total:
        raise AlignmentError(f"segments cover {covered} of {total} logprobs")
    return sums


def kl_penalty(
    logprobs: Sequence[float], ref_logprobs: Sequence[float], beta: float = DEFAULT_KL_BETA
) -> List[float]:
    """Per-segment KL regularizer against a frozen reference policy."""
    if len(logprobs) != len(ref_logprobs):
        raise ValueError("logprob series must have equal length")
    return [-beta * (lp - ref) for lp, ref in zip(logprobs, ref_logprobs)]


@dataclass(frozen=True)
class HorizonStats:
    trajectories: int
    mean_ratio: float
    median_ratio: float
    max_ratio: float

    def to_json(self) -> dict:
        return {
            "trajectories": self.trajectories,
            "mean_ratio": self.mean_ratio,
            "median_ratio": self.median_ratio,
            "max_ratio": self.max_ratio,
        }


def horizon_stats(
    pairs: Sequence[Tuple[str, str]],
    spec: Optional[BudgetSpec] = None,
    tokenizer: Optional[Callable[[str], Sequence[Tuple[int, int]]]] = None,
) -> HorizonStats:
    """Segment-per-token ratios over (trajectory_text, prompt) pairs.

    This is the effective horizon reduction of operation-level credit
    assignment versus token-level: one decision point per line instead of
    one per token. Prompt-only trajectories are skipped.
    """
    ratios: List[float] = []
    for text, prompt in pairs:
        segments = segment_operations(text, prompt, spec, tokenizer)
        if not segments:
            continue
        tokens = segments[-1].token_span[1]
        if tokens <= 0:
            continue
        ratios.append(len(segments) / tokens)
    if not ratios:
        return HorizonStats(0, 0.0, 0.0, 0.0)
    return HorizonStats(
        len(ratios),
        sum(ratios) / len(ratios),
        statistics.median(ratios),
        max(ratios),
    )
