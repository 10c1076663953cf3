from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from searchstream import (
    AlignmentError,
    BudgetSpec,
    compute_gae,
    horizon_stats,
    kl_penalty,
    make_prompt,
    op_logprob,
    parse_trajectory,
    segment_operations,
    subgoal_bonus,
    terminal_reward,
)
from searchstream.countdown import OpSpec, OptimalPath, apply_operation, make_prompt_state
from searchstream.trajectory import CurrentState

from samples import SEARCH_SUCCESS, SEARCH_SUCCESS_PROBLEM

PROMPT = make_prompt(SEARCH_SUCCESS_PROBLEM)
GENERATED = SEARCH_SUCCESS[len(PROMPT) + 1:]


def _fixture_path() -> OptimalPath:
    ops = (OpSpec(58, "-", 56, 2), OpSpec(15, "+", 8, 23), OpSpec(2, "+", 23, 25))
    states = [make_prompt_state(SEARCH_SUCCESS_PROBLEM)]
    for op in ops[:-1]:
        states.append(apply_operation(states[-1], op))
    return OptimalPath(SEARCH_SUCCESS_PROBLEM.id, ops, tuple(states))


def test_segments_cover_generated_text():
    segments = segment_operations(SEARCH_SUCCESS, PROMPT)
    assert len(segments) == len(SEARCH_SUCCESS.split("\n")) - 1
    assert "".join(s.text for s in segments) == GENERATED
    assert segments[-1].is_terminal
    assert not segments[-1].is_truncated
    assert all(not s.is_terminal for s in segments[:-1])
    cursor = 0
    for s in segments:
        assert s.token_span == (cursor, cursor + len(s.text))
        cursor = s.token_span[1]
    assert cursor == len(GENERATED)


def test_segments_empty_for_prompt_only():
    assert segment_operations(PROMPT, PROMPT) == []


def test_segments_require_matching_prompt():
    with pytest.raises(ValueError):
        segment_operations(SEARCH_SUCCESS, "Current State: 9:[1], Operations: []")


def test_segments_flag_midline_truncation():
    cut = SEARCH_SUCCESS[:-7]
    segments = segment_operations(cut, PROMPT)
    assert segments[-1].is_truncated
    assert "".join(s.text for s in segments) == cut[len(PROMPT) + 1:]


def test_segments_whitespace_token_spans():
    spec = BudgetSpec("whitespace_tokens", 0)
    segments = segment_operations(SEARCH_SUCCESS, PROMPT, spec)
    assert segments[0].token_span[0] == 0
    total = segments[-1].token_span[1]
    assert total == len(GENERATED.split())
    for a, b in zip(segments, segments[1:]):
        assert a.token_span[1] == b.token_span[0]


def test_segments_external_tokenizer_spans():
    spec = BudgetSpec("external_tokenizer", 0)

    def char_pairs(text):
        spans = []
        i = 0
        while i < len(text):
            width = 2 if i + 2 <= len(text) and "\n" not in text[i:i + 2] else 1
            spans.append((i, i + width))
            i += width
        return spans

    segments = segment_operations(SEARCH_SUCCESS, PROMPT, spec, tokenizer=char_pairs)
    spans = char_pairs(GENERATED)
    assert segments[-1].token_span[1] == len(spans)
    covered = 0
    for s in segments:
        assert s.token_span[0] == covered
        covered = s.token_span[1]


def test_segments_reject_straddling_tokens():
    spec = BudgetSpec("external_tokenizer", 0)

    def straddler(text):
        # one giant token across the first newline boundary
        first_nl = text.index("\n")
        return [(0, first_nl + 2)] + [(i, i + 1) for i in range(first_nl + 2, len(text))]

    with pytest.raises(AlignmentError):
        segment_operations(SEARCH_SUCCESS, PROMPT, spec, tokenizer=straddler)


def test_segments_reject_gappy_tokenizer():
    spec = BudgetSpec("external_tokenizer", 0)
    with pytest.raises(AlignmentError):
        segment_operations(
            SEARCH_SUCCESS, PROMPT, spec, tokenizer=lambda t: [(0, 1), (2, len(t))]
        )


def test_terminal_reward_values():
    assert terminal_reward(1, 500, 1000) == pytest.approx(1.125)
    assert terminal_reward(0, 500, 1000) == 0.0
    assert terminal_reward(1, 1200, 1000) == 1.0
    assert terminal_reward(1, 0, 0) == 1.0
    assert terminal_reward(1, 250, 1000, correctness_weight=2.0, savings_weight=0.4) == pytest.approx(2.3)


def test_subgoal_bonus_once_per_subgoal():
    path = _fixture_path()
    trajectory = parse_trajectory(SEARCH_SUCCESS)
    segments = segment_operations(SEARCH_SUCCESS, PROMPT)
    bonuses = subgoal_bonus(segments, trajectory, path)
    assert sum(b > 0 for b in bonuses) == 2
    assert sum(bonuses) == pytest.approx(0.4)
    # the trajectory revisits the first subgoal's numbers several times
    revisits = sum(
        1
        for e in trajectory.events
        if isinstance(e, CurrentState) and tuple(sorted(e.numbers)) == (2, 8, 15)
    )
    assert revisits >= 2
    # each bonus lands on the segment of the first matching state line
    first_arrivals = {}
    for pos, event in enumerate(trajectory.events):
        if pos and isinstance(event, CurrentState):
            key = tuple(sorted(event.numbers))
            first_arrivals.setdefault(key, pos - 1)
    for n in (1, 2):
        seg = first_arrivals[path.subgoal_states[n].multiset()]
        assert bonuses[seg] == pytest.approx(0.2)


def test_subgoal_bonus_ignores_root():
    path = _fixture_path()
    trajectory = parse_trajectory(SEARCH_SUCCESS)
    segments = segment_operations(SEARCH_SUCCESS, PROMPT)
    bonuses = subgoal_bonus(segments, trajectory, path, eta=1.0)
    root = tuple(sorted(SEARCH_SUCCESS_PROBLEM.inputs))
    for pos, event in enumerate(trajectory.events):
        if pos and isinstance(event, CurrentState):
            if tuple(sorted(event.numbers)) == root:
                assert bonuses[pos - 1] == 0.0


def test_gae_frozen_example():
    series = compute_gae([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], gamma=1.0, lam=0.95)
    assert series.advantages == pytest.approx([0.9025, 0.95, 1.0])
    assert series.returns == series.advantages


def test_gae_validates_lengths():
    with pytest.raises(ValueError):
        compute_gae([1.0], [1.0, 2.0])
    empty = compute_gae([], [])
    assert empty.advantages == [] and empty.returns == []


def _gae_oracle(rewards, values, gamma, lam):
    n = len(rewards)
    out = []
    for t in range(n):
        acc = 0.0
        for l in range(n - t):
            nxt = values[t + l + 1] if t + l + 1 < n else 0.0
            delta = rewards[t + l] + gamma * nxt - values[t + l]
            acc += (gamma * lam) ** l * delta
        out.append(acc)
    return out


def test_gae_against_double_loop_oracle():
    rng = random.Random(17)
    for _ in range(300):
        n = rng.randint(1, 40)
        rewards = [rng.uniform(-2, 2) for _ in range(n)]
        values = [rng.uniform(-2, 2) for _ in range(n)]
        gamma = rng.choice([1.0, 0.99, 0.9])
        lam = rng.choice([1.0, 0.95, 0.5, 0.0])
        got = compute_gae(rewards, values, gamma, lam).advantages
        want = _gae_oracle(rewards, values, gamma, lam)
        assert max(abs(g - w) for g, w in zip(got, want)) < 1e-9


@given(
    st.lists(st.integers(-5, 5), min_size=1, max_size=20),
    st.lists(st.integers(-5, 5), min_size=1, max_size=20),
)
def test_gae_telescopes_exactly_at_unit_factors(rewards, values):
    n = min(len(rewards), len(values))
    rewards, values = [float(r) for r in rewards[:n]], [float(v) for v in values[:n]]
    series = compute_gae(rewards, values, gamma=1.0, lam=1.0)
    for t in range(n):
        assert series.advantages[t] == sum(rewards[t:]) - values[t]
        assert series.returns[t] == sum(rewards[t:])


def test_op_logprob_sums_spans():
    segments = segment_operations(SEARCH_SUCCESS, PROMPT)
    logprobs = [-0.5] * len(GENERATED)
    sums = op_logprob(logprobs, segments)
    assert len(sums) == len(segments)
    for s, total in zip(segments, sums):
        assert total == pytest.approx(-0.5 * len(s.text))
    assert sum(sums) == pytest.approx(-0.5 * len(GENERATED))


def test_op_logprob_rejects_misaligned():
    segments = segment_operations(SEARCH_SUCCESS, PROMPT)
    with pytest.raises(AlignmentError):
        op_logprob([-0.5] * (len(GENERATED) - 1), segments)
    with pytest.raises(AlignmentError):
        op_logprob([-0.5] * (len(GENERATED) + 3), segments)
    with pytest.raises(AlignmentError):
        op_logprob([-0.5] * len(GENERATED), segments[1:])


def test_kl_penalty():
    assert kl_penalty([-1.0, -2.0], [-1.5, -1.5], beta=0.01) == pytest.approx(
        [-0.005, 0.005]
    )
    with pytest.raises(ValueError):
        kl_penalty([-1.0], [-1.0, -2.0])


def test_horizon_stats_on_fixture():
    stats = horizon_stats([(SEARCH_SUCCESS, PROMPT)])
    lines = len(SEARCH_SUCCESS.split("\n")) - 1
    assert stats.trajectories == 1
    assert stats.mean_ratio == pytest.approx(lines / len(GENERATED))
    assert stats.max_ratio == stats.mean_ratio
    assert stats.mean_ratio < 0.10
    empty = horizon_stats([(PROMPT, PROMPT)])
    assert empty.trajectories == 0
    payload = stats.to_json()
    assert set(payload) == {"trajectories", "mean_ratio", "median_ratio", "max_ratio"}
