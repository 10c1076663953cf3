"""Client for the external model bridge (line-delimited JSON over pipes).

The bridge is any subprocess that answers one JSON object per line on
stdout for each JSON request line on stdin:

    {"op": "generate", "id": 1, "prefix_text": "...", "max_new_units": 200,
     "temperature": 0.0}                 -> {"id": 1, "continuation_text": "..."}
    {"op": "score", "id": 2, "texts": ["..."]}
        -> {"id": 2, "per_text_loss": [...], "token_logprobs": [[...]], "units": [...]}
    {"op": "tokenize", "id": 3, "text": "..."}
        -> {"id": 3, "token_spans": [[start, end], ...]}

Responses may carry {"error": "..."} instead; transport failures raise
BridgeUnavailable so the CLI can exit with its bridge-failure code.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .countdown import Problem
from .trajectory import (
    BridgeUnavailable,
    BudgetSpec,
    MalformedLine,
    Trajectory,
    budget_used,
    parse_trajectory,
)

BRIDGE_ENV_VAR = "SEARCHSTREAM_BRIDGE"


class BridgeClient:
    """Owns one bridge subprocess and serializes requests to it."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc: Optional[subprocess.Popen] = None
        self._next_id = 0

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise BridgeUnavailable(f"cannot start bridge {self.command!r}: {exc}") from exc
        return self._proc

    def request(self, op: str, **payload) -> dict:
        proc = self._ensure()
        self._next_id += 1
        message = {"op": op, "id": self._next_id, **payload}
        try:
            proc.stdin.write(json.dumps(message) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (OSError, BrokenPipeError) as exc:
            raise BridgeUnavailable(f"bridge transport failed: {exc}") from exc
        if not line:
            raise BridgeUnavailable("bridge closed its stdout")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeUnavailable(f"bridge sent a non-JSON line: {line!r}") from exc
        if response.get("id") != self._next_id:
            raise BridgeUnavailable(
                f"bridge answered id {response.get('id')} to request {self._next_id}"
            )
        if response.get("error"):
            raise BridgeUnavailable(f"bridge error: {response['error']}")
        return response

    def generate(self, prefix_text: str, max_new_units: int, temperature: float) -> str:
        response = self.request(
            "generate",
            prefix_text=prefix_text,
            max_new_units=max_new_units,
            temperature=temperature,
        )
        return response.get("continuation_text", "")

    def score(self, texts: Sequence[str]) -> dict:
        return self.request("score", texts=list(texts))

    def tokenize(self, text: str) -> List[Tuple[int, int]]:
        response = self.request("tokenize", text=text)
        return [tuple(span) for span in response.get("token_spans", [])]

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=10)
            except Exception:
                self._proc.kill()
        self._proc = None

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def bridge_command_from(config_command: Optional[str]) -> List[str]:
    """Resolve the bridge command line, letting the environment override."""
    command = os.environ.get(BRIDGE_ENV_VAR) or config_command
    if not command:
        raise BridgeUnavailable(
            f"no bridge command configured (set generator.bridge_command or ${BRIDGE_ENV_VAR})"
        )
    return shlex.split(command)


@dataclass
class BridgeGenerator:
    """ContinuationGenerator backed by a bridge subprocess."""

    client: BridgeClient
    budget: BudgetSpec
    temperature: float = 0.0

    def generate(self, problem: Problem, prefix: Trajectory) -> Trajectory:
        prefix_text = prefix.text
        if self.budget.limit > 0:
            used = budget_used(prefix_text, self.budget, tokenizer=self.client.tokenize)
            remaining = self.budget.limit - used
            if remaining <= 0:
                return Trajectory(prefix.problem_id, prefix.events, "truncated")
        else:
            remaining = 4096
        continuation = self.client.generate(prefix_text, remaining, self.temperature)
        text = prefix_text + continuation
        try:
            return parse_trajectory(text, prefix.problem_id, strict=False)
        except MalformedLine:
            # A weak model can corrupt the prefix's own last line (say, by
            # continuing the prompt without a newline). That output carries
            # no usable events, so fall back to the prefix, cut here.
            return Trajectory(prefix.problem_id, prefix.events, "truncated")
