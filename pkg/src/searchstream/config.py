"""Pipeline configuration: one declarative JSON file, validated up front.

Every field has a desk-scale default so the CLI runs without a config file;
--paper-scale swaps in the full corpus sizes. Unknown keys are rejected
rather than ignored, since a typo silently falling back to a default is the
worst failure mode a data pipeline can have.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .trajectory import BudgetSpec

DESK_COUNTS = {"pretrain": 5000, "sft": 2000, "eval": 500}
PAPER_COUNTS = {"pretrain": 500_000, "sft": 200_000, "eval": 10_000}


class ConfigError(Exception):
    """Bad or inconsistent pipeline configuration (CLI exit code 2)."""


@dataclass
class GeneratorConfig:
    endpoint: str = "builtin"  # builtin | bridge
    heuristic: str = "sum"
    temperature_sft: float = 0.8
    temperature_eval: float = 0.0
    prune: bool = False
    bridge_command: Optional[str] = None
    bridge_train_command: Optional[str] = None


@dataclass
class GsosConfig:
    tau: float = 0.5
    selection: str = "first"
    iterations: int = 3


@dataclass
class RlConfig:
    gamma: float = 1.0
    lam: float = 0.95
    eta: float = 0.2
    kl_beta: float = 0.01
    correctness_weight: float = 1.0
    savings_weight: float = 0.25


@dataclass
class PipelineConfig:
    seed: int = 0
    k: int = 4
    counts: dict = field(default_factory=lambda: dict(DESK_COUNTS))
    budget: BudgetSpec = field(default_factory=lambda: BudgetSpec("chars", 1000))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    gsos: GsosConfig = field(default_factory=GsosConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    workers: int = 1

    def apply_paper_scale(self) -> None:
        self.counts = dict(PAPER_COUNTS)

    def validate(self) -> None:
        if self.generator.endpoint not in ("builtin", "bridge"):
            raise ConfigError(f"unknown generator endpoint: {self.generator.endpoint!r}")
        if self.generator.heuristic not in ("sum", "multiply"):
            raise ConfigError(f"unknown heuristic: {self.generator.heuristic!r}")
        if self.gsos.selection not in ("first", "rand", "last"):
            raise ConfigError(f"unknown node selection: {self.gsos.selection!r}")
        if self.gsos.iterations < 1:
            raise ConfigError("gsos.iterations must be >= 1")
        if not 0 <= self.gsos.tau < 1:
            raise ConfigError("gsos.tau must be in [0, 1)")
        if self.budget.kind not in ("chars", "whitespace_tokens", "external_tokenizer"):
            raise ConfigError(f"unknown budget kind: {self.budget.kind!r}")
        if self.generator.endpoint == "builtin" and self.budget.kind == "external_tokenizer":
            raise ConfigError("builtin generation cannot enforce external_tokenizer budgets")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.workers > 1 and self.generator.endpoint == "bridge":
            raise ConfigError("bridge generation runs single-worker")
        for name in ("pretrain", "sft", "eval"):
            if self.counts.get(name, 0) < 1:
                raise ConfigError(f"counts.{name} must be >= 1")
        if self.k < 2:
            raise ConfigError("k must be >= 2")

    def to_json(self) -> dict:
        data = asdict(self)
        data["budget"] = {"kind": self.budget.kind, "limit": self.budget.limit}
        return data

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _merge(instance, data: dict, section: str) -> None:
    for key, value in data.items():
        if not hasattr(instance, key):
            raise ConfigError(f"unknown config key: {section}{key}")
        setattr(instance, key, value)


def load_config(path: Optional[str]) -> PipelineConfig:
    config = PipelineConfig()
    if path is None:
        config.validate()
        return config
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")

    for key, value in data.items():
        if key == "budget":
            config.budget = BudgetSpec(
                value.get("kind", "chars"), value.get("limit", 0)
            )
        elif key == "generator":
            _merge(config.generator, value, "generator.")
        elif key == "gsos":
            _merge(config.gsos, value, "gsos.")
        elif key == "rl":
            _merge(config.rl, value, "rl.")
        elif key == "counts":
            unknown = set(value) - {"pretrain", "sft", "eval"}
            if unknown:
                raise ConfigError(f"unknown counts keys: {sorted(unknown)}")
            config.counts.update(value)
        elif hasattr(config, key):
            setattr(config, key, value)
        else:
            raise ConfigError(f"unknown config key: {key}")
    config.validate()
    return config
