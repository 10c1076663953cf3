"""Dataset pipeline: sampling, corpus generation, evaluation, and reports.

Every stage is deterministic for a fixed config: problem sampling, mixture
assignment, stochastic continuation, and subgoal selection all draw from
string-keyed RNGs, so re-running a stage produces byte-identical outputs.
Manifests carry content hashes instead of timestamps for the same reason.
"""

from __future__ import annotations

import json
import hashlib
import logging
import os
import random
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .augment import (
    BuiltinGenerator,
    ContinuationGenerator,
    DatasetRecord,
    filter_records,
    gsos_generate,
    make_hint_prefix,
)
from .bridgeclient import BridgeClient, BridgeGenerator, bridge_command_from
from .config import ConfigError, PipelineConfig
from .countdown import OptimalPath, Problem, TargetSplit, generate_problem, split_targets
from .mdp import compute_gae, horizon_stats, segment_operations, terminal_reward
from .search import SearchConfig, mixture_config, run_symbolic, start_trajectory
from .trajectory import BudgetSpec, budget_used, make_prompt, verify

logger = logging.getLogger(__name__)

RECORDS_NAME = "records.jsonl"
CORPUS_NAME = "corpus.txt"
MANIFEST_NAME = "manifest.json"
RESUME_NAME = "resume.json"


def sample_problems(
    split: TargetSplit,
    seed: int,
    side: str,
    count: int,
    label: str,
    k: int = 4,
) -> List[Tuple[Problem, OptimalPath]]:
    """Sample `count` distinct problems; duplicates on (target, sorted inputs)
    are redrawn so each problem id appears exactly once."""
    rng = random.Random(f"problems:{seed}:{label}:{side}")
    seen = set()
    out: List[Tuple[Problem, OptimalPath]] = []
    while len(out) < count:
        problem, path = generate_problem(
            rng, split, side, problem_id=f"{label}-{len(out):06d}", k=k
        )
        key = (problem.target, tuple(sorted(problem.inputs)))
        if key in seen:
            continue
        seen.add(key)
        out.append((problem, path))
    return out


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_corpus_file(path: str, trajectories: Sequence[str]) -> None:
    with open(path, "w") as handle:
        handle.write("\n\n".join(trajectories))
        if trajectories:
            handle.write("\n")


def _write_corpus(out_dir: str, trajectories: Sequence[str]) -> None:
    _write_corpus_file(os.path.join(out_dir, CORPUS_NAME), trajectories)


def _write_manifest(out_dir: str, kind: str, config: PipelineConfig, extra: dict) -> dict:
    files = {}
    for name in (RECORDS_NAME, CORPUS_NAME):
        path = os.path.join(out_dir, name)
        if os.path.exists(path):
            files[name] = {"sha256": _sha256(path), "bytes": os.path.getsize(path)}
    manifest = {
        "kind": kind,
        "config": config.to_json(),
        "config_digest": config.digest(),
        "files": files,
    }
    manifest.update(extra)
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return manifest


@dataclass
class StageResult:
    out_dir: str
    count: int
    success_ratio: float


def _pretrain_record(args: Tuple) -> Tuple[str, str, int]:
    """Worker: one mixture trajectory for one problem. Returns the record's
    JSON line, the raw text, and the correctness bit."""
    problem_id, target, inputs, seed, kind, limit = args
    problem = Problem(problem_id, target, tuple(inputs))
    budget = BudgetSpec(kind, limit)
    cfg = mixture_config(problem_id, seed, budget)
    trajectory = run_symbolic(problem, cfg)
    correct, _ = verify(trajectory, problem)
    record = DatasetRecord(
        problem_id=problem_id,
        target=target,
        inputs=tuple(inputs),
        prompt=make_prompt(problem),
        trajectory=trajectory.text,
        correct=correct,
        augmented=False,
        subgoals_used=0,
        budget_used=budget_used(trajectory.text, budget),
        seed=seed,
        iteration=0,
        provenance=[
            {
                "source": "symbolic",
                "algorithm": cfg.algorithm,
                "heuristic": cfg.heuristic,
                "breadth": cfg.breadth,
            }
        ],
    )
    return record.to_json_line(), trajectory.text, correct


def make_pretrain(config: PipelineConfig, out_dir: str) -> StageResult:
    """Build the pre-training corpus: one symbolic trajectory per problem,
    searcher assigned by the deterministic 12-way mixture."""
    count = config.counts["pretrain"]
    split = split_targets(config.seed)
    problems = sample_problems(split, config.seed, "train", count, "pretrain", config.k)
    tasks = [
        (p.id, p.target, tuple(p.inputs), config.seed, config.budget.kind, config.budget.limit)
        for p, _ in problems
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_pretrain_record, tasks, chunksize=32))
    else:
        results = [_pretrain_record(task) for task in tasks]

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, RECORDS_NAME), "w") as handle:
        for line, _, _ in results:
            handle.write(line + "\n")
    _write_corpus(out_dir, [text for _, text, _ in results])
    wins = sum(correct for _, _, correct in results)
    ratio = wins / len(results) if results else 0.0
    _write_manifest(
        out_dir, "pretrain", config, {"count": len(results), "success_ratio": ratio}
    )
    logger.info("pretrain: %d records, success %.3f", len(results), ratio)
    return StageResult(out_dir, len(results), ratio)


def _iteration_seed(seed: int, iteration: int) -> int:
    return seed * 1_000_003 + iteration


def _make_generator(
    config: PipelineConfig, temperature: float, seed: int
) -> Tuple[ContinuationGenerator, Optional[BridgeClient]]:
    if config.generator.endpoint == "bridge":
        client = BridgeClient(bridge_command_from(config.generator.bridge_command))
        return BridgeGenerator(client, config.budget, temperature), client
    cfg = SearchConfig(
        algorithm="stochastic_continuation",
        heuristic=config.generator.heuristic,
        budget=config.budget,
        temperature_analog=temperature,
        seed=seed,
        prune=config.generator.prune,
    )
    return BuiltinGenerator(cfg), None


def _read_resume(out_dir: str, config: PipelineConfig) -> int:
    path = os.path.join(out_dir, RESUME_NAME)
    if not os.path.exists(path):
        return 0
    with open(path) as handle:
        token = json.load(handle)
    if token.get("config_digest") != config.digest():
        raise ConfigError(
            "resume token was written by a different config; "
            "remove the output directory or restore the original config"
        )
    return int(token.get("done", 0))


def _write_resume(out_dir: str, config: PipelineConfig, done: int) -> None:
    path = os.path.join(out_dir, RESUME_NAME)
    with open(path, "w") as handle:
        json.dump({"config_digest": config.digest(), "done": done}, handle)
        handle.write("\n")


def run_gsos(config: PipelineConfig, out_dir: str, resume: bool = False) -> StageResult:
    """Guided generation over the SFT problem set.

    Work is ordered iteration-major; each record is appended and the resume
    token updated as soon as it lands, so an interrupted run picks up at the
    first unfinished (iteration, problem) pair.
    """
    count = config.counts["sft"]
    split = split_targets(config.seed)
    problems = sample_problems(split, config.seed, "train", count, "sft", config.k)
    work = [
        (iteration, idx)
        for iteration in range(config.gsos.iterations)
        for idx in range(len(problems))
    ]

    os.makedirs(out_dir, exist_ok=True)
    done = _read_resume(out_dir, config) if resume else 0
    records_path = os.path.join(out_dir, RECORDS_NAME)
    if done == 0 or not os.path.exists(records_path):
        done = 0
        open(records_path, "w").close()
    else:
        # A crash can land between the record write and the token update;
        # trim the file back to the acknowledged count before appending.
        with open(records_path) as handle:
            lines = handle.readlines()[:done]
        with open(records_path, "w") as handle:
            handle.writelines(lines)

    generators: Dict[int, Tuple[ContinuationGenerator, Optional[BridgeClient]]] = {}
    try:
        with open(records_path, "a") as handle:
            for iteration, idx in work[done:]:
                if iteration not in generators:
                    generators[iteration] = _make_generator(
                        config,
                        config.generator.temperature_sft,
                        _iteration_seed(config.seed, iteration),
                    )
                generator, _ = generators[iteration]
                problem, path = problems[idx]
                record = gsos_generate(
                    generator,
                    problem,
                    path,
                    tau=config.gsos.tau,
                    selection=config.gsos.selection,
                    seed=config.seed,
                    iteration=iteration,
                    budget=config.budget,
                )
                handle.write(record.to_json_line() + "\n")
                handle.flush()
                done += 1
                _write_resume(out_dir, config, done)
                if done % 200 == 0:
                    logger.info("gsos: %d/%d records", done, len(work))
    finally:
        for _, client in generators.values():
            if client is not None:
                client.close()

    with open(records_path) as handle:
        records = [DatasetRecord.from_json_line(line) for line in handle]
    kept, dropped = filter_records(records, config.gsos.tau)
    _write_corpus(out_dir, [r.trajectory for r in kept])
    ratio = len(kept) / len(records) if records else 0.0
    _write_manifest(
        out_dir,
        "gsos",
        config,
        {
            "count": len(records),
            "kept": len(kept),
            "dropped": len(dropped),
            "success_ratio": ratio,
        },
    )
    resume_path = os.path.join(out_dir, RESUME_NAME)
    if os.path.exists(resume_path):
        os.remove(resume_path)
    logger.info("gsos: %d records, kept %d (%.3f)", len(records), len(kept), ratio)
    return StageResult(out_dir, len(records), ratio)


def evaluate(
    config: PipelineConfig,
    side: str = "test_unseen",
    count: Optional[int] = None,
    seeds: int = 1,
) -> dict:
    """Greedy decoding success ratio on fresh problems from one split side.

    With seeds > 1 the problem sample (and any stochastic generator state)
    is redrawn per seed and the report carries mean and spread. The target
    split itself always comes from the base seed, so test_unseen stays
    disjoint from everything generated for training.
    """
    count = count or config.counts["eval"]
    split = split_targets(config.seed)
    per_seed: List[float] = []
    for offset in range(seeds):
        seed = config.seed + offset
        problems = sample_problems(split, seed, side, count, f"eval-{side}", config.k)
        generator, client = _make_generator(
            config, config.generator.temperature_eval, seed
        )
        try:
            wins = 0
            for problem, _ in problems:
                trajectory = generator.generate(problem, start_trajectory(problem))
                correct, _ = verify(trajectory, problem)
                wins += correct
        finally:
            if client is not None:
                client.close()
        per_seed.append(wins / count)
    report = {
        "side": side,
        "count": count,
        "seeds": seeds,
        "success_ratio": sum(per_seed) / len(per_seed),
        "per_seed": per_seed,
    }
    if seeds > 1:
        report["std"] = statistics.stdev(per_seed)
    return report


def _deciles(values: Sequence[float]) -> List[float]:
    if len(values) < 2:
        return [float(v) for v in values]
    return [round(q, 4) for q in statistics.quantiles(values, n=10)]


def stats_report(
    records: Sequence[DatasetRecord],
    tau: float,
    budget: Optional[BudgetSpec] = None,
    losses: Optional[Dict[str, float]] = None,
) -> dict:
    """Corpus-level summary of a records file."""
    if not records:
        raise ConfigError("no records to summarize")
    kept, dropped = filter_records(records, tau)
    histogram = Counter(r.subgoals_used for r in records)
    spec = budget if budget is not None and budget.is_additive() else None
    horizon = horizon_stats([(r.trajectory, r.prompt) for r in records], spec)
    report = {
        "count": len(records),
        "success_ratio": len(kept) / len(records),
        "kept": len(kept),
        "dropped": len(dropped),
        "kept_length_deciles": _deciles([len(r.trajectory) for r in kept]),
        "dropped_length_deciles": _deciles([len(r.trajectory) for r in dropped]),
        "subgoals_histogram": {str(k): histogram[k] for k in sorted(histogram)},
        "augmented_ratio": sum(1 for r in records if r.augmented) / len(records),
        "horizon": horizon.to_json(),
    }
    if losses is not None:
        missing = [r.problem_id for r in records if r.problem_id not in losses]
        if missing:
            raise ConfigError(
                f"losses file is missing {len(missing)} problem ids (first: {missing[0]})"
            )
        report["loss_deciles"] = _deciles([losses[r.problem_id] for r in records])
    return report


def read_records(path: str) -> List[DatasetRecord]:
    try:
        with open(path) as handle:
            return [DatasetRecord.from_json_line(line) for line in handle if line.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read records {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"records file {path} is malformed: {exc}") from exc


def hint_sweep(
    config: PipelineConfig,
    count: Optional[int] = None,
    max_hints: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> dict:
    """Success ratio as a function of how many solution steps seed the prefix.

    n=0 is bare generation from the prompt; n=num_ops replays the full
    optimal path and must always verify. With out_dir, the trajectories of
    each sweep level are written to corpus_{n}.txt in the stage corpus
    format, for scoring hinted against unhinted generations.
    """
    count = count or config.counts["eval"]
    split = split_targets(config.seed)
    problems = sample_problems(split, config.seed, "train", count, "hints", config.k)
    top = config.k - 1 if max_hints is None else max_hints
    generator, client = _make_generator(
        config, config.generator.temperature_eval, config.seed
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    ratios: Dict[str, float] = {}
    try:
        for n in range(top + 1):
            wins = 0
            texts: List[str] = []
            for problem, path in problems:
                hinted = min(n, problem.num_ops)
                prefix = make_hint_prefix(problem, path, hinted)
                trajectory = generator.generate(problem, prefix)
                correct, _ = verify(trajectory, problem)
                wins += correct
                texts.append(trajectory.text)
            ratios[str(n)] = wins / count
            if out_dir is not None:
                _write_corpus_file(os.path.join(out_dir, f"corpus_{n}.txt"), texts)
    finally:
        if client is not None:
            client.close()
    return {"count": count, "success_by_hints": ratios}


def export_advantages(
    records: Sequence[DatasetRecord],
    config: PipelineConfig,
    out_path: str,
) -> int:
    """Per-record operation segments with terminal rewards and GAE advantages.

    Values are zero (no critic here), so returns equal advantages. Subgoal
    shaping needs the optimal paths, which live in the generation stage, not
    in the records, so the export carries the terminal reward only.
    """
    budget = config.budget if config.budget.is_additive() else None
    written = 0
    with open(out_path, "w") as handle:
        for record in records:
            segments = segment_operations(record.trajectory, record.prompt, budget)
            if not segments:
                continue
            rewards = [0.0] * len(segments)
            rewards[-1] = terminal_reward(
                record.correct,
                record.budget_used,
                config.budget.limit,
                correctness_weight=config.rl.correctness_weight,
                savings_weight=config.rl.savings_weight,
            )
            values = [0.0] * len(segments)
            series = compute_gae(rewards, values, config.rl.gamma, config.rl.lam)
            row = {
                "problem_id": record.problem_id,
                "iteration": record.iteration,
                "prompt": record.prompt,
                "segments": [
                    {"index": s.index, "span": list(s.token_span), "text": s.text}
                    for s in segments
                ],
                "rewards": rewards,
                "advantages": series.advantages,
                "returns": series.returns,
            }
            handle.write(json.dumps(row, sort_keys=True) + "\n")
            written += 1
    return written
