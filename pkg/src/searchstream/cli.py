"""Command line entry point.

Exit codes: 0 success, 2 configuration problem, 3 bridge subprocess failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config
from .countdown import TargetSplit, split_targets
from .trajectory import BridgeUnavailable

logger = logging.getLogger("searchstream")


def _load(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    if getattr(args, "paper_scale", False):
        config.apply_paper_scale()
    if getattr(args, "count", None):
        for name in ("pretrain", "sft", "eval"):
            config.counts[name] = args.count
    if getattr(args, "workers", None):
        config.workers = args.workers
    config.validate()
    return config


def _emit(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as handle:
            handle.write(text)
    sys.stdout.write(text)


def _cmd_split(args: argparse.Namespace) -> int:
    split = split_targets(args.seed)
    if args.out:
        with open(args.out, "w") as handle:
            handle.write(split.to_text())
    else:
        sys.stdout.write(split.to_text())
    return 0


def _cmd_make_pretrain(args: argparse.Namespace) -> int:
    config = _load(args)
    result = pipeline.make_pretrain(config, args.out)
    _emit(
        {"out": result.out_dir, "count": result.count, "success_ratio": result.success_ratio},
        None,
    )
    return 0


def _cmd_gsos(args: argparse.Namespace) -> int:
    config = _load(args)
    result = pipeline.run_gsos(config, args.out, resume=args.resume)
    _emit(
        {"out": result.out_dir, "count": result.count, "success_ratio": result.success_ratio},
        None,
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load(args)
    report = pipeline.evaluate(config, side=args.side, count=args.count, seeds=args.seeds)
    _emit(report, args.out)
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _load(args)
    records = pipeline.read_records(args.records)
    losses = None
    if args.losses:
        try:
            with open(args.losses) as handle:
                losses = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read losses {args.losses}: {exc}") from exc
    report = pipeline.stats_report(
        records, tau=args.tau, budget=config.budget, losses=losses
    )
    _emit(report, args.out)
    return 0


def _cmd_hint_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    report = pipeline.hint_sweep(
        config, count=args.count, max_hints=args.max_hints, out_dir=args.out_dir
    )
    _emit(report, args.out)
    return 0


def _cmd_advantages(args: argparse.Namespace) -> int:
    config = _load(args)
    records = pipeline.read_records(args.records)
    if args.limit:
        records = records[: args.limit]
    written = pipeline.export_advantages(records, config, args.out)
    _emit({"out": args.out, "count": written}, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="searchstream",
        description="Search-trajectory corpora for arithmetic puzzle solvers",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, counts: bool = True) -> None:
        p.add_argument("--config", help="JSON config file")
        if counts:
            p.add_argument("--paper-scale", action="store_true",
                           help="full corpus sizes instead of desk-scale defaults")
            p.add_argument("--count", type=int, help="override record count")

    p = sub.add_parser("split", help="write the train/test target split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("make-pretrain", help="build the symbolic search corpus")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_make_pretrain)

    p = sub.add_parser("gsos", help="guided generation over the SFT problem set")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true",
                   help="continue from the resume token in --out")
    p.set_defaults(func=_cmd_gsos)

    p = sub.add_parser("evaluate", help="greedy success ratio on fresh problems")
    common(p)
    p.add_argument("--side", default="test_unseen",
                   choices=("train", "test_seen", "test_unseen"))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="summarize a records file")
    common(p, counts=False)
    p.add_argument("--records", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--losses", help="JSON file of per-problem losses")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("hint-sweep", help="success ratio vs revealed solution steps")
    common(p)
    p.add_argument("--max-hints", type=int)
    p.add_argument("--out-dir", help="also write corpus_{n}.txt per sweep level")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_hint_sweep)

    p = sub.add_parser("advantages", help="export per-operation advantages")
    common(p, counts=False)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=_cmd_advantages)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return 2
    except BridgeUnavailable as exc:
        logger.error("bridge failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
