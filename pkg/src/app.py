"""
File: src/app.py
Task: Command-line entry point.

    python -m src.app <command> [--config PATH] [--seed N] [--set KEY=VALUE ...]
                                [--out DIR] [--threads N]

Commands: collect, train-uan, fit-cem, train-actnet, pretrain,
finetune --variant V [--mode M], eval, reproduce-figures.

Exit codes: 0 success, 1 failure, 2 config error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from .config import WorkbenchConfig, get_log_level, load_config
from .errors import AcceptanceError, ConfigError, WorkbenchError
from .logs import setup_logging
from .pipeline.graph import COMMAND_STAGES, build_graph
from .sim.parallel import ShardPool
from .tasks.training import FINETUNE_MODES, VARIANTS

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_ACCEPTANCE = 0, 1, 2, 3

# fine-tune runs reproduce-figures needs: every variant, plus the ablations on the default sim
FIGURE_JOBS = [(v, "finetune") for v in VARIANTS] + [("default", "no-pretrain"), ("default", "no-e2e")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uan-workbench", description="Actuator calibration workbench")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set ppo_uan.updates=50 (repeatable)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--updates", type=int, default=None, help="PPO updates for every training stage (smoke runs)")

    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_STAGES:
        p = sub.add_parser(name, parents=[common])
        if name == "finetune":
            p.add_argument("--variant", choices=VARIANTS, required=True)
            p.add_argument("--mode", choices=FINETUNE_MODES, default="finetune")
    return parser


def initial_state(args: argparse.Namespace, cfg: WorkbenchConfig, pool: ShardPool) -> Dict[str, Any]:
    seed = cfg.seed
    if args.command in ("eval", "reproduce-figures"):
        calib_seeds = sorted(set(cfg.eval.calib_seeds) | {seed})
    else:
        calib_seeds = [seed]
    if args.command == "finetune":
        jobs = [(args.variant, args.mode)]
    elif args.command == "reproduce-figures":
        jobs = list(FIGURE_JOBS)
    else:
        jobs = []
    return {
        "cfg": cfg,
        "command": args.command,
        "seed": seed,
        "calib_seeds": calib_seeds,
        "finetune_jobs": jobs,
        "updates": args.updates,
        "pool": pool,
        "artifacts": {},
        "timing": {},
    }


def exit_code_for(error: Optional[Dict[str, Any]]) -> int:
    if not error:
        return EXIT_OK
    kind = error.get("kind")
    if kind == ConfigError.__name__:
        return EXIT_CONFIG
    if kind == AcceptanceError.__name__:
        return EXIT_ACCEPTANCE
    return EXIT_FAILURE


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(get_log_level())
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out, threads=args.threads)
    except ConfigError as e:
        logger.error("%s", e)
        for item in e.payload.get("errors", []):
            logger.error("  - %s", item)
        return EXIT_CONFIG

    os.makedirs(cfg.out_dir, exist_ok=True)
    setup_logging(cfg.log_level, cfg.out_dir)
    logger.info("%s: seed=%d out=%s threads=%d", args.command, cfg.seed, cfg.out_dir, cfg.threads)

    with ShardPool(cfg.threads) as pool:
        graph = build_graph(COMMAND_STAGES[args.command])
        result = graph.invoke(initial_state(args, cfg, pool))

    print(json.dumps(result.get("public_report", {}), indent=2, sort_keys=True, default=str))

    error = result.get("error")
    if error:
        return exit_code_for(error)
    report = result.get("report")
    if report is not None and not report.passed:
        failed: List[str] = [c["name"] for c in report.acceptance if c.get("passed") is False]
        logger.error("acceptance failed: %s", ", ".join(failed))
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main() -> None:
    try:
        code = run()
    except WorkbenchError as e:
        logger.error("%s %s", e, e.payload)
        code = exit_code_for(e.to_dict())
    sys.exit(code)


if __name__ == "__main__":
    main()
