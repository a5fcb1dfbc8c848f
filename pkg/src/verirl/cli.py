"""Command line entry point: ``python3 -m verirl <command> ...``.

Exit codes: 0 success, 2 config error, 3 provider error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from typing import Optional, Sequence

from . import harness
from .checkpoint import CheckpointError
from .config import TrainConfig, load_config
from .provider import ProviderError, ProviderServer
from .reward import GroupScoringError
from .taskgen import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_CHECKPOINT = 4


def parse_overrides(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    return out


def _summary(result: harness.TrainResult) -> None:
    exp = result.metrics["expected"]
    print(f"step {result.state.step}: expected accuracy {exp['accuracy']:.4f}, "
          f"mean length {exp['mean_length']:.1f} tokens")
    print(f"checkpoint: {result.checkpoint}")


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.run_dir:
        config = replace(config, run_dir=args.run_dir)
    _summary(harness.cmd_train(config))
    return EXIT_OK


def cmd_resume(args) -> int:
    overrides = parse_overrides(args.set or [])
    try:
        result = harness.cmd_resume(args.checkpoint, overrides, args.steps, run_dir=args.run_dir)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    _summary(result)
    return EXIT_OK


def cmd_eval_budget(args) -> int:
    config = load_config(args.config)
    curves = harness.cmd_eval_budget(args.checkpoint, config, args.out)
    for mode, curve in curves.items():
        pts = ", ".join(f"{int(b)}:{a:.3f}" for b, a in zip(curve.budgets, curve.accuracy))
        print(f"{mode}: {pts}")
    return EXIT_OK


def cmd_reward_check(args) -> int:
    verifier = load_config(args.config).verifier if args.config else TrainConfig().verifier
    errors = harness.cmd_reward_check(args.inp, args.out, verifier)
    if errors:
        print(f"{errors} line(s) could not be scored; see error objects in {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_demo(args) -> int:
    """Paired penalty ON / OFF runs under one seed."""
    config = load_config(args.config)
    results = {}
    for flag in (True, False):
        name = "on" if flag else "off"
        cfg = replace(config, penalty_enabled=flag, run_dir=f"{args.run_dir}/penalty_{name}")
        t0 = time.perf_counter()
        results[name] = harness.cmd_train(cfg).metrics["expected"]
        print(f"penalty {name:3s}: accuracy {results[name]['accuracy']:.4f}  "
              f"mean length {results[name]['mean_length']:8.1f}  ({time.perf_counter() - t0:.1f} s)")
    cut = 1.0 - results["on"]["mean_length"] / results["off"]["mean_length"]
    gap = 100.0 * abs(results["on"]["accuracy"] - results["off"]["accuracy"])
    print(f"length reduction {100 * cut:.1f}%, accuracy gap {gap:.2f} pp")
    return EXIT_OK


def cmd_serve(args) -> int:
    verifier = load_config(args.config).verifier if args.config else TrainConfig().verifier
    server = ProviderServer(args.host, args.port, verifier, workers=args.workers)
    host, port = server.address
    print(f"reward service on {host}:{port}", flush=True)
    with server:
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="verirl", description="Length-penalised GRPO on a synthetic reasoning environment.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="run the RL loop from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--run-dir", help="override the config's run_dir")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("resume", help="continue from a checkpoint, optionally resetting hyperparameters")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="learning_rate, kl_coefficient, clip_epsilon, penalty_enabled or penalty.<field>")
    s.add_argument("--steps", type=int, help="additional steps to run")
    s.add_argument("--run-dir")
    s.set_defaults(fn=cmd_resume)

    s = sub.add_parser("eval-budget", help="budget curves of a checkpoint, one CSV per mode")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_eval_budget)

    s = sub.add_parser("reward-check", help="score a JSONL batch of responses")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="take verifier thresholds from this config")
    s.set_defaults(fn=cmd_reward_check)

    s = sub.add_parser("demo", help="paired penalty on/off comparison")
    s.add_argument("--config", default="configs/demo.cfg")
    s.add_argument("--run-dir", default="runs/demo")
    s.set_defaults(fn=cmd_demo)

    s = sub.add_parser("serve", help="run the NDJSON reward service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--workers", type=int, default=8)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ProviderError, GroupScoringError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
