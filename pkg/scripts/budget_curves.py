"""Accuracy-vs-budget curves for the initial and the trained policy, both modes.

Prints sampled curves next to their exact expectation.

    python scripts/budget_curves.py [--config configs/demo.cfg] [--steps 300]
"""

import argparse
from dataclasses import replace

from verirl.config import load_config
from verirl.evalkit import budget_curve
from verirl.harness import Trainer, eval_tasks, evaluate_rollouts, expected_budget_curve, initial_params, mode_tasks
from verirl.thinkmode import NON_THINKING, THINKING


def show(label, params, cfg, tasks):
    print(f"\n{label}")
    print("mode          " + "".join(f"{b:>9d}" for b in cfg.budgets))
    for m, mode in enumerate((THINKING, NON_THINKING)):
        held = mode_tasks(tasks, mode)
        sampled = budget_curve(evaluate_rollouts(params, cfg, held, m), cfg.budgets)
        exact = expected_budget_curve(params, cfg.env, held, cfg.budgets, cfg.template)
        print(f"{mode:13s} " + "".join(f"{a:9.3f}" for a in sampled.accuracy))
        print(f"{'  expected':13s} " + "".join(f"{a:9.3f}" for a in exact.accuracy))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/demo.cfg")
    ap.add_argument("--steps", type=int)
    ap.add_argument("--run-dir", default="runs/budget")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    tasks = eval_tasks(cfg)
    show("initial policy", initial_params(cfg), cfg, tasks)
    trainer = Trainer(cfg, run_dir=args.run_dir)
    trainer.run(cfg.steps)
    show(f"after {cfg.steps} steps", trainer.state.params, cfg, tasks)


if __name__ == "__main__":
    main()
