"""Paired penalty ON/OFF training on one seed; writes a summary next to the runs.

    python scripts/run_demo.py [--config configs/demo.cfg] [--run-dir runs/demo]
"""

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from verirl.config import load_config
from verirl.harness import cmd_train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/demo.cfg")
    ap.add_argument("--run-dir", default="runs/demo")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.run_dir)
    summary = {"seed": cfg.seed}
    for flag in (True, False):
        name = "penalty_on" if flag else "penalty_off"
        t0 = time.perf_counter()
        result = cmd_train(replace(cfg, penalty_enabled=flag), run_dir=out / name)
        summary[name] = result.metrics["expected"]
        summary[name]["seconds"] = round(time.perf_counter() - t0, 2)
        m = summary[name]
        print(f"{name:12s} accuracy {m['accuracy']:.4f}  mean length {m['mean_length']:9.1f}  {m['seconds']:6.1f} s")
    on, off = summary["penalty_on"], summary["penalty_off"]
    summary["length_reduction"] = 1.0 - on["mean_length"] / off["mean_length"]
    summary["accuracy_gap_pp"] = 100.0 * abs(on["accuracy"] - off["accuracy"])
    print(f"length reduction {100 * summary['length_reduction']:.1f}%  accuracy gap {summary['accuracy_gap_pp']:.2f} pp")
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
