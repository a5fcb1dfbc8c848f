"""How far the policy drifts from its reference for a range of KL coefficients.

Gradient descent on the KL term alone is stable only while
lr * beta * (largest KL Hessian eigenvalue) < 2, so each beta is run with
the step size clipped to that bound (with a safety factor).

    python scripts/kl_sweep.py [--steps 100] [--betas 0 0.01 1 1000]
"""

import argparse
from dataclasses import replace

import numpy as np

from verirl.config import load_config
from verirl.harness import Trainer


def kl_curvature(params):
    worst = 0.0
    for slot in params.logits:
        p = params.probs(slot)
        hess = (np.diag(p) - np.outer(p, p)) / params.temperature**2
        worst = max(worst, float(np.linalg.eigvalsh(hess).max()))
    return worst


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/demo.cfg")
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.01, 1.0, 100.0, 1000.0])
    ap.add_argument("--safety", type=float, default=0.5)
    args = ap.parse_args()

    cfg = load_config(args.config)
    h = kl_curvature(Trainer(cfg, run_dir="runs/kl_sweep").state.params)
    print(f"largest KL Hessian eigenvalue at the reference: {h:.3f}")
    print(f"{'beta':>10s} {'lr':>10s} {'sup drift':>12s} {'kl':>10s}")
    for beta in args.betas:
        lr = cfg.learning_rate if beta == 0 else min(cfg.learning_rate, args.safety * 2.0 / (beta * h))
        trainer = Trainer(replace(cfg, kl_coefficient=beta, learning_rate=lr), run_dir="runs/kl_sweep")
        records = trainer.run(args.steps)
        drift = trainer.state.params.sup_distance(trainer.state.reference)
        print(f"{beta:10.3g} {lr:10.3g} {drift:12.3e} {records[-1]['kl']:10.3e}")


if __name__ == "__main__":
    main()
