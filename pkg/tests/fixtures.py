"""Random GRPO states with an enumerable group distribution, shared by tests."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from oracles import (
    advantages_ref,
    expected_loss_ref,
    group_outcomes,
    outcome_probability,
    p_correct,
    rewards_ref,
    softmax_ref,
)
from verirl.grpo import OptimizerState, PolicyParams, ResponseSample, RolloutGroup, surrogate_loss
from verirl.reward import PenaltySchedule, breakdowns_from_components
from verirl.taskgen import NumericTruth, TaskFamily, TaskInstance

SLOT = "Math/thinking"
TASK = TaskInstance("t", TaskFamily.MATH, "q", NumericTruth(Fraction(1)), 0.5, True)


@dataclass
class GradCase:
    state: OptimizerState
    theta_old: np.ndarray
    groups: list
    weights: list
    outcomes: list
    advs: list
    reward_gap: float  # max |package total - oracle reward|


def random_case(rng: np.random.Generator) -> GradCase:
    n = int(rng.integers(2, 5))
    k = int(rng.integers(2, 4))
    tau = float(rng.uniform(0.3, 1.5))
    clip_eps = float(rng.uniform(0.05, 0.5))
    beta = float(rng.choice([0.0, rng.uniform(0.001, 1.0)]))
    tokens = np.sort(rng.choice(np.arange(16, 20_000), size=n, replace=False))
    p_max, tau0, gamma, d = rng.uniform(0.3, 1.0), rng.uniform(100, 5000), rng.uniform(0, 2), rng.uniform()
    p_bucket = [p_correct(p_max, tau0, gamma, float(t), d) for t in tokens]
    schedule = PenaltySchedule(alpha0=float(rng.uniform(0.1, 0.5)), alpha_min=0.05,
                               decay_steps=int(rng.integers(10, 3000)), length_ref=int(rng.integers(16, 4000)))
    step = int(rng.integers(0, 4000))
    base = max(schedule.alpha_min, schedule.alpha0 * (1 - step / schedule.decay_steps))

    def alpha_of(length):
        return base * min(1.0, max(0.5, length / schedule.length_ref))

    def fmt(b):
        return 0.1 if b == 0 else 1.0

    theta_old = rng.normal(0, 1, n)
    ref = rng.normal(0, 1, n)
    while True:
        off = rng.choice([0.0, 1.0])
        theta = theta_old + off * rng.normal(0, 0.15, n)
        ratio = np.array(softmax_ref(theta, tau)) / np.array(softmax_ref(theta_old, tau))
        # keep central differences away from the clipping kinks
        if np.all(np.abs(ratio - (1 - clip_eps)) > 1e-3) and np.all(np.abs(ratio - (1 + clip_eps)) > 1e-3):
            break

    pi_old = softmax_ref(theta_old, tau)
    logp_old = np.log(pi_old)
    outcomes = group_outcomes(n, k)
    groups, weights, advs, gap = [], [], [], 0.0
    for outcome in outcomes:
        lengths = [int(tokens[b]) for b, _ in outcome]
        comps = [(1.0 if c else 0.0, fmt(b), 1.0) for b, c in outcome]
        bds, stats = breakdowns_from_components(comps, lengths, schedule, step)
        want = rewards_ref(outcome, tokens, alpha_of, fmt)
        gap = max(gap, max(abs(b.total - w) for b, w in zip(bds, want)))
        samples = [ResponseSample(b, c, "", int(tokens[b]), float(logp_old[b])) for b, c in outcome]
        groups.append(RolloutGroup(TASK, SLOT, samples, bds, stats))
        weights.append(outcome_probability(outcome, pi_old, p_bucket))
        advs.append(advantages_ref(want))
    state = OptimizerState(
        step=step, learning_rate=1.0, kl_coefficient=beta, clip_epsilon=clip_eps,
        params=PolicyParams({SLOT: theta}, tau), reference=PolicyParams({SLOT: ref}, tau),
        penalty=schedule,
    )
    return GradCase(state, theta_old, groups, weights, outcomes, advs, gap)


def expected_analytic(case: GradCase) -> tuple[float, np.ndarray]:
    loss, grad = 0.0, 0.0
    for g, w in zip(case.groups, case.weights):
        l_, g_ = surrogate_loss(g, case.state)
        loss += w * l_
        grad = grad + w * g_
    return loss, grad


def oracle_loss(case: GradCase, theta) -> float:
    s = case.state
    return expected_loss_ref(theta, case.theta_old, s.reference.logits[SLOT], s.params.temperature,
                             s.clip_epsilon, s.kl_coefficient, case.outcomes, case.weights, case.advs)


def finite_difference(case: GradCase, h: float = 1e-5) -> np.ndarray:
    theta = case.state.params.logits[SLOT]
    out = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        out[j] = (oracle_loss(case, theta + e) - oracle_loss(case, theta - e)) / (2 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
