"""Group Relative Policy Optimization over a finite bucket space.

The policy for each (family, mode) slot is a softmax over length buckets.
Advantages come from within-group reward statistics (no value model), the
loss adds an exact KL term against a frozen reference, and gradients are
analytic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .reward import GroupLengthStats, InvalidGroupError, PenaltySchedule, RewardBreakdown
from .taskgen import FAMILIES, TaskFamily, TaskInstance

log = logging.getLogger(__name__)

MODES = ("thinking", "non_thinking")


class InvalidStateError(ValueError):
    pass


def slot_key(family: TaskFamily, mode: str) -> str:
    return f"{TaskFamily(family).value}/{mode}"


def all_slots() -> list[str]:
    return [slot_key(f, m) for f in FAMILIES for m in MODES]


def log_softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    return np.exp(log_softmax(logits, temperature))


@dataclass
class PolicyParams:
    logits: dict[str, np.ndarray]
    temperature: float = 0.6

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise InvalidStateError("temperature must be positive")
        self.logits = {k: np.array(v, dtype=float) for k, v in self.logits.items()}

    @classmethod
    def init(
        cls,
        n_buckets: int,
        temperature: float = 0.6,
        priors: Optional[Mapping[str, Sequence[float]]] = None,
    ) -> "PolicyParams":
        """One logit vector per slot, from per-mode priors (zeros by default)."""
        priors = priors or {}
        logits = {}
        for fam in FAMILIES:
            for mode in MODES:
                prior = np.array(priors.get(mode, np.zeros(n_buckets)), dtype=float)
                if prior.shape != (n_buckets,):
                    raise InvalidStateError(f"prior for {mode} needs {n_buckets} entries")
                logits[slot_key(fam, mode)] = prior.copy()
        return cls(logits, temperature)

    def probs(self, slot: str) -> np.ndarray:
        return softmax(self.logits[slot], self.temperature)

    def log_probs(self, slot: str) -> np.ndarray:
        return log_softmax(self.logits[slot], self.temperature)

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.logits.items()}, self.temperature)

    def sup_distance(self, other: "PolicyParams") -> float:
        return max(float(np.max(np.abs(self.logits[k] - other.logits[k]))) for k in self.logits)

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "logits": {k: [float(x) for x in v] for k, v in sorted(self.logits.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolicyParams":
        return cls({k: np.array(v, dtype=float) for k, v in data["logits"].items()}, float(data["temperature"]))


@dataclass(frozen=True)
class ResponseSample:
    bucket_index: int
    is_correct: bool
    text: str
    token_length: int
    log_prob: float


@dataclass
class RolloutGroup:
    task: TaskInstance
    slot: str
    samples: list[ResponseSample]
    breakdowns: list[RewardBreakdown]
    stats: GroupLengthStats

    def __post_init__(self) -> None:
        if len(self.samples) < 2 or len(self.samples) != len(self.breakdowns):
            raise InvalidGroupError("need k >= 2 samples with one breakdown each")

    @property
    def rewards(self) -> np.ndarray:
        return np.array([b.total for b in self.breakdowns])


@dataclass
class OptimizerState:
    step: int
    learning_rate: float
    kl_coefficient: float
    clip_epsilon: float
    params: PolicyParams
    reference: PolicyParams
    penalty: PenaltySchedule = field(default_factory=PenaltySchedule)
    penalty_enabled: bool = True
    advantage_epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: PolicyParams, learning_rate: float, kl_coefficient: float = 0.01,
              clip_epsilon: float = 0.2, penalty: PenaltySchedule = PenaltySchedule(),
              penalty_enabled: bool = True, advantage_epsilon: float = 1e-8) -> "OptimizerState":
        return cls(0, learning_rate, kl_coefficient, clip_epsilon, params.copy(), params.copy(),
                   penalty, penalty_enabled, advantage_epsilon)


# ---------------------------------------------------------------- pieces


def advantages(rewards: Sequence[float], epsilon: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise InvalidGroupError("advantages need a group of at least two rewards")
    centred = r - r.sum() / r.size
    centred -= centred.sum() / r.size  # second pass removes rounding left in the mean
    return centred / (math.sqrt(centred @ centred / r.size) + epsilon)


def exact_kl(p_logits: np.ndarray, q_logits: np.ndarray, temperature: float) -> float:
    if np.shape(p_logits) != np.shape(q_logits):
        raise InvalidStateError("logit vectors differ in length")
    lp = log_softmax(p_logits, temperature)
    lq = log_softmax(q_logits, temperature)
    return max(0.0, float(np.sum(np.exp(lp) * (lp - lq))))


def kl_gradient(p_logits: np.ndarray, q_logits: np.ndarray, temperature: float) -> np.ndarray:
    """d KL(softmax(p/T) || softmax(q/T)) / d p."""
    lp = log_softmax(p_logits, temperature)
    lq = log_softmax(q_logits, temperature)
    p = np.exp(lp)
    d = lp - lq
    return p * (d - np.sum(p * d)) / temperature


def surrogate_loss(group: RolloutGroup, state: OptimizerState) -> tuple[float, np.ndarray]:
    """Clipped GRPO loss for one group and its gradient w.r.t. the slot's logits."""
    slot = group.slot
    if slot not in state.params.logits or slot not in state.reference.logits:
        raise InvalidStateError(f"unknown policy slot {slot!r}")
    theta = state.params.logits[slot]
    ref = state.reference.logits[slot]
    if theta.shape != ref.shape:
        raise InvalidStateError("params and reference differ in shape")
    n = theta.size
    buckets = np.array([s.bucket_index for s in group.samples])
    if buckets.min() < 0 or buckets.max() >= n:
        raise InvalidStateError("sample bucket outside the policy's support")
    tau = state.params.temperature
    eps = state.clip_epsilon

    logp = log_softmax(theta, tau)
    probs = np.exp(logp)
    adv = advantages(group.rewards, state.advantage_epsilon)
    ratio = np.exp(logp[buckets] - np.array([s.log_prob for s in group.samples]))
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    objective = np.minimum(ratio * adv, clipped * adv)
    # gradient flows only where the unclipped branch is the active minimum
    active = (ratio * adv <= clipped * adv) | ((ratio >= 1.0 - eps) & (ratio <= 1.0 + eps))
    weights = np.where(active, ratio * adv, 0.0)

    k = len(group.samples)
    score = np.zeros(n)
    np.add.at(score, buckets, weights)
    # d log pi(b) / d theta = (e_b - pi) / tau
    grad_obj = (score - weights.sum() * probs) / tau
    loss = -objective.mean() + state.kl_coefficient * exact_kl(theta, ref, tau)
    grad = -grad_obj / k + state.kl_coefficient * kl_gradient(theta, ref, tau)
    return float(loss), grad


def accumulate(state: OptimizerState, groups: Sequence[RolloutGroup]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and mean gradient (per slot) over groups, in group order."""
    if not groups:
        raise ValueError("step needs at least one group")
    grads = {k: np.zeros_like(v) for k, v in state.params.logits.items()}
    total = 0.0
    for g in groups:
        loss, grad = surrogate_loss(g, state)
        total += loss
        grads[g.slot] += grad
    m = len(groups)
    return total / m, {k: v / m for k, v in grads.items()}


def apply_gradients(state: OptimizerState, grads: Mapping[str, np.ndarray]) -> OptimizerState:
    params = state.params.copy()
    for k, g in grads.items():
        params.logits[k] = params.logits[k] - state.learning_rate * g
    return replace(state, step=state.step + 1, params=params)


def step(state: OptimizerState, groups: Sequence[RolloutGroup]) -> OptimizerState:
    _, grads = accumulate(state, groups)
    return apply_gradients(state, grads)


_RESETTABLE = {"learning_rate", "kl_coefficient", "clip_epsilon", "penalty_enabled"}
_PENALTY_FIELDS = {"alpha0", "alpha_min", "decay_steps", "length_ref"}


def reset_and_resume(state: OptimizerState, overrides: Optional[Mapping[str, object]] = None) -> OptimizerState:
    """Re-snapshot the reference to the current policy and apply hyperparameter overrides.

    Accepted keys: learning_rate, kl_coefficient, clip_epsilon, penalty_enabled,
    ``penalty`` (a PenaltySchedule or mapping) and ``penalty.<field>``.
    """
    overrides = dict(overrides or {})
    changes: dict[str, object] = {}
    penalty_changes: dict[str, object] = {}
    for key, value in overrides.items():
        if key in _RESETTABLE:
            changes[key] = bool(value) if key == "penalty_enabled" else float(value)
        elif key == "penalty":
            if isinstance(value, PenaltySchedule):
                changes["penalty"] = value
            elif isinstance(value, Mapping):
                penalty_changes.update(value)
            else:
                raise ValueError("penalty override must be a PenaltySchedule or mapping")
        elif key.startswith("penalty.") and key.split(".", 1)[1] in _PENALTY_FIELDS:
            penalty_changes[key.split(".", 1)[1]] = value
        else:
            raise ValueError(f"cannot override {key!r} on reset")
    if penalty_changes:
        unknown = set(penalty_changes) - _PENALTY_FIELDS
        if unknown:
            raise ValueError(f"unknown penalty fields {sorted(unknown)}")
        base = changes.get("penalty", state.penalty)
        typed = {k: (int(v) if k in ("decay_steps", "length_ref") else float(v)) for k, v in penalty_changes.items()}
        changes["penalty"] = replace(base, **typed)
    if "learning_rate" in changes and changes["learning_rate"] < 0:
        raise ValueError("learning_rate must be non-negative")
    new = replace(state, params=state.params.copy(), reference=state.params.copy(), **changes)
    log.info("reset at step %d with overrides %s", state.step, overrides)
    return new
