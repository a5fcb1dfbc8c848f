"""Rule reward composition and the group-relative length penalty.

For a group of ``k`` responses to one query, every correct response earns a
length reward ``alpha * lam`` with ``lam = 0.5 - (L - L_min) / max(500, L_max - L_min)``;
incorrect responses earn none. The total per response is
``answer * format_coef * repetition_coef + length_reward``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .provider import ProviderError, RuleProvider, ScoreRequest
from .taskgen import GroundTruth
from .verifier import NO_PENALTY, PENALTY, VerifierConfig, parse_response

MIN_SPREAD = 500
_COEFS = (PENALTY, NO_PENALTY)


class InvalidGroupError(ValueError):
    pass


class GroupScoringError(RuntimeError):
    """A provider failed for at least one sample; the whole group is dropped."""

    def __init__(self, message: str, failed_ids: Sequence[str] = ()):
        super().__init__(message)
        self.failed_ids = list(failed_ids)


@dataclass(frozen=True)
class GroupLengthStats:
    l_min: int
    l_max: int
    delta_l: int


@dataclass(frozen=True)
class PenaltySchedule:
    alpha0: float = 0.2
    alpha_min: float = 0.05
    decay_steps: int = 2000
    length_ref: int = 1024

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha_min <= self.alpha0:
            raise ValueError("need 0 < alpha_min <= alpha0")
        if self.decay_steps < 1 or self.length_ref < 1:
            raise ValueError("decay_steps and length_ref must be >= 1")


@dataclass(frozen=True)
class RewardBreakdown:
    answer_reward: float
    format_coef: float
    repetition_coef: float
    rule_reward: float
    lam: float
    length_reward: float
    total: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def compose_rule_reward(answer_reward: float, format_coef: float, repetition_coef: float) -> float:
    if answer_reward not in (0.0, 1.0):
        raise ValueError(f"answer reward must be 0 or 1, got {answer_reward}")
    if format_coef not in _COEFS or repetition_coef not in _COEFS:
        raise ValueError(f"coefficients must be 0.1 or 1.0, got {format_coef}, {repetition_coef}")
    # keep the product on the exact lattice {0, 0.01, 0.1, 1}
    return round(answer_reward * format_coef * repetition_coef, 12)


def group_length_stats(lengths: Sequence[int]) -> GroupLengthStats:
    if len(lengths) < 2:
        raise InvalidGroupError("a group needs at least two responses")
    if any(int(n) <= 0 for n in lengths):
        raise InvalidGroupError("response lengths must be positive")
    lo, hi = int(min(lengths)), int(max(lengths))
    return GroupLengthStats(lo, hi, max(MIN_SPREAD, hi - lo))


def length_reward(length: int, correct: bool, stats: GroupLengthStats, alpha_eff: float) -> tuple[float, float]:
    """Return ``(lam, r_len)``; ``lam`` is reported even when the response is wrong."""
    if not stats.l_min <= length <= stats.l_max:
        raise ValueError(f"length {length} outside group range [{stats.l_min}, {stats.l_max}]")
    if alpha_eff <= 0:
        raise ValueError("alpha_eff must be positive")
    lam = 0.5 - (length - stats.l_min) / stats.delta_l
    return lam, (alpha_eff * lam if correct else 0.0)


def effective_alpha(schedule: PenaltySchedule, step: int, length: int) -> float:
    if step < 0 or length <= 0:
        raise ValueError("need step >= 0 and length > 0")
    base = max(schedule.alpha_min, schedule.alpha0 * (1.0 - step / schedule.decay_steps))
    scale = min(1.0, max(0.5, length / schedule.length_ref))
    return base * scale


def breakdowns_from_components(
    components: Sequence[tuple[float, float, float]],
    lengths: Sequence[int],
    schedule: PenaltySchedule,
    step: int,
    penalty_enabled: bool = True,
) -> tuple[list[RewardBreakdown], GroupLengthStats]:
    if len(components) != len(lengths):
        raise InvalidGroupError("components and lengths differ in size")
    stats = group_length_stats(lengths)
    out = []
    for (ans, fmt, rep), n in zip(components, lengths):
        rule = compose_rule_reward(ans, fmt, rep)
        alpha = effective_alpha(schedule, step, n)
        lam, r_len = length_reward(n, ans == 1.0, stats, alpha)
        if not penalty_enabled:
            r_len = 0.0
        out.append(RewardBreakdown(ans, fmt, rep, rule, lam, r_len, rule + r_len))
    return out, stats


def score_group(
    texts: Sequence[str],
    truth: GroundTruth,
    schedule: PenaltySchedule,
    step: int,
    provider=None,
    family: str = "",
    ids: Optional[Sequence[str]] = None,
    penalty_enabled: bool = True,
    verifier: VerifierConfig = VerifierConfig(),
    lengths: Optional[Sequence[int]] = None,
) -> tuple[list[RewardBreakdown], GroupLengthStats]:
    """Score one rollout group; any provider failure aborts the whole group.

    ``lengths`` may carry precomputed token counts of ``texts``.
    """
    if len(texts) < 2:
        raise InvalidGroupError("a group needs at least two responses")
    provider = provider or RuleProvider(verifier)
    ids = list(ids) if ids is not None else [f"r{i}" for i in range(len(texts))]
    requests = [ScoreRequest(i, family, t, truth) for i, t in zip(ids, texts)]
    try:
        responses = provider.score(requests)
    except ProviderError as exc:
        raise GroupScoringError(f"group aborted: {exc}", getattr(exc, "failed_ids", ())) from exc
    components = [(r.answer_reward, r.format_coef, r.repetition_coef) for r in responses]
    if lengths is None:
        lengths = [parse_response(t).token_length for t in texts]
    return breakdowns_from_components(components, lengths, schedule, step, penalty_enabled)
