"""Response parsing and the three rule-based reward components.

Tokens are whitespace-delimited words throughout the package.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .sandbox import run_tests
from .taskgen import CodeTruth, ConstraintTruth, GroundTruth, NumericTruth

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
BOX_OPEN = "\\box["
BOX_CLOSE = "]"

PENALTY = 0.1
NO_PENALTY = 1.0


def count_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ParsedResponse:
    text: str
    think_text: str
    answer_text: str
    boxed_spans: tuple[str, ...]
    token_length: int

    @property
    def think_tokens(self) -> int:
        return count_tokens(self.think_text)


@dataclass(frozen=True)
class RuleFlags:
    answer_correct: bool
    format_violation: bool
    repetition_detected: bool


def split_think(text: str) -> tuple[str, str]:
    start = text.find(THINK_OPEN)
    if start >= 0:
        end = text.find(THINK_CLOSE, start + len(THINK_OPEN))
        if end >= 0:
            return text[start + len(THINK_OPEN):end], text[end + len(THINK_CLOSE):]
    return "", text


def extract_boxed(text: str) -> tuple[str, ...]:
    spans = []
    pos = 0
    while True:
        start = text.find(BOX_OPEN, pos)
        if start < 0:
            break
        body = start + len(BOX_OPEN)
        end = text.find(BOX_CLOSE, body)
        if end < 0:
            break
        spans.append(text[body:end])
        pos = end + 1
    return tuple(spans)


@functools.lru_cache(maxsize=256)
def parse_response(text: str) -> ParsedResponse:
    think, answer = split_think(text)
    return ParsedResponse(
        text=text,
        think_text=think,
        answer_text=answer,
        boxed_spans=extract_boxed(text),
        token_length=count_tokens(text),
    )


# ---------------------------------------------------------------- answers


def parse_rational(text: str) -> Optional[Fraction]:
    s = text.strip().replace(" ", "")
    if not s or len(s) > 64:
        return None
    try:
        if s.count("/") == 1:
            num, den = s.split("/")
            value = Fraction(num) / Fraction(den)
        else:
            value = Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None
    return value


def check_constraint(parsed: ParsedResponse, kind: str, arg: str) -> bool:
    last = parsed.boxed_spans[-1] if parsed.boxed_spans else None
    if kind == "single_box":
        return len(parsed.boxed_spans) == 1
    if kind == "boxed_keyword":
        return last is not None and arg in last
    if kind == "boxed_equals":
        return last is not None and last.strip() == arg
    return False


def answer_reward(parsed: ParsedResponse, truth: GroundTruth) -> float:
    if isinstance(truth, ConstraintTruth):
        ok = all(check_constraint(parsed, k, a) for k, a in truth.constraints)
        return 1.0 if ok else 0.0
    if not parsed.boxed_spans:
        return 0.0
    candidate = parsed.boxed_spans[-1]
    if isinstance(truth, NumericTruth):
        value = parse_rational(candidate)
        return 1.0 if value is not None and value == truth.value else 0.0
    if isinstance(truth, CodeTruth):
        return 1.0 if run_tests(candidate, truth.tests) else 0.0
    return 0.0


# ---------------------------------------------------------------- penalties


def format_coefficient(parsed: ParsedResponse, min_reasoning_tokens: int = 8) -> float:
    """0.1 for more than one boxed answer or a reasoning block that is too short."""
    if len(parsed.boxed_spans) > 1 or parsed.think_tokens < min_reasoning_tokens:
        return PENALTY
    return NO_PENALTY


def duplicate_ngram_fraction(tokens: list[str], n: int) -> float:
    total = len(tokens) - n + 1
    if total <= 0:
        return 0.0
    if len(set(tokens)) == len(tokens):
        return 0.0  # no repeated token, so no repeated n-gram
    grams = zip(*(tokens[i:] for i in range(n)))
    return (total - len(set(grams))) / total


def repetition_coefficient(parsed: ParsedResponse, n: int = 8, max_dup_ratio: float = 0.3) -> float:
    if n < 2:
        raise ValueError("n-gram size must be >= 2")
    if duplicate_ngram_fraction(parsed.text.split(), n) > max_dup_ratio:
        return PENALTY
    return NO_PENALTY


@dataclass(frozen=True)
class VerifierConfig:
    min_reasoning_tokens: int = 8
    ngram_n: int = 8
    max_dup_ratio: float = 0.3

    def __post_init__(self) -> None:
        if self.min_reasoning_tokens < 0 or self.ngram_n < 2:
            raise ValueError("need min_reasoning_tokens >= 0 and ngram_n >= 2")
        if not 0.0 <= self.max_dup_ratio <= 1.0:
            raise ValueError("max_dup_ratio must lie in [0, 1]")


@functools.lru_cache(maxsize=8192)
def rule_components(text: str, truth: GroundTruth, cfg: VerifierConfig = VerifierConfig()) -> tuple[float, float, float]:
    """(answer_reward, format_coef, repetition_coef) for one response; memoised."""
    parsed = parse_response(text)
    return (
        answer_reward(parsed, truth),
        format_coefficient(parsed, cfg.min_reasoning_tokens),
        repetition_coefficient(parsed, cfg.ngram_n, cfg.max_dup_ratio),
    )


@functools.lru_cache(maxsize=8192)
def answer_correct(text: str, truth: GroundTruth) -> bool:
    return answer_reward(parse_response(text), truth) == 1.0


def rule_flags(text: str, truth: GroundTruth, cfg: VerifierConfig = VerifierConfig()) -> RuleFlags:
    ans, fmt, rep = rule_components(text, truth, cfg)
    return RuleFlags(ans == 1.0, fmt != NO_PENALTY, rep != NO_PENALTY)
