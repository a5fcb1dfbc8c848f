"""Synthetic reasoning tasks and the environment's correctness model.

Every task belongs to one of five families. A response is summarised by a
length bucket and a correctness bit; longer buckets are more likely to be
correct but saturate, so without a length penalty the longest bucket wins
and with one the shortest near-saturated bucket does.
"""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration (bad weights, bad environment constants, ...)."""


class TaskFamily(str, enum.Enum):
    MATH = "Math"
    CODE = "Code"
    STEM = "Stem"
    INSTRUCTION_FOLLOWING = "InstructionFollowing"
    MOBILE_SERVICE = "MobileService"


FAMILIES: tuple[TaskFamily, ...] = tuple(TaskFamily)


# ---------------------------------------------------------------- ground truth


@dataclass(frozen=True)
class NumericTruth:
    value: Fraction

    def to_dict(self) -> dict:
        return {"kind": "numeric", "value": _fraction_str(self.value)}


@dataclass(frozen=True)
class CodeTruth:
    # (input, expected output) pairs for a one-variable expression program
    tests: tuple[tuple[int, int], ...]
    # setter's program; used only to synthesize correct responses
    reference: str = ""

    def __post_init__(self) -> None:
        if not self.tests:
            raise ValueError("code_tests must be non-empty")

    def to_dict(self) -> dict:
        return {
            "kind": "code",
            "tests": [list(t) for t in self.tests],
            "reference": self.reference,
        }


CONSTRAINT_KINDS = ("single_box", "boxed_keyword", "boxed_equals")


@dataclass(frozen=True)
class ConstraintTruth:
    # (kind, argument) pairs; see verifier.check_constraint
    constraints: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        for kind, _ in self.constraints:
            if kind not in CONSTRAINT_KINDS:
                raise ValueError(f"unknown constraint kind {kind!r}")

    def to_dict(self) -> dict:
        return {"kind": "constraints", "items": [list(c) for c in self.constraints]}


GroundTruth = Union[NumericTruth, CodeTruth, ConstraintTruth]


def truth_from_dict(data: Mapping) -> GroundTruth:
    kind = data.get("kind")
    if kind == "numeric":
        return NumericTruth(Fraction(str(data["value"])))
    if kind == "code":
        tests = tuple((int(a), int(b)) for a, b in data["tests"])
        return CodeTruth(tests, str(data.get("reference", "")))
    if kind == "constraints":
        return ConstraintTruth(tuple((str(k), str(v)) for k, v in data["items"]))
    raise ValueError(f"unknown ground truth kind {kind!r}")


def _fraction_str(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


# ---------------------------------------------------------------- tasks


@dataclass(frozen=True)
class TaskInstance:
    id: str
    family: TaskFamily
    prompt: str
    ground_truth: GroundTruth
    difficulty: float
    think_mode: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty {self.difficulty} outside [0, 1]")
        expected = _TRUTH_FOR_FAMILY[self.family]
        if not isinstance(self.ground_truth, expected):
            raise ValueError(
                f"{self.family.value} task needs {expected.__name__}, "
                f"got {type(self.ground_truth).__name__}"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "family": self.family.value,
            "prompt": self.prompt,
            "ground_truth": self.ground_truth.to_dict(),
            "difficulty": self.difficulty,
            "think_mode": self.think_mode,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TaskInstance":
        return cls(
            id=str(data["id"]),
            family=TaskFamily(data["family"]),
            prompt=str(data["prompt"]),
            ground_truth=truth_from_dict(data["ground_truth"]),
            difficulty=float(data["difficulty"]),
            think_mode=bool(data["think_mode"]),
        )


_TRUTH_FOR_FAMILY = {
    TaskFamily.MATH: NumericTruth,
    TaskFamily.STEM: NumericTruth,
    TaskFamily.CODE: CodeTruth,
    TaskFamily.INSTRUCTION_FOLLOWING: ConstraintTruth,
    TaskFamily.MOBILE_SERVICE: ConstraintTruth,
}


def save_tasks(tasks: Iterable[TaskInstance], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_dict(), sort_keys=True) + "\n")


def load_tasks(path: Union[str, Path]) -> list[TaskInstance]:
    with open(path, encoding="utf-8") as fh:
        return [TaskInstance.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------- environment


@dataclass(frozen=True)
class EnvModel:
    bucket_tokens: tuple[int, ...] = (64, 256, 1024, 4096, 16384)
    p_max: float = 0.95
    tau0: float = 1000.0
    gamma: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "bucket_tokens", tuple(int(t) for t in self.bucket_tokens))
        tokens = self.bucket_tokens
        if not tokens or any(t <= 0 for t in tokens):
            raise ConfigError("bucket_tokens must be non-empty and positive")
        if any(b <= a for a, b in zip(tokens, tokens[1:])):
            raise ConfigError("bucket_tokens must be strictly increasing")
        if not 0.0 < self.p_max <= 1.0:
            raise ConfigError("p_max must lie in (0, 1]")
        if self.tau0 <= 0.0 or self.gamma < 0.0:
            raise ConfigError("need tau0 > 0 and gamma >= 0")

    @property
    def n_buckets(self) -> int:
        return len(self.bucket_tokens)


def saturation(env: EnvModel, tokens: float, difficulty: float) -> float:
    """Correctness probability for an arbitrary token count."""
    scale = env.tau0 * (1.0 + env.gamma * difficulty)
    return env.p_max * -math.expm1(-tokens / scale)


def correctness_probability(env: EnvModel, bucket_index: int, difficulty: float) -> float:
    if not 0 <= bucket_index < env.n_buckets:
        raise IndexError(f"bucket {bucket_index} out of range for {env.n_buckets} buckets")
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError(f"difficulty {difficulty} outside [0, 1]")
    return saturation(env, env.bucket_tokens[bucket_index], difficulty)


def correctness_table(env: EnvModel, difficulty: float) -> np.ndarray:
    return np.array([correctness_probability(env, b, difficulty) for b in range(env.n_buckets)])


# ---------------------------------------------------------------- generation


def allocate_counts(count: int, weights: Mapping[TaskFamily, float]) -> dict[TaskFamily, int]:
    """Largest-remainder apportionment of ``count`` tasks over families."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    w = {TaskFamily(f): float(v) for f, v in weights.items()}
    if any(v < 0 or not math.isfinite(v) for v in w.values()):
        raise ConfigError("family weights must be finite and non-negative")
    total = sum(w.values())
    if total <= 0:
        raise ConfigError("family weights are all zero")
    quotas = {f: count * v / total for f, v in w.items()}
    counts = {f: int(math.floor(q)) for f, q in quotas.items()}
    leftover = count - sum(counts.values())
    # ties broken by canonical family order for determinism
    order = sorted(quotas, key=lambda f: (-(quotas[f] - counts[f]), FAMILIES.index(f)))
    for f in order[:leftover]:
        counts[f] += 1
    return {f: counts.get(f, 0) for f in FAMILIES if counts.get(f, 0) > 0}


def generate_tasks(
    seed: int,
    count: int,
    family_mix: Mapping[TaskFamily, float],
    think_fraction: float = 0.5,
) -> list[TaskInstance]:
    counts = allocate_counts(count, family_mix)
    if not 0.0 <= think_fraction <= 1.0:
        raise ConfigError("think_fraction must lie in [0, 1]")
    rng = np.random.default_rng([int(seed), 0x7A5C])
    families = [f for f in FAMILIES for _ in range(counts.get(f, 0))]
    order = rng.permutation(len(families))
    tasks = []
    for i, j in enumerate(order):
        family = families[int(j)]
        prompt, truth = _MAKERS[family](rng)
        difficulty = float(rng.uniform(0.0, 1.0))
        think = bool(rng.uniform() < think_fraction)
        tasks.append(TaskInstance(f"s{seed}-{i:05d}", family, prompt, truth, difficulty, think))
    return tasks


def _make_math(rng: np.random.Generator) -> tuple[str, GroundTruth]:
    a, c = (int(v) for v in rng.integers(1, 20, size=2))
    b, d = (int(v) for v in rng.integers(2, 9, size=2))
    value = Fraction(a, b) + Fraction(c, d)
    return f"Compute {a}/{b} + {c}/{d} as an exact number.", NumericTruth(value)


def _make_stem(rng: np.random.Generator) -> tuple[str, GroundTruth]:
    v = Fraction(int(rng.integers(5, 95)), 4)
    t = int(rng.integers(2, 30))
    prompt = f"A cart moves at {float(v)} m/s for {t} s. How far does it travel, in metres?"
    return prompt, NumericTruth(v * t)


def _make_code(rng: np.random.Generator) -> tuple[str, GroundTruth]:
    a, b, c = (int(v) for v in rng.integers(-3, 4, size=3))
    a = a or 1
    ref = f"{a}*x*x+{b}*x+{c}".replace("+-", "-")
    tests = tuple((x, a * x * x + b * x + c) for x in (-2, 0, 1, 3))
    cases = ", ".join(f"f({x})={y}" for x, y in tests)
    return f"Write an expression in x such that {cases}.", CodeTruth(tests, ref)


_KEYWORDS = ("harbor", "lantern", "meadow", "quartz", "saffron", "tundra", "violet", "willow")
_ACTIONS = ("open:camera", "open:settings", "tap:wifi", "set:alarm", "send:message", "call:contact")


def _make_instruction(rng: np.random.Generator) -> tuple[str, GroundTruth]:
    kw = _KEYWORDS[int(rng.integers(len(_KEYWORDS)))]
    prompt = f"Describe a quiet morning. Put a single word answer containing '{kw}' in one box."
    return prompt, ConstraintTruth((("single_box", ""), ("boxed_keyword", kw)))


def _make_mobile(rng: np.random.Generator) -> tuple[str, GroundTruth]:
    action = _ACTIONS[int(rng.integers(len(_ACTIONS)))]
    verb, obj = action.split(":")
    prompt = f"On the phone screen, the user asks to {verb} {obj}. Emit the UI action in one box."
    return prompt, ConstraintTruth((("single_box", ""), ("boxed_equals", action)))


_MAKERS = {
    TaskFamily.MATH: _make_math,
    TaskFamily.STEM: _make_stem,
    TaskFamily.CODE: _make_code,
    TaskFamily.INSTRUCTION_FOLLOWING: _make_instruction,
    TaskFamily.MOBILE_SERVICE: _make_mobile,
}


# ---------------------------------------------------------------- responses

# tokens between the reasoning block and the boxed answer in full responses
_ANSWER_LEAD = ("Final", "answer:")


@functools.lru_cache(maxsize=64)
def _filler(prefix: str, n: int) -> str:
    return " ".join(f"{prefix}{i}" for i in range(n))


def render_answer(task: TaskInstance, is_correct: bool, rng: np.random.Generator) -> str:
    """Boxed payload for a task; never contains whitespace or ']'."""
    truth = task.ground_truth
    if isinstance(truth, NumericTruth):
        value = truth.value if is_correct else truth.value + 1 + int(rng.integers(3))
        return _render_number(value, rng)
    if isinstance(truth, CodeTruth):
        if is_correct:
            return truth.reference
        return truth.reference + f"+{1 + int(rng.integers(3))}"
    kinds = dict(truth.constraints)
    if "boxed_equals" in kinds:
        target = kinds["boxed_equals"]
        if is_correct:
            return target
        others = [a for a in _ACTIONS if a != target]
        return others[int(rng.integers(len(others)))]
    kw = kinds.get("boxed_keyword", "")
    if is_correct:
        return kw
    others = [k for k in _KEYWORDS if kw not in k]
    return others[int(rng.integers(len(others)))]


def _render_number(value: Fraction, rng: np.random.Generator) -> str:
    style = int(rng.integers(3))
    den = value.denominator
    if style == 1:
        digits = max(_power_of(den, 2), _power_of(den, 5), 1)
        scaled = value * 10**digits
        if scaled.denominator == 1:
            sign = "-" if scaled < 0 else ""
            text = str(abs(scaled.numerator)).rjust(digits + 1, "0")
            return f"{sign}{text[:-digits]}.{text[-digits:]}"
    if style == 2:
        return f"{2 * value.numerator}/{2 * den}"
    return _fraction_str(value)


def _power_of(n: int, p: int) -> int:
    k = 0
    while n % p == 0:
        n //= p
        k += 1
    return k


def synthesize_response(
    task: TaskInstance,
    bucket_index: int,
    is_correct: bool,
    rng: np.random.Generator,
    env: EnvModel,
    min_reasoning_tokens: int = 8,
) -> str:
    """Surrogate response whose whitespace token count is exactly the bucket size.

    Bucket 0 gets a reasoning block shorter than ``min_reasoning_tokens`` and
    pads the answer region instead, so the format check fires on it.
    """
    if not 0 <= bucket_index < env.n_buckets:
        raise IndexError(f"bucket {bucket_index} out of range")
    payload = render_answer(task, is_correct, rng)
    return assemble_response(env.bucket_tokens[bucket_index], bucket_index == 0, payload, min_reasoning_tokens)


@functools.lru_cache(maxsize=4096)
def assemble_response(total: int, brief: bool, payload: str, min_reasoning_tokens: int = 8) -> str:
    box = f"\\box[{payload}]"
    if brief:
        n_think = min_reasoning_tokens // 2
        n_pad = total - 3 - n_think
        if n_pad < 0:
            raise ConfigError(f"bucket of {total} tokens too small for a response")
        think = _filler("r", n_think)
        answer = _filler("a", n_pad)
    else:
        n_think = total - 3 - len(_ANSWER_LEAD)
        if n_think < min_reasoning_tokens:
            raise ConfigError(f"bucket of {total} tokens too small for full reasoning")
        think = _filler("r", n_think)
        answer = " ".join(_ANSWER_LEAD)
    parts = ["<think>", think, "</think>", answer, box]
    return " ".join(p for p in parts if p)
