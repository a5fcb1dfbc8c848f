"""Token-budget accuracy curves and long2short metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence, Union

DEFAULT_BUDGETS = (4096, 6144, 8192, 12288, 16384, 24576, 32768)

Result = tuple[bool, int]


@dataclass(frozen=True)
class BudgetCurve:
    budgets: tuple[float, ...]
    accuracy: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.budgets) != len(self.accuracy):
            raise ValueError("budgets and accuracy differ in length")
        if any(b <= a for a, b in zip(self.budgets, self.budgets[1:])):
            raise ValueError("budgets must be strictly increasing")


@dataclass(frozen=True)
class RunMetrics:
    step: int
    overall_accuracy: float
    mean_length: float
    mean_length_correct: float
    token_efficiency: float  # accuracy per thousand tokens of mean response length

    def to_dict(self) -> dict:
        return asdict(self)


def budget_curve(results: Sequence[Result], budgets: Sequence[float]) -> BudgetCurve:
    """Accuracy at each budget; responses longer than the budget count as wrong."""
    if not results:
        raise ValueError("no results to evaluate")
    if not budgets:
        raise ValueError("need at least one budget")
    budgets = tuple(budgets)
    if any(b <= a for a, b in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be strictly increasing")
    correct_lengths = sorted(n for ok, n in results if ok)
    total = len(results)
    acc = []
    i = 0
    for b in budgets:
        while i < len(correct_lengths) and correct_lengths[i] <= b:
            i += 1
        acc.append(i / total)
    return BudgetCurve(budgets, tuple(acc))


def run_metrics(results: Sequence[Result], step: int = 0) -> RunMetrics:
    if not results:
        raise ValueError("no results to evaluate")
    n = len(results)
    correct = [length for ok, length in results if ok]
    accuracy = len(correct) / n
    mean_len = sum(length for _, length in results) / n
    mean_correct = sum(correct) / len(correct) if correct else 0.0
    efficiency = accuracy / (mean_len / 1000.0) if mean_len > 0 else math.nan
    return RunMetrics(step, accuracy, mean_len, mean_correct, efficiency)


def write_curve_csv(curve: BudgetCurve, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", "accuracy"])
        for b, a in zip(curve.budgets, curve.accuracy):
            w.writerow([int(b) if float(b).is_integer() else b, repr(a)])


def read_curve_csv(path: Union[str, Path]) -> BudgetCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return BudgetCurve(tuple(float(r["budget"]) for r in rows), tuple(float(r["accuracy"]) for r in rows))


def append_metrics(metrics: RunMetrics, path: Union[str, Path]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(metrics.to_dict(), sort_keys=True) + "\n")
