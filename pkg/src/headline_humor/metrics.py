"""Evaluation metrics and the cross-system correlation report.

Undefined values (zero variance, no evaluable pairs) are `None` throughout
and render as "n/a"; they are never silently coerced to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties averaged."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    position = 0
    while position < values.size:
        tail = position
        while (
            tail + 1 < values.size
            and values[order[tail + 1]] == values[order[position]]
        ):
            tail += 1
        ranks[order[position : tail + 1]] = (position + tail) / 2.0 + 1.0
        position = tail + 1
    return ranks


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx**2).sum() * (dy**2).sum())
    if denom == 0.0:
        return None
    return float((dx * dy).sum() / denom)


def spearman(pred: Sequence[float], truth: Sequence[float]) -> float | None:
    """Rank correlation: Pearson over averaged ranks. None when either side
    has no rank variance."""
    return pearson(average_ranks(pred), average_ranks(truth))


def accuracy(gold_labels: Sequence[int], pred_labels: Sequence[int]) -> float | None:
    """Fraction of correct pairwise picks; gold ties (label 0) are ignored."""
    gold = np.asarray(gold_labels, dtype=np.int64)
    pred = np.asarray(pred_labels, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError(f"length mismatch: {gold.shape} vs {pred.shape}")
    if not np.isin(gold, (0, 1, 2)).all():
        raise ValueError("gold labels must be in {0, 1, 2}")
    if not np.isin(pred, (1, 2)).all():
        raise ValueError("predicted labels must be in {1, 2}")
    evaluable = gold != 0
    if not evaluable.any():
        return None
    return float((pred[evaluable] == gold[evaluable]).mean())


def reward(
    gold_labels: Sequence[int],
    pred_labels: Sequence[int],
    grades_first: Sequence[float],
    grades_second: Sequence[float],
) -> float | None:
    """Signed mean of gold score gaps over non-tie pairs: a correct pick
    earns +|gap|, a wrong one -|gap|."""
    gold = np.asarray(gold_labels, dtype=np.int64)
    pred = np.asarray(pred_labels, dtype=np.int64)
    z1 = np.asarray(grades_first, dtype=np.float64)
    z2 = np.asarray(grades_second, dtype=np.float64)
    if not (gold.shape == pred.shape == z1.shape == z2.shape):
        raise ValueError("length mismatch")
    evaluable = gold != 0
    if not evaluable.any():
        return None
    sign = np.where(pred[evaluable] == gold[evaluable], 1.0, -1.0)
    return float(np.mean(sign * np.abs(z1[evaluable] - z2[evaluable])))


def _format(value: float | None, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


@dataclass
class MetricsReport:
    """Per-run metric bundle with evaluated counts and provenance notes."""

    subtask: int
    rmse: float | None = None
    spearman: float | None = None
    accuracy: float | None = None
    reward: float | None = None
    n_evaluated: dict[str, int] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def primary_value(self) -> float | None:
        return self.rmse if self.subtask == 1 else self.accuracy

    def metric_names(self) -> tuple[str, ...]:
        if self.subtask == 1:
            return ("rmse", "spearman")
        return ("accuracy", "reward", "rmse")

    def to_dict(self) -> dict:
        return {
            "subtask": self.subtask,
            "metrics": {name: getattr(self, name) for name in self.metric_names()},
            "n_evaluated": dict(self.n_evaluated),
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_text(self) -> str:
        lines = [f"subtask {self.subtask}"]
        width = max(len(name) for name in self.metric_names())
        for name in self.metric_names():
            count = self.n_evaluated.get(name)
            suffix = "" if count is None else f"  (n={count})"
            lines.append(f"  {name:<{width}}  {_format(getattr(self, name))}{suffix}")
        for key in sorted(self.metadata):
            lines.append(f"  # {key}: {self.metadata[key]}")
        return "\n".join(lines)


REWARD_POPULATION_NOTE = "reward averaged over gold non-tie pairs, matching accuracy"


def task1_report(
    pred_scores: Sequence[float], gold_scores: Sequence[float]
) -> MetricsReport:
    pred = np.asarray(pred_scores, dtype=np.float64)
    gold = np.asarray(gold_scores, dtype=np.float64)
    return MetricsReport(
        subtask=1,
        rmse=rmse(pred, gold),
        spearman=spearman(pred, gold) if pred.size >= 2 else None,
        n_evaluated={"rmse": int(pred.size), "spearman": int(pred.size)},
    )


def task2_report(
    gold_labels: Sequence[int],
    pred_labels: Sequence[int],
    grades_first: Sequence[float] | None = None,
    grades_second: Sequence[float] | None = None,
    pred_first: Sequence[float] | None = None,
    pred_second: Sequence[float] | None = None,
) -> MetricsReport:
    gold = np.asarray(gold_labels, dtype=np.int64)
    n_pairs = int((gold != 0).sum())
    report = MetricsReport(
        subtask=2,
        accuracy=accuracy(gold_labels, pred_labels),
        n_evaluated={"accuracy": n_pairs},
        metadata={"reward_population": REWARD_POPULATION_NOTE},
    )
    if grades_first is not None and grades_second is not None:
        report.reward = reward(gold_labels, pred_labels, grades_first, grades_second)
        report.n_evaluated["reward"] = n_pairs
        if pred_first is not None and pred_second is not None:
            pooled_gold = list(grades_first) + list(grades_second)
            pooled_pred = list(pred_first) + list(pred_second)
            report.rmse = rmse(pooled_pred, pooled_gold)
            report.n_evaluated["rmse"] = len(pooled_gold)
    return report


@dataclass
class CorrelationMatrix:
    """Pairwise agreement between score vectors: Pearson below the diagonal,
    rank correlation above, the diagonal left undefined."""

    names: tuple[str, ...]
    values: tuple[tuple[float | None, ...], ...]

    def render_text(self) -> str:
        cells = [[_format(v, 2) if v is not None else "/" for v in row] for row in self.values]
        for i in range(len(self.names)):
            cells[i][i] = "/"
        widths = [
            max(len(self.names[j]), *(len(row[j]) for row in cells))
            for j in range(len(self.names))
        ]
        name_width = max(len(n) for n in self.names)
        header = " " * name_width + "  " + "  ".join(
            f"{name:>{widths[j]}}" for j, name in enumerate(self.names)
        )
        lines = [header]
        for i, name in enumerate(self.names):
            row = "  ".join(f"{cells[i][j]:>{widths[j]}}" for j in range(len(self.names)))
            lines.append(f"{name:<{name_width}}  {row}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"names": list(self.names), "values": [list(r) for r in self.values]}


def correlation_matrix(
    systems: Mapping[str, Sequence[float]] | Sequence[tuple[str, Sequence[float]]],
) -> CorrelationMatrix:
    """Cross-system agreement over aligned score vectors."""
    items = list(systems.items()) if isinstance(systems, Mapping) else list(systems)
    if len(items) < 2:
        raise ValueError("need at least two systems")
    names = tuple(name for name, _ in items)
    vectors = [np.asarray(vec, dtype=np.float64) for _, vec in items]
    length = vectors[0].size
    if any(vec.size != length for vec in vectors):
        raise ValueError("system score vectors must share a length")
    size = len(items)
    values: list[list[float | None]] = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            if i == j:
                continue
            if i > j:
                values[i][j] = pearson(vectors[i], vectors[j])
            else:
                values[i][j] = spearman(vectors[i], vectors[j])
    return CorrelationMatrix(names, tuple(tuple(row) for row in values))
