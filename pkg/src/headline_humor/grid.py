"""Experiment grids and the ablation table renderer.

A grid cell is one (subtask, encoder, feature, transfer, extra) combination;
inside each cell the learning-rate/schedule/epoch axes are searched and the
winner by dev metric is evaluated on test. The rendered table carries a Gain
column relative to the table-encoder Context/Freeze cell of each subtask.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from . import metrics
from .corpus import merge_extra
from .engine import (
    ExperimentConfig,
    RunRecord,
    baseline_task1_report,
    baseline_task2_report,
    evaluate,
    train,
)

_FEATURE_RANK = {"context": 0, "original": 1, "edit": 2}


@dataclass
class TaskData:
    train: list
    dev: list
    test: list
    extra: list = field(default_factory=list)


@dataclass
class GridSpec:
    subtasks: tuple[int, ...] = (1,)
    encoders: tuple[str, ...] = ("table",)
    features: tuple[str, ...] = ("context", "original")
    transfers: tuple[str, ...] = ("freeze", "finetune")
    extras: tuple[bool, ...] = (False, True)
    learning_rates: tuple[float, ...] | None = None
    schedules: tuple[str, ...] | None = None
    epoch_choices: tuple[int, ...] | None = None
    include_baseline: bool = True
    base: ExperimentConfig = field(default_factory=ExperimentConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "GridSpec":
        raw = dict(raw)
        base = ExperimentConfig(**raw.pop("base", {}))
        fields = {f.name for f in dataclasses.fields(cls)} - {"base"}
        unknown = set(raw) - fields
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        tupled = {
            key: tuple(value) if isinstance(value, list) else value
            for key, value in raw.items()
        }
        return cls(base=base, **tupled)

    def hyper_axes(
        self, encoder: str, transfer: str
    ) -> tuple[tuple[float, ...], tuple[str, ...], tuple[int, ...]]:
        finetuned_backend = transfer == "finetune" and encoder != "table"
        lrs = self.learning_rates or (
            (2e-5, 5e-5) if finetuned_backend else (1e-3, 3e-4)
        )
        schedules = self.schedules or (
            ("constant", "linear-decay") if finetuned_backend else ("constant",)
        )
        epochs = self.epoch_choices or ((3, 10) if finetuned_backend else (10,))
        return lrs, schedules, epochs


@dataclass
class GridCell:
    subtask: int
    encoder: str
    feature: str
    transfer: str
    use_extra: bool
    record: RunRecord | None = None
    test_report: metrics.MetricsReport | None = None
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (self.subtask, self.encoder, self.feature, self.transfer, self.use_extra)


@dataclass
class GridResult:
    cells: list[GridCell]
    baselines: dict[int, metrics.MetricsReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "cells": [
                {
                    "subtask": c.subtask,
                    "encoder": c.encoder,
                    "feature": c.feature,
                    "transfer": c.transfer,
                    "use_extra": c.use_extra,
                    "error": c.error,
                    "best_value": None if c.record is None else c.record.best_value,
                    "test": None if c.test_report is None else c.test_report.to_dict(),
                }
                for c in self.cells
            ],
            "baselines": {
                str(k): v.to_dict() for k, v in self.baselines.items()
            },
        }

    def render_table(self) -> str:
        return render_grid_table(self)


def run_grid(
    spec: GridSpec, data: dict[int, TaskData], out_dir: str | Path
) -> GridResult:
    """Train and evaluate every requested cell; per-cell failures are
    recorded and the grid continues."""
    out_dir = Path(out_dir)
    cells: list[GridCell] = []
    baselines: dict[int, metrics.MetricsReport] = {}
    for subtask in spec.subtasks:
        task = data[subtask]
        if spec.include_baseline:
            baselines[subtask] = (
                baseline_task1_report(task.train, task.test)
                if subtask == 1
                else baseline_task2_report(task.train, task.test)
            )
        for encoder in spec.encoders:
            for use_extra in spec.extras:
                for transfer in spec.transfers:
                    for feature in spec.features:
                        cell = GridCell(subtask, encoder, feature, transfer, use_extra)
                        try:
                            _run_cell(cell, spec, task, out_dir)
                        except Exception as exc:  # keep the grid going
                            cell.error = f"{type(exc).__name__}: {exc}"
                        cells.append(cell)
    return GridResult(cells=cells, baselines=baselines)


def _cell_dir(out_dir: Path, cell: GridCell) -> Path:
    extra = "extra" if cell.use_extra else "noextra"
    return out_dir / (
        f"task{cell.subtask}_{cell.encoder}_{cell.feature}_{cell.transfer}_{extra}"
    )


def _run_cell(cell: GridCell, spec: GridSpec, task: TaskData, out_dir: Path) -> None:
    train_rows = (
        merge_extra(task.train, task.extra) if cell.use_extra else task.train
    )
    lrs, schedules, epochs = spec.hyper_axes(cell.encoder, cell.transfer)
    best_record: RunRecord | None = None
    higher_better = cell.subtask == 2
    for lr in lrs:
        for schedule in schedules:
            for max_epochs in epochs:
                config = dataclasses.replace(
                    spec.base,
                    subtask=cell.subtask,
                    encoder=cell.encoder,
                    feature=cell.feature,
                    transfer=cell.transfer,
                    use_extra=cell.use_extra,
                    learning_rate=lr,
                    schedule=schedule,
                    max_epochs=max_epochs,
                )
                run_dir = _cell_dir(out_dir, cell) / (
                    f"lr{lr:g}_{schedule}_e{max_epochs}"
                )
                record = train(config, train_rows, task.dev, out_dir=run_dir)
                better = best_record is None or (
                    record.best_value > best_record.best_value
                    if higher_better
                    else record.best_value < best_record.best_value
                )
                if better:
                    best_record = record
    assert best_record is not None
    cell.record = best_record
    cell.test_report = evaluate(best_record.checkpoint_path, task.test)
    cell.test_report.metadata["config_hash"] = best_record.config_hash


# ---------------------------------------------------------------------------
# rendering


def _variant_label(feature: str, transfer: str, use_extra: bool) -> str:
    if feature == "context" and transfer == "freeze" and not use_extra:
        return "with Context+Freeze"
    parts = []
    if transfer == "finetune":
        parts.append("FT")
    if feature == "original":
        parts.append("Original")
    if feature == "edit":
        parts.append("Edit")
    if use_extra:
        parts.append("Extra")
    return "+" + "+".join(parts) if parts else "with Context+Freeze"


def _variant_order(cell: GridCell) -> tuple:
    return (
        cell.transfer == "finetune",
        cell.use_extra,
        _FEATURE_RANK.get(cell.feature, 9),
    )


def _fmt(value: float | None, signed: bool = False) -> str:
    if value is None:
        return "/"
    return f"{value:+.3f}" if signed else f"{value:.3f}"


def render_grid_table(result: GridResult) -> str:
    """Ablation table: one row per (encoder, variant), subtask column groups
    side by side, Gain relative to the table Context/Freeze cell."""
    subtasks = sorted({c.subtask for c in result.cells} | set(result.baselines))
    references: dict[int, float | None] = {}
    for subtask in subtasks:
        ref = next(
            (
                c
                for c in result.cells
                if c.key == (subtask, "table", "context", "freeze", False)
                and c.test_report is not None
            ),
            None,
        )
        references[subtask] = None if ref is None else ref.test_report.primary_value()

    def gain(subtask: int, value: float | None) -> float | None:
        ref = references.get(subtask)
        if ref is None or value is None:
            return None
        return (ref - value) if subtask == 1 else (value - ref)

    columns = ["model"]
    if 1 in subtasks:
        columns += ["s1-rmse", "s1-gain", "s1-spearman"]
    if 2 in subtasks:
        columns += ["s2-acc", "s2-gain", "s2-reward", "s2-rmse"]

    def report_cells(by_subtask: dict[int, metrics.MetricsReport | None]) -> list[str]:
        cells: list[str] = []
        if 1 in subtasks:
            report = by_subtask.get(1)
            rmse = None if report is None else report.rmse
            cells += [
                _fmt(rmse),
                _fmt(gain(1, rmse), signed=True),
                _fmt(None if report is None else report.spearman),
            ]
        if 2 in subtasks:
            report = by_subtask.get(2)
            acc = None if report is None else report.accuracy
            cells += [
                _fmt(acc),
                _fmt(gain(2, acc), signed=True),
                _fmt(None if report is None else report.reward),
                _fmt(None if report is None else report.rmse),
            ]
        return cells

    rows: list[list[str]] = []
    failures: list[str] = []
    if result.baselines:
        rows.append(["Baseline"] + report_cells(dict(result.baselines)))

    encoders = []
    for cell in result.cells:
        if cell.encoder not in encoders:
            encoders.append(cell.encoder)
    for encoder in encoders:
        rows.append([encoder] + [""] * (len(columns) - 1))
        variants: dict[tuple, dict[int, GridCell]] = {}
        for cell in result.cells:
            if cell.encoder != encoder:
                continue
            key = (cell.feature, cell.transfer, cell.use_extra)
            variants.setdefault(key, {})[cell.subtask] = cell
        ordered = sorted(
            variants.items(),
            key=lambda item: _variant_order(next(iter(item[1].values()))),
        )
        for (feature, transfer, use_extra), by_subtask in ordered:
            label = "  " + _variant_label(feature, transfer, use_extra)
            reports = {
                st: (c.test_report if c.error is None else None)
                for st, c in by_subtask.items()
            }
            rows.append([label] + report_cells(reports))
            for st, c in sorted(by_subtask.items()):
                if c.error is not None:
                    failures.append(f"subtask {st} {encoder} {label.strip()}: {c.error}")

    widths = [
        max(len(columns[j]), *(len(row[j]) for row in rows)) if rows else len(columns[j])
        for j in range(len(columns))
    ]
    lines = [
        "  ".join(f"{columns[j]:<{widths[j]}}" for j in range(len(columns))).rstrip()
    ]
    lines.append("  ".join("-" * widths[j] for j in range(len(columns))))
    for row in rows:
        lines.append(
            "  ".join(
                f"{row[j]:<{widths[j]}}" if j == 0 else f"{row[j]:>{widths[j]}}"
                for j in range(len(columns))
            ).rstrip()
        )
    if failures:
        lines.append("")
        lines.extend(f"failed: {message}" for message in failures)
    return "\n".join(lines)


def write_grid_outputs(result: GridResult, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "grid_table.txt"
    json_path = out_dir / "grid_results.json"
    table_path.write_text(result.render_table() + "\n", encoding="utf-8")
    json_path.write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
    return table_path, json_path
