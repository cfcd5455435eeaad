"""Experiment engine: configs, featurization, training, and evaluation.

Frozen encoders are exploited for speed: with the table encoder the span
vectors are precomputed once, and with a frozen contextual backend the
per-layer pooled vectors are precomputed (pooling commutes with the layer
mix, both being linear), so only the mix and head are touched per step.
Finetuning paths keep the encoder inside the autograd graph.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
from torch import nn

from . import metrics
from .backends import EncoderBackend, load_backend
from .corpus import (
    HeadlineInstance,
    PairInstance,
    build_triple,
    parse_task1,
    parse_task2,
)
from .encoders import (
    EmbeddingTable,
    ScalarMix,
    align_triple,
    cbow_encode,
    load_embeddings,
)
from .model import fuse, fused_width, make_head, predict_label, loss_task1, loss_task2, score
from .spans import word_tokenize

DATA_DIR_ENV = "HEADLINE_HUMOR_DATA_DIR"
EMBEDDINGS_ENV = "HEADLINE_HUMOR_GLOVE"

CHECKPOINT_FORMAT_VERSION = 1

FROZEN_LRS = (1e-3, 3e-4)
FINETUNE_LRS = (2e-5, 5e-5)


class EngineError(RuntimeError):
    """Unrecoverable training or evaluation failure."""


@dataclass
class ExperimentConfig:
    subtask: int = 1
    encoder: str = "table"  # "table", "toy...", or a contextual backend id
    transfer: str = "freeze"  # "freeze" | "finetune"
    feature: str = "context"  # "context" | "original" | "edit"
    use_extra: bool = False
    batch_size: int | None = None  # default 32 (subtask 1) / 16 (subtask 2)
    max_epochs: int = 10
    learning_rate: float | None = None  # default 1e-3, or 2e-5 when finetuning a backend
    schedule: str = "constant"  # "constant" | "linear-decay"
    clip_norm: float = 5.0
    seed: int = 0
    selection: str = "best"  # "best" (dev metric) | "last" (final epoch)
    embeddings: str | None = None  # table encoder: path to the vector file
    embedding_dim: int = 300
    out_dir: str | None = None

    def resolved(self) -> "ExperimentConfig":
        config = dataclasses.replace(self)
        if config.batch_size is None:
            config.batch_size = 32 if config.subtask == 1 else 16
        if config.learning_rate is None:
            finetuned_backend = (
                config.transfer == "finetune" and config.encoder != "table"
            )
            config.learning_rate = FINETUNE_LRS[0] if finetuned_backend else FROZEN_LRS[0]
        config.validate()
        return config

    def validate(self) -> None:
        if self.subtask not in (1, 2):
            raise EngineError(f"subtask must be 1 or 2, got {self.subtask}")
        if self.transfer not in ("freeze", "finetune"):
            raise EngineError(f"unknown transfer {self.transfer!r}")
        if self.feature not in ("context", "original", "edit"):
            raise EngineError(f"unknown feature mode {self.feature!r}")
        if self.schedule not in ("constant", "linear-decay"):
            raise EngineError(f"unknown schedule {self.schedule!r}")
        if self.selection not in ("best", "last"):
            raise EngineError(f"unknown selection policy {self.selection!r}")
        for name in ("batch_size", "max_epochs"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise EngineError(f"{name} must be positive, got {value}")
        for name in ("learning_rate", "clip_norm"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise EngineError(f"{name} must be positive, got {value}")

    def head_kind(self) -> str:
        # MLP for frozen or table-based encoders; a bare projection once a
        # contextual backend is finetuned end to end.
        if self.encoder != "table" and self.transfer == "finetune":
            return "linear"
        return "mlp"

    def config_hash(self) -> str:
        payload = dataclasses.asdict(self)
        payload.pop("out_dir")
        canonical = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class ValidationEvent:
    step: int
    epoch: float
    value: float
    metrics: dict[str, float | None]


@dataclass
class RunRecord:
    config: ExperimentConfig
    config_hash: str
    history: list[ValidationEvent]
    best_step: int
    best_value: float
    selection_metric: str
    checkpoint_path: str | None
    last_checkpoint_path: str | None = None
    final_metrics: metrics.MetricsReport | None = None

    def to_dict(self) -> dict:
        return {
            "config": dataclasses.asdict(self.config),
            "config_hash": self.config_hash,
            "selection_metric": self.selection_metric,
            "best_step": self.best_step,
            "best_value": self.best_value,
            "checkpoint_path": self.checkpoint_path,
            "last_checkpoint_path": self.last_checkpoint_path,
            "history": [dataclasses.asdict(event) for event in self.history],
            "final_metrics": None
            if self.final_metrics is None
            else self.final_metrics.to_dict(),
        }


# ---------------------------------------------------------------------------
# featurization pipelines


class HeadScorer(nn.Module):
    """Fusion plus head over span vectors; shared by every pipeline."""

    def __init__(self, head: nn.Module, feature: str):
        super().__init__()
        self.head = head
        self.feature = feature

    def forward(
        self,
        edit: torch.Tensor,
        original: torch.Tensor | None = None,
        context: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if self.feature == "context":
            fused = fuse(edit, context, "context")
        elif self.feature == "original":
            fused = fuse(edit, original, "original")
        else:
            fused = fuse(edit, mode="edit")
        return score(fused, self.head)


class FrozenScorer(nn.Module):
    def __init__(self, head_scorer: HeadScorer):
        super().__init__()
        self.head_scorer = head_scorer

    def forward(self, batch: dict) -> torch.Tensor:
        return self.head_scorer(
            batch["edit"], batch.get("original"), batch.get("context")
        )


class MixScorer(nn.Module):
    def __init__(self, mix: ScalarMix, head_scorer: HeadScorer):
        super().__init__()
        self.mix = mix
        self.head_scorer = head_scorer

    def forward(self, batch: dict) -> torch.Tensor:
        edit = self.mix(batch["edit_layers"])
        original = (
            self.mix(batch["original_layers"]) if "original_layers" in batch else None
        )
        context = (
            self.mix(batch["context_layers"]) if "context_layers" in batch else None
        )
        return self.head_scorer(edit, original, context)


class CbowFtScorer(nn.Module):
    """Trainable word vectors with mean/max pooling done under masks."""

    def __init__(self, embedding: nn.Embedding, head_scorer: HeadScorer):
        super().__init__()
        self.embedding = embedding
        self.head_scorer = head_scorer

    def _mean(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        vectors = self.embedding(ids) * mask.unsqueeze(-1)
        return vectors.sum(dim=1) / mask.sum(dim=1, keepdim=True)

    def _max(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        vectors = self.embedding(ids)
        vectors = vectors.masked_fill(~mask.bool().unsqueeze(-1), float("-inf"))
        return vectors.amax(dim=1)

    def forward(self, batch: dict) -> torch.Tensor:
        edit = self._mean(batch["edited_ids"], batch["edit_mask"])
        original = None
        context = None
        if "original_ids" in batch:
            original = self._mean(batch["original_ids"], batch["original_mask"])
        if "context_ids" in batch:
            context = self._max(batch["context_ids"], batch["context_mask"])
        return self.head_scorer(edit, original, context)


class BackendFtScorer(nn.Module):
    """End-to-end scorer over a trainable backend; top layer only."""

    def __init__(self, backend: EncoderBackend, head_scorer: HeadScorer, feature: str):
        super().__init__()
        self.backend = backend
        self.backend_module = backend.module()
        self.head_scorer = head_scorer
        self.feature = feature

    def _encode(self, sample: dict) -> tuple[torch.Tensor, ...]:
        top = self.backend.encode_layers(sample["edited_units"])[-1]
        edit = top[sample["edit_span"].slice].mean(dim=0)
        # one extra forward per sample is real money when finetuning, so only
        # the sequence the feature mode consumes gets encoded
        if self.feature == "original":
            top_orig = self.backend.encode_layers(sample["original_units"])[-1]
            return (edit, top_orig[sample["original_span"].slice].mean(dim=0), None)
        if self.feature == "context":
            top_ctx = self.backend.encode_layers(sample["context_units"])[-1]
            return (edit, None, top_ctx[sample["mask_position"] - 1])
        return (edit, None, None)

    def forward(self, batch: dict) -> torch.Tensor:
        encoded = [self._encode(sample) for sample in batch["samples"]]
        edit = torch.stack([e[0] for e in encoded])
        original = None
        context = None
        if self.feature == "original":
            original = torch.stack([e[1] for e in encoded])
        if self.feature == "context":
            context = torch.stack([e[2] for e in encoded])
        return self.head_scorer(edit, original, context)


class Pipeline:
    """Turns instances into scorer-ready samples; owns encoder context."""

    feature: str
    dimension: int

    def prepare(self, instance: HeadlineInstance) -> dict:
        raise NotImplementedError

    def collate(self, samples: list[dict]) -> dict:
        raise NotImplementedError

    def build_scorer(self) -> nn.Module:
        raise NotImplementedError

    def extra_state(self) -> dict | None:
        return None

    def frozen_backend(self) -> EncoderBackend | None:
        return None


class CbowFreezePipeline(Pipeline):
    def __init__(self, table: EmbeddingTable, feature: str):
        self.table = table
        self.feature = feature
        self.dimension = table.dimension

    def prepare(self, instance: HeadlineInstance) -> dict:
        triple = build_triple(instance, word_tokenize)
        spans = cbow_encode(triple, self.table)
        sample = {"edit": spans.edit}
        if self.feature == "original":
            sample["original"] = spans.original
        if self.feature == "context":
            sample["context"] = spans.context
        return sample

    def collate(self, samples: list[dict]) -> dict:
        return {
            key: torch.stack([sample[key] for sample in samples])
            for key in samples[0]
        }

    def build_scorer(self) -> nn.Module:
        head = make_head("mlp", fused_width(self.feature, self.dimension))
        return FrozenScorer(HeadScorer(head, self.feature))


class ContextualFreezePipeline(Pipeline):
    def __init__(self, backend: EncoderBackend, feature: str):
        if backend.mode != "freeze":
            raise EngineError("backend must be frozen for this pipeline")
        self.backend = backend
        self.feature = feature
        self.dimension = backend.width

    def prepare(self, instance: HeadlineInstance) -> dict:
        triple = build_triple(instance, word_tokenize)
        views = align_triple(triple, self.backend, self.feature)
        with torch.no_grad():
            layers = self.backend.encode_layers(views.edited.aligned.units)
            sample = {
                "edit_layers": layers[:, views.edited.span.slice, :]
                .mean(dim=1)
                .detach()
                .clone()
            }
            if self.feature == "original":
                layers = self.backend.encode_layers(views.original.aligned.units)
                sample["original_layers"] = (
                    layers[:, views.original.span.slice, :].mean(dim=1).detach().clone()
                )
            if self.feature == "context":
                layers = self.backend.encode_layers(views.context.aligned.units)
                sample["context_layers"] = (
                    layers[:, views.context.span.start - 1, :].detach().clone()
                )
        return sample

    def collate(self, samples: list[dict]) -> dict:
        return {
            key: torch.stack([sample[key] for sample in samples])
            for key in samples[0]
        }

    def build_scorer(self) -> nn.Module:
        head = make_head("mlp", fused_width(self.feature, self.dimension))
        mix = ScalarMix(self.backend.num_layers)
        return MixScorer(mix, HeadScorer(head, self.feature))

    def frozen_backend(self) -> EncoderBackend | None:
        return self.backend


PAD_ID = 0
OOV_ID = 1


class CbowFtPipeline(Pipeline):
    def __init__(
        self,
        vocab: list[str],
        feature: str,
        dimension: int,
        init_matrix: torch.Tensor | None = None,
    ):
        self.vocab = list(vocab)
        self.index = {word: i + 2 for i, word in enumerate(self.vocab)}
        self.feature = feature
        self.dimension = dimension
        self.init_matrix = init_matrix

    @classmethod
    def from_table(
        cls,
        table: EmbeddingTable,
        instances: Sequence,
        feature: str,
    ) -> "CbowFtPipeline":
        vocab = sorted(collect_vocabulary(instances))
        matrix = torch.zeros(len(vocab) + 2, table.dimension)
        for i, word in enumerate(vocab):
            matrix[i + 2] = table.lookup(word)
        return cls(vocab, feature, table.dimension, matrix)

    def _word_id(self, word: str) -> int:
        found = self.index.get(word)
        if found is None:
            found = self.index.get(word.lower(), OOV_ID)
        return found

    def prepare(self, instance: HeadlineInstance) -> dict:
        triple = build_triple(instance, word_tokenize)
        sample = {
            "edited_ids": [self._word_id(w) for w in triple.edited_tokens],
            "edit_span": triple.edit_span,
        }
        if self.feature == "original":
            sample["original_ids"] = [self._word_id(w) for w in triple.original_tokens]
            sample["original_span"] = triple.original_span
        if self.feature == "context":
            mask_position = triple.context_span.start
            if len(triple.context_tokens) < 2:
                raise ValueError("context contains no words besides the mask")
            sample["context_ids"] = [self._word_id(w) for w in triple.context_tokens]
            sample["mask_position"] = mask_position
        return sample

    @staticmethod
    def _pad(rows: list[list[int]]) -> torch.Tensor:
        width = max(len(row) for row in rows)
        out = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        for i, row in enumerate(rows):
            out[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        return out

    def collate(self, samples: list[dict]) -> dict:
        batch: dict = {}
        edited = [sample["edited_ids"] for sample in samples]
        batch["edited_ids"] = self._pad(edited)
        mask = torch.zeros_like(batch["edited_ids"], dtype=torch.float32)
        for i, sample in enumerate(samples):
            span = sample["edit_span"]
            mask[i, span.start - 1 : span.end] = 1.0
        batch["edit_mask"] = mask
        if self.feature == "original":
            rows = [sample["original_ids"] for sample in samples]
            batch["original_ids"] = self._pad(rows)
            mask = torch.zeros_like(batch["original_ids"], dtype=torch.float32)
            for i, sample in enumerate(samples):
                span = sample["original_span"]
                mask[i, span.start - 1 : span.end] = 1.0
            batch["original_mask"] = mask
        if self.feature == "context":
            rows = [sample["context_ids"] for sample in samples]
            batch["context_ids"] = self._pad(rows)
            mask = torch.zeros_like(batch["context_ids"], dtype=torch.float32)
            for i, sample in enumerate(samples):
                mask[i, : len(sample["context_ids"])] = 1.0
                mask[i, sample["mask_position"] - 1] = 0.0
            batch["context_mask"] = mask
        return batch

    def build_scorer(self) -> nn.Module:
        embedding = nn.Embedding(len(self.vocab) + 2, self.dimension, padding_idx=PAD_ID)
        if self.init_matrix is not None:
            with torch.no_grad():
                embedding.weight.copy_(self.init_matrix)
        head = make_head("mlp", fused_width(self.feature, self.dimension))
        return CbowFtScorer(embedding, HeadScorer(head, self.feature))

    def extra_state(self) -> dict | None:
        return {"vocab": self.vocab}


class BackendFtPipeline(Pipeline):
    def __init__(self, backend: EncoderBackend, feature: str):
        if backend.mode != "finetune":
            raise EngineError("backend must be in finetune mode for this pipeline")
        self.backend = backend
        self.feature = feature
        self.dimension = backend.width

    def prepare(self, instance: HeadlineInstance) -> dict:
        triple = build_triple(instance, word_tokenize)
        views = align_triple(triple, self.backend, self.feature)
        sample = {
            "edited_units": views.edited.aligned.units,
            "edit_span": views.edited.span,
        }
        if self.feature != "edit":
            sample["original_units"] = views.original.aligned.units
            sample["original_span"] = views.original.span
            sample["context_units"] = views.context.aligned.units
            sample["mask_position"] = views.context.span.start
        return sample

    def collate(self, samples: list[dict]) -> dict:
        return {"samples": samples}

    def build_scorer(self) -> nn.Module:
        head = make_head(
            "linear", fused_width(self.feature, self.dimension)
        )
        return BackendFtScorer(self.backend, HeadScorer(head, self.feature), self.feature)


def collect_vocabulary(instances: Sequence) -> set[str]:
    """Every word appearing in any sequence of any instance's triple."""
    words: set[str] = set()
    for instance in instances:
        headlines = (
            (instance.first, instance.second)
            if isinstance(instance, PairInstance)
            else (instance,)
        )
        for headline in headlines:
            triple = build_triple(headline, word_tokenize)
            words.update(triple.original_tokens)
            words.update(triple.edited_tokens)
            words.update(triple.context_tokens)
    return words


def build_pipeline(
    config: ExperimentConfig,
    instances: Sequence,
    table: EmbeddingTable | None = None,
    backend: EncoderBackend | None = None,
) -> Pipeline:
    """Assemble the featurization pipeline for a config. A preloaded `table`
    or `backend` skips the load (the vector file is expensive to re-read)."""
    config = config.resolved()
    if config.encoder == "table":
        if table is None:
            table = load_table(config, instances)
        if config.transfer == "freeze":
            return CbowFreezePipeline(table, config.feature)
        return CbowFtPipeline.from_table(table, instances, config.feature)
    if backend is None:
        backend = load_backend(config.encoder, mode=config.transfer)
    else:
        backend.set_mode(config.transfer)
    if config.transfer == "freeze":
        return ContextualFreezePipeline(backend, config.feature)
    return BackendFtPipeline(backend, config.feature)


def load_table(config: ExperimentConfig, instances: Sequence) -> EmbeddingTable:
    path = config.embeddings or os.environ.get(EMBEDDINGS_ENV)
    if path is None:
        raise EngineError(
            "table encoder needs an embedding file: set the embeddings config "
            f"key or ${EMBEDDINGS_ENV}"
        )
    # without instances to scope the vocabulary, keep the whole file
    vocabulary = collect_vocabulary(instances) if instances else None
    with open(path, "r", encoding="utf-8") as stream:
        return load_embeddings(stream, config.embedding_dim, vocabulary=vocabulary)


# ---------------------------------------------------------------------------
# training


def clip_gradients(parameters: Iterable[torch.Tensor], max_norm: float) -> float:
    """Rescale gradients so the global L2 norm is at most `max_norm`.
    Returns the pre-clip norm."""
    return float(torch.nn.utils.clip_grad_norm_(list(parameters), max_norm))


def validation_milestones(steps_per_epoch: int) -> list[int]:
    """Step indices (1-based, within an epoch) after which to validate:
    floor(k*S/3) for k = 1..3, deduplicated for very short epochs."""
    marks = {(k * steps_per_epoch) // 3 for k in (1, 2, 3)}
    marks.discard(0)
    return sorted(marks)


def learning_rate_at(config: ExperimentConfig, step: int, total_steps: int) -> float:
    if config.schedule == "constant":
        return config.learning_rate
    remaining = max(0.0, 1.0 - step / max(total_steps, 1))
    return config.learning_rate * remaining


def _require_kind(split: Sequence, subtask: int, what: str) -> None:
    expected = HeadlineInstance if subtask == 1 else PairInstance
    if split and not isinstance(split[0], expected):
        raise EngineError(
            f"{what} does not match subtask {subtask}: got "
            f"{type(split[0]).__name__}"
        )


def _labeled_task1(instances: Sequence[HeadlineInstance]) -> list[HeadlineInstance]:
    return [inst for inst in instances if inst.mean_grade is not None]


def _labeled_task2(pairs: Sequence[PairInstance]) -> list[PairInstance]:
    return [
        pair
        for pair in pairs
        if pair.first.mean_grade is not None and pair.second.mean_grade is not None
    ]


def _prepare_samples(pipeline: Pipeline, split: Sequence, subtask: int) -> list[dict]:
    if subtask == 1:
        return [
            {"features": pipeline.prepare(inst), "grade": inst.mean_grade}
            for inst in split
        ]
    return [
        {
            "first": pipeline.prepare(pair.first),
            "second": pipeline.prepare(pair.second),
            "z1": pair.first.mean_grade,
            "z2": pair.second.mean_grade,
            "label": pair.label,
        }
        for pair in split
    ]


def _batches(samples: list[dict], order: Sequence[int], size: int):
    for lo in range(0, len(order), size):
        yield [samples[i] for i in order[lo : lo + size]]


def _batch_loss(
    scorer: nn.Module, pipeline: Pipeline, batch: list[dict], subtask: int
) -> torch.Tensor:
    if subtask == 1:
        collated = pipeline.collate([sample["features"] for sample in batch])
        grades = torch.tensor([sample["grade"] for sample in batch])
        return loss_task1(grades, scorer(collated))
    first = pipeline.collate([sample["first"] for sample in batch])
    second = pipeline.collate([sample["second"] for sample in batch])
    z1 = torch.tensor([sample["z1"] for sample in batch])
    z2 = torch.tensor([sample["z2"] for sample in batch])
    return loss_task2(z1, z2, scorer(first), scorer(second))


def _scores(
    scorer: nn.Module,
    pipeline: Pipeline,
    samples: list[dict],
    key: str | None = None,
    batch_size: int = 128,
) -> list[float]:
    out: list[float] = []
    scorer.eval()
    with torch.no_grad():
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo : lo + batch_size]
            features = [s["features"] if key is None else s[key] for s in chunk]
            out.extend(scorer(pipeline.collate(features)).tolist())
    scorer.train()
    return out


def _dev_report(
    scorer: nn.Module, pipeline: Pipeline, dev: list[dict], subtask: int
) -> metrics.MetricsReport:
    if subtask == 1:
        preds = _scores(scorer, pipeline, dev)
        golds = [sample["grade"] for sample in dev]
        return metrics.task1_report(preds, golds)
    pred_first = _scores(scorer, pipeline, dev, key="first")
    pred_second = _scores(scorer, pipeline, dev, key="second")
    labels = [predict_label(a, b) for a, b in zip(pred_first, pred_second)]
    gold_labels = [sample["label"] if sample["label"] is not None else 0 for sample in dev]
    z1 = [sample["z1"] for sample in dev]
    z2 = [sample["z2"] for sample in dev]
    return metrics.task2_report(gold_labels, labels, z1, z2, pred_first, pred_second)


def _selection(report: metrics.MetricsReport, subtask: int) -> tuple[str, float, bool]:
    """Returns (metric name, value, higher_is_better)."""
    if subtask == 1:
        if report.rmse is None:
            raise EngineError("dev RMSE undefined; cannot select a checkpoint")
        return "rmse", report.rmse, False
    if report.accuracy is None:
        raise EngineError("dev accuracy undefined; cannot select a checkpoint")
    return "accuracy", report.accuracy, True


def save_checkpoint(
    path: str | Path,
    config: ExperimentConfig,
    scorer: nn.Module,
    extra_state: dict | None = None,
    best: dict | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": dataclasses.asdict(config),
        "config_hash": config.config_hash(),
        "subtask": config.subtask,
        "encoder": config.encoder,
        "transfer": config.transfer,
        "feature": config.feature,
        "scorer_state": scorer.state_dict(),
        "extra_state": extra_state,
        "best": best,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(source: str | Path | dict) -> dict:
    if isinstance(source, dict):
        payload = source
    else:
        payload = torch.load(source, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise EngineError(f"unsupported checkpoint format version {version!r}")
    return payload


@dataclass
class RunBundle:
    config: ExperimentConfig
    pipeline: Pipeline
    scorer: nn.Module


def restore(
    source: str | Path | dict,
    instances: Sequence = (),
    table: EmbeddingTable | None = None,
) -> RunBundle:
    """Rebuild a scorer from a checkpoint.

    `instances` is used to scope the embedding-table vocabulary for the
    frozen table path; finetuned table runs restore their trained vectors
    from the checkpoint itself.
    """
    payload = load_checkpoint(source)
    config = ExperimentConfig(**payload["config"]).resolved()
    extra = payload.get("extra_state") or {}
    if config.encoder == "table" and config.transfer == "finetune":
        pipeline: Pipeline = CbowFtPipeline(
            extra["vocab"], config.feature, config.embedding_dim
        )
    else:
        pipeline = build_pipeline(config, instances, table=table)
    scorer = pipeline.build_scorer()
    scorer.load_state_dict(payload["scorer_state"])
    scorer.eval()
    return RunBundle(config=config, pipeline=pipeline, scorer=scorer)


def train(
    config: ExperimentConfig,
    train_data: Sequence,
    dev_data: Sequence,
    out_dir: str | Path | None = None,
    table: EmbeddingTable | None = None,
    backend: EncoderBackend | None = None,
) -> RunRecord:
    """Run one experiment: Adam with global-norm clipping, dev validation at
    every third of an epoch, best checkpoint kept by the dev metric."""
    config = config.resolved()
    _require_kind(train_data, config.subtask, "training data")
    _require_kind(dev_data, config.subtask, "dev data")
    if config.subtask == 1:
        labeled_train = _labeled_task1(train_data)
        labeled_dev = _labeled_task1(dev_data)
    else:
        labeled_train = _labeled_task2(train_data)
        labeled_dev = _labeled_task2(dev_data)
    if not labeled_train:
        raise EngineError("empty training data")
    if not labeled_dev:
        raise EngineError("empty dev data")

    run_dir = Path(out_dir or config.out_dir or Path("runs") / config.config_hash()[:12])
    run_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    pipeline = build_pipeline(
        config, list(labeled_train) + list(labeled_dev), table=table, backend=backend
    )
    scorer = pipeline.build_scorer()
    frozen = pipeline.frozen_backend()
    if frozen is not None:
        frozen.module().requires_grad_(False)

    train_samples = _prepare_samples(pipeline, labeled_train, config.subtask)
    dev_samples = _prepare_samples(pipeline, labeled_dev, config.subtask)

    trainable = [p for p in scorer.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)
    steps_per_epoch = math.ceil(len(train_samples) / config.batch_size)
    total_steps = steps_per_epoch * config.max_epochs
    milestones = validation_milestones(steps_per_epoch)

    rng = random.Random(config.seed)
    scorer.train()  # a restored or pretrained encoder may arrive in eval mode
    history: list[ValidationEvent] = []
    best: dict | None = None
    higher_better = config.subtask == 2
    metric_name = "rmse" if config.subtask == 1 else "accuracy"
    best_path = run_dir / "checkpoint_best.pt"
    last_path = run_dir / "checkpoint_last.pt"
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        order = list(range(len(train_samples)))
        rng.shuffle(order)
        for index, batch in enumerate(
            _batches(train_samples, order, config.batch_size), start=1
        ):
            for group in optimizer.param_groups:
                group["lr"] = learning_rate_at(config, step, total_steps)
            optimizer.zero_grad()
            loss = _batch_loss(scorer, pipeline, batch, config.subtask)
            if not torch.isfinite(loss):
                raise EngineError(
                    f"non-finite loss {loss.item()} at epoch {epoch} step {step}"
                )
            loss.backward()
            clip_gradients(trainable, config.clip_norm)
            optimizer.step()
            step += 1
            if index in milestones:
                report = _dev_report(scorer, pipeline, dev_samples, config.subtask)
                name, value, _ = _selection(report, config.subtask)
                event = ValidationEvent(
                    step=step,
                    epoch=epoch - 1 + index / steps_per_epoch,
                    value=value,
                    metrics={m: getattr(report, m) for m in report.metric_names()},
                )
                history.append(event)
                improved = best is None or (
                    value > best["value"] if higher_better else value < best["value"]
                )
                if improved:
                    best = {"step": step, "value": value, "metric": name}
                    save_checkpoint(
                        best_path, config, scorer, pipeline.extra_state(), best
                    )

    save_checkpoint(
        last_path, config, scorer, pipeline.extra_state(),
        {"step": step, "value": history[-1].value if history else None, "metric": metric_name},
    )
    if best is None:  # unreachable: at least one milestone fires per epoch
        raise EngineError("training produced no validation events")
    selected = str(best_path if config.selection == "best" else last_path)
    record = RunRecord(
        config=config,
        config_hash=config.config_hash(),
        history=history,
        best_step=best["step"],
        best_value=best["value"],
        selection_metric=metric_name,
        checkpoint_path=selected,
        last_checkpoint_path=str(last_path),
    )
    (run_dir / "run.json").write_text(json.dumps(record.to_dict(), indent=2))
    return record


# ---------------------------------------------------------------------------
# evaluation and prediction


def predict_scores(
    bundle: RunBundle,
    instances: Sequence[HeadlineInstance],
    clamp: bool = False,
) -> list[float]:
    samples = [{"features": bundle.pipeline.prepare(inst)} for inst in instances]
    scores = _scores(bundle.scorer, bundle.pipeline, samples)
    if clamp:
        scores = [min(max(s, 0.0), 3.0) for s in scores]
    return scores


def predict_pairs(
    bundle: RunBundle, pairs: Sequence[PairInstance]
) -> tuple[list[float], list[float], list[int]]:
    samples = [
        {"first": bundle.pipeline.prepare(p.first), "second": bundle.pipeline.prepare(p.second)}
        for p in pairs
    ]
    first = _scores(bundle.scorer, bundle.pipeline, samples, key="first")
    second = _scores(bundle.scorer, bundle.pipeline, samples, key="second")
    labels = [predict_label(a, b) for a, b in zip(first, second)]
    return first, second, labels


def evaluate(
    checkpoint: str | Path | dict,
    split: Sequence,
    table: EmbeddingTable | None = None,
) -> metrics.MetricsReport:
    """Score a labeled split with a trained checkpoint."""
    payload = load_checkpoint(checkpoint)
    subtask = payload["subtask"]
    if not split:
        raise EngineError("empty evaluation split")
    _require_kind(split, subtask, "evaluation split")
    bundle = restore(payload, split, table=table)
    if subtask == 1:
        labeled = _labeled_task1(split)
        if len(labeled) != len(split):
            raise EngineError("evaluation split has unlabeled rows")
        preds = predict_scores(bundle, labeled)
        return metrics.task1_report(preds, [inst.mean_grade for inst in labeled])
    labeled_pairs = [pair for pair in split if pair.label is not None]
    if len(labeled_pairs) != len(split):
        raise EngineError("evaluation split has unlabeled rows")
    first, second, labels = predict_pairs(bundle, labeled_pairs)
    gold = [pair.label for pair in labeled_pairs]
    graded = all(
        pair.first.mean_grade is not None and pair.second.mean_grade is not None
        for pair in labeled_pairs
    )
    if graded:
        z1 = [pair.first.mean_grade for pair in labeled_pairs]
        z2 = [pair.second.mean_grade for pair in labeled_pairs]
        return metrics.task2_report(gold, labels, z1, z2, first, second)
    return metrics.task2_report(gold, labels)


def export_predictions(
    checkpoint: str | Path | dict,
    input_csv: str | Path,
    output_path: str | Path,
    table: EmbeddingTable | None = None,
    clamp: bool = False,
) -> Path:
    """Write official-format predictions: ``id,pred`` with a real-valued
    score for subtask 1 and a label in {1, 2} for subtask 2."""
    payload = load_checkpoint(checkpoint)
    subtask = payload["subtask"]
    with open(input_csv, "r", encoding="utf-8", newline="") as stream:
        rows = parse_task1(stream) if subtask == 1 else parse_task2(stream)
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id,pred"]
    if rows:
        bundle = restore(payload, rows, table=table)
        if subtask == 1:
            for inst, value in zip(rows, predict_scores(bundle, rows, clamp=clamp)):
                lines.append(f"{inst.id},{value:.6f}")
        else:
            _, _, labels = predict_pairs(bundle, rows)
            for pair, label in zip(rows, labels):
                lines.append(f"{pair.pair_id},{label}")
    output_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return output_path


# ---------------------------------------------------------------------------
# baselines


def mean_grade_baseline(train: Sequence[HeadlineInstance]) -> float:
    grades = [inst.mean_grade for inst in train if inst.mean_grade is not None]
    if not grades:
        raise EngineError("no labeled training rows")
    return sum(grades) / len(grades)


def majority_label_baseline(train: Sequence[PairInstance]) -> int:
    counts = {1: 0, 2: 0}
    for pair in train:
        if pair.label in (1, 2):
            counts[pair.label] += 1
    if counts[1] == counts[2] == 0:
        raise EngineError("no non-tie labels in training data")
    return 1 if counts[1] >= counts[2] else 2


def baseline_task1_report(
    train: Sequence[HeadlineInstance], test: Sequence[HeadlineInstance]
) -> metrics.MetricsReport:
    constant = mean_grade_baseline(train)
    golds = [inst.mean_grade for inst in _labeled_task1(test)]
    return metrics.task1_report([constant] * len(golds), golds)


def baseline_task2_report(
    train: Sequence[PairInstance], test: Sequence[PairInstance]
) -> metrics.MetricsReport:
    constant = majority_label_baseline(train)
    labeled = [pair for pair in test if pair.label is not None]
    gold = [pair.label for pair in labeled]
    pred = [constant] * len(labeled)
    graded = all(
        p.first.mean_grade is not None and p.second.mean_grade is not None
        for p in labeled
    )
    if graded:
        z1 = [p.first.mean_grade for p in labeled]
        z2 = [p.second.mean_grade for p in labeled]
        return metrics.task2_report(gold, pred, z1, z2)
    return metrics.task2_report(gold, pred)


# ---------------------------------------------------------------------------
# data directory conventions


TASK_DIRS = {1: "task-1", 2: "task-2"}
SPLIT_FILES = {
    "train": "train.csv",
    "dev": "dev.csv",
    "test": "test.csv",
    "extra": "train_funlines.csv",
}


def data_dir() -> Path | None:
    root = os.environ.get(DATA_DIR_ENV)
    return Path(root) if root else None


def load_instances(path: str | Path, subtask: int) -> list:
    with open(path, "r", encoding="utf-8", newline="") as stream:
        return parse_task1(stream) if subtask == 1 else parse_task2(stream)


def load_split(root: str | Path, subtask: int, split: str) -> list:
    path = Path(root) / TASK_DIRS[subtask] / SPLIT_FILES[split]
    return load_instances(path, subtask)
