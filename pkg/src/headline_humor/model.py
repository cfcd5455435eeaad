"""Contrast features, scoring heads, losses, and pairwise label derivation.

The scorer is pointwise: it regresses one grade per headline. Pairwise
labels fall out of comparing the two member scores, so no separate
classification head exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

FEATURE_MODES = ("context", "original", "edit")


@dataclass
class FusionFeature:
    """Contrast vector [x; y; |x - y|; x * y] (width 4d), or the bare edit
    vector (width d) in the non-contrastive mode."""

    vector: torch.Tensor
    mode: str

    @property
    def width(self) -> int:
        return self.vector.shape[-1]


def fuse(
    x: torch.Tensor, y: torch.Tensor | None = None, mode: str = "context"
) -> FusionFeature:
    """Build the scorer input from a pair of span vectors.

    `context` pairs the edit vector with the context vector, `original`
    pairs it with the original-span vector, and `edit` passes the edit
    vector through alone. Inputs may be single vectors or batches.
    """
    if mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    if mode == "edit":
        if y is not None:
            raise ValueError("edit mode takes no second vector")
        return FusionFeature(x, mode)
    if y is None:
        raise ValueError(f"{mode} mode requires a second vector")
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(
            f"width mismatch: {x.shape[-1]} vs {y.shape[-1]}"
        )
    vector = torch.cat([x, y, (x - y).abs(), x * y], dim=-1)
    return FusionFeature(vector, mode)


def fused_width(mode: str, dimension: int) -> int:
    return dimension if mode == "edit" else 4 * dimension


class MlpHead(nn.Module):
    """Two-layer scorer, 256 hidden units, tanh in between."""

    HIDDEN = 256

    def __init__(self, in_width: int):
        super().__init__()
        self.in_width = in_width
        self.hidden = nn.Linear(in_width, self.HIDDEN)
        self.out = nn.Linear(self.HIDDEN, 1)
        _init_affine(self.hidden)
        _init_affine(self.out)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.out(torch.tanh(self.hidden(features))).squeeze(-1)


class LinearHead(nn.Module):
    """Single affine projection, used when the encoder itself is trained."""

    def __init__(self, in_width: int):
        super().__init__()
        self.in_width = in_width
        self.out = nn.Linear(in_width, 1)
        _init_affine(self.out)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.out(features).squeeze(-1)


def _init_affine(layer: nn.Linear) -> None:
    # uniform fan-in scaling for weights, zero biases
    bound = 1.0 / math.sqrt(layer.in_features)
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.zeros_(layer.bias)


def make_head(kind: str, in_width: int) -> nn.Module:
    if kind == "mlp":
        return MlpHead(in_width)
    if kind == "linear":
        return LinearHead(in_width)
    raise ValueError(f"unknown head kind {kind!r}")


def score(features: FusionFeature | torch.Tensor, head: nn.Module) -> torch.Tensor:
    """Apply a head to one feature vector or a batch of them.

    The output is an unclamped real score; clamping to the grade range is an
    explicit inference option elsewhere, never a default.
    """
    vector = features.vector if isinstance(features, FusionFeature) else features
    if vector.shape[-1] != head.in_width:
        raise ValueError(
            f"feature width {vector.shape[-1]} does not match head input "
            f"width {head.in_width}"
        )
    return head(vector)


def loss_task1(grades: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Squared-error regression loss, averaged over the batch so the
    learning rate does not couple to the batch size."""
    if grades.shape != predicted.shape:
        raise ValueError(f"shape mismatch: {grades.shape} vs {predicted.shape}")
    if grades.numel() == 0:
        raise ValueError("empty batch")
    return ((grades - predicted) ** 2).mean()


def loss_task2(
    grades_first: torch.Tensor,
    grades_second: torch.Tensor,
    predicted_first: torch.Tensor,
    predicted_second: torch.Tensor,
) -> torch.Tensor:
    """Sum of the two members' regression losses. The comparative label
    never enters; tied pairs still contribute through their grades."""
    return loss_task1(grades_first, predicted_first) + loss_task1(
        grades_second, predicted_second
    )


def predict_label(score_first: float, score_second: float) -> int:
    """Pick the funnier member by score; exact ties resolve to 1 so runs
    stay reproducible."""
    if not (math.isfinite(score_first) and math.isfinite(score_second)):
        raise ValueError(
            f"non-finite scores: {score_first}, {score_second}"
        )
    return 1 if score_first >= score_second else 2
