"""Span embeddings from a pretrained vector table or a contextual backend.

Both encoder families reduce a sentence triple to fixed-width vectors for
the edit span, the original span, and the context. The table path averages
word vectors inside the spans and max-pools the context words around the
mask; the contextual path pools per-position encoder states over the
aligned subword spans and reads the context vector straight off the mask
position.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence, TextIO

import torch
from torch import nn

from .corpus import SentenceTriple
from .spans import (
    AlignedSequence,
    Span,
    SubwordSpan,
    build_masked,
    subword_align,
    truncate_right,
)

if TYPE_CHECKING:
    from .backends import EncoderBackend


class EmbeddingTable:
    """Word-to-vector map with a fixed width.

    Lookup is case-sensitive with a lower-case fallback; absent words map to
    a zero vector and still count in mean-pool denominators.
    """

    def __init__(self, dimension: int, entries: dict[str, torch.Tensor]):
        self.dimension = dimension
        self.entries = entries
        self._oov = torch.zeros(dimension)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries or word.lower() in self.entries

    def lookup(self, word: str) -> torch.Tensor:
        vector = self.entries.get(word)
        if vector is None:
            vector = self.entries.get(word.lower())
        if vector is None:
            return self._oov
        return vector


def load_embeddings(
    stream: TextIO,
    expected_d: int,
    vocabulary: Iterable[str] | None = None,
) -> EmbeddingTable:
    """Read a text embedding file (word then `expected_d` decimals per line).

    Duplicate words keep their first occurrence, one warning each. When a
    `vocabulary` is given, only those words (matched case-sensitively or
    lower-cased) are retained, which keeps multi-million-line files cheap.
    """
    wanted: set[str] | None = None
    if vocabulary is not None:
        wanted = set()
        for word in vocabulary:
            wanted.add(word)
            wanted.add(word.lower())
    entries: dict[str, torch.Tensor] = {}
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        word, _, rest = line.partition(" ")
        values = rest.split(" ") if rest else []
        if len(values) != expected_d:
            raise ValueError(
                f"line {line_no}: expected {expected_d} values for "
                f"{word!r}, got {len(values)}"
            )
        if wanted is not None and word not in wanted:
            continue
        if word in entries:
            warnings.warn(
                f"line {line_no}: duplicate word {word!r}, keeping first",
                stacklevel=2,
            )
            continue
        try:
            vector = torch.tensor([float(v) for v in values])
        except ValueError:
            raise ValueError(f"line {line_no}: non-numeric value for {word!r}") from None
        entries[word] = vector
    return EmbeddingTable(expected_d, entries)


def _stacked(vectors: Sequence[torch.Tensor] | torch.Tensor, op: str) -> torch.Tensor:
    if torch.is_tensor(vectors):
        if vectors.shape[0] == 0:
            raise ValueError(f"{op} of an empty sequence")
        return vectors
    vectors = tuple(vectors)
    if not vectors:
        raise ValueError(f"{op} of an empty sequence")
    return torch.stack(vectors)


def mean_pool(vectors: Sequence[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    return _stacked(vectors, "mean_pool").mean(dim=0)


def max_pool(vectors: Sequence[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    return _stacked(vectors, "max_pool").amax(dim=0)


@dataclass
class SpanEmbeddings:
    """Fixed-width vectors for the edit span, the original span, and the
    context. Only `edit` is populated in the non-contrastive mode."""

    edit: torch.Tensor
    original: torch.Tensor | None = None
    context: torch.Tensor | None = None

    @property
    def width(self) -> int:
        return self.edit.shape[-1]


def cbow_encode(triple: SentenceTriple, table: EmbeddingTable) -> SpanEmbeddings:
    """Bag-of-vectors encoding: means over both spans, max over the context
    words with the mask position excluded (the table has no mask vector)."""
    edit_vectors = [table.lookup(w) for w in triple.edited_tokens]
    original_vectors = [table.lookup(w) for w in triple.original_tokens]
    mask_position = triple.context_span.start
    context_vectors = [
        table.lookup(w)
        for position, w in enumerate(triple.context_tokens, start=1)
        if position != mask_position
    ]
    if not context_vectors:
        raise ValueError("context contains no words besides the mask")
    return SpanEmbeddings(
        edit=mean_pool(edit_vectors[triple.edit_span.slice]),
        original=mean_pool(original_vectors[triple.original_span.slice]),
        context=max_pool(context_vectors),
    )


@dataclass
class ScalarMixParams:
    """Trainable layer-mixing state: one logit per encoder layer (embedding
    layer included) and a scale factor. Mixing weights are the softmax of
    the logits, so they are positive and sum to one."""

    layer_logits: Sequence[float] | torch.Tensor
    gamma: float | torch.Tensor = 1.0

    @classmethod
    def uniform(cls, num_layers: int) -> "ScalarMixParams":
        return cls(torch.zeros(num_layers + 1), 1.0)

    @classmethod
    def one_hot(
        cls, num_layers: int, layer: int, sharpness: float = 60.0
    ) -> "ScalarMixParams":
        logits = torch.zeros(num_layers + 1)
        logits[layer] = sharpness
        return cls(logits, 1.0)


def scalar_mix(
    layer_vectors: Sequence[torch.Tensor] | torch.Tensor,
    params: ScalarMixParams,
) -> torch.Tensor:
    """Scaled softmax-weighted average over the layer axis (axis 0)."""
    layers = (
        layer_vectors
        if torch.is_tensor(layer_vectors)
        else torch.stack(tuple(layer_vectors))
    )
    logits = torch.as_tensor(params.layer_logits, dtype=layers.dtype)
    if logits.ndim != 1 or logits.shape[0] != layers.shape[0]:
        raise ValueError(
            f"got {layers.shape[0]} layers but {tuple(logits.shape)} logits"
        )
    weights = torch.softmax(logits, dim=0)
    shape = (layers.shape[0],) + (1,) * (layers.ndim - 1)
    gamma = torch.as_tensor(params.gamma, dtype=layers.dtype)
    return gamma * (weights.reshape(shape) * layers).sum(dim=0)


class ScalarMix(nn.Module):
    """`scalar_mix` with the logits and scale as trainable parameters.

    The forward mixes over the second-to-last axis, so batched inputs are
    shaped (..., num_layers + 1, width).
    """

    def __init__(self, num_layers: int, gamma: float = 1.0):
        super().__init__()
        self.num_layers = num_layers
        self.layer_logits = nn.Parameter(torch.zeros(num_layers + 1))
        self.gamma = nn.Parameter(torch.tensor(float(gamma)))

    def forward(self, layers: torch.Tensor) -> torch.Tensor:
        if layers.shape[-2] != self.layer_logits.shape[0]:
            raise ValueError(
                f"got {layers.shape[-2]} layers but "
                f"{self.layer_logits.shape[0]} logits"
            )
        weights = torch.softmax(self.layer_logits, dim=0)
        return self.gamma * (weights.unsqueeze(-1) * layers).sum(dim=-2)

    def params(self) -> ScalarMixParams:
        return ScalarMixParams(self.layer_logits.detach(), float(self.gamma.detach()))


@dataclass
class AlignedView:
    """One sentence of a triple, aligned to backend subwords."""

    aligned: AlignedSequence
    span: SubwordSpan


@dataclass
class TripleViews:
    edited: AlignedView
    original: AlignedView | None
    context: AlignedView | None


def align_triple(
    triple: SentenceTriple,
    backend: "EncoderBackend",
    feature_mode: str = "context",
) -> TripleViews:
    """Align a triple to a backend's subword units.

    The context sequence is derived from the aligned edited sequence by
    substituting the backend's mask unit over the edit span, so the mask
    lands at subword position edit_span.start. Sequences longer than the
    backend's limit are right-truncated outside the spans.
    """
    max_units = backend.max_units

    def view(words: Sequence[str], span: Span) -> AlignedView:
        aligned, subword_span = subword_align(words, span, backend.subword_units)
        if max_units is not None:
            aligned = truncate_right(aligned, max_units, subword_span)
            subword_span = SubwordSpan(
                subword_span.start, subword_span.end, len(aligned.units)
            )
        return AlignedView(aligned, subword_span)

    edited = view(triple.edited_tokens, triple.edit_span)
    original = None
    context = None
    if feature_mode != "edit":
        original = view(triple.original_tokens, triple.original_span)
        masked = build_masked(edited.aligned, edited.span, backend.mask_unit)
        mask_position = edited.span.start
        context = AlignedView(
            masked, SubwordSpan(mask_position, mask_position, len(masked.units))
        )
    return TripleViews(edited=edited, original=original, context=context)


def contextual_encode(
    triple: SentenceTriple,
    backend: "EncoderBackend",
    feature_mode: str = "context",
    mix: ScalarMixParams | None = None,
) -> SpanEmbeddings:
    """Encode a triple with a contextual backend.

    Under the frozen transfer mode every position is the scalar mix of all
    layers (uniform mix by default); under finetuning the top layer is used
    directly. Span vectors are means over the aligned subword ranges; the
    context vector is the single state at the mask position. One backend
    serves every sequence, so paired sentences share parameters.
    """
    views = align_triple(triple, backend, feature_mode)
    if backend.mode == "freeze" and mix is None:
        mix = ScalarMixParams.uniform(backend.num_layers)

    def positionwise(aligned: AlignedSequence) -> torch.Tensor:
        layers = backend.encode_layers(aligned.units)
        if backend.mode == "freeze":
            return scalar_mix(layers, mix)
        return layers[-1]

    states = positionwise(views.edited.aligned)
    edit_vec = mean_pool(states[views.edited.span.slice])
    if feature_mode == "edit":
        return SpanEmbeddings(edit=edit_vec)
    original_states = positionwise(views.original.aligned)
    original_vec = mean_pool(original_states[views.original.span.slice])
    context_states = positionwise(views.context.aligned)
    context_vec = context_states[views.context.span.start - 1]
    return SpanEmbeddings(edit=edit_vec, original=original_vec, context=context_vec)
