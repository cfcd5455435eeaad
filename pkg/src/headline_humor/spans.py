"""Word tokenization and word-to-subword span bookkeeping.

Token spans are 1-based and inclusive on both ends everywhere in this
package; Python slices are derived through :meth:`Span.slice`. Word to
subword alignment works by tokenizing word-by-word, so span boundaries are
exact by construction and never depend on character offsets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

# Word-level placeholder substituted for the edit span when building the
# context sentence. Backends swap it for their own mask unit.
WORD_MASK = "[MASK]"

# subword_fn(word, is_first) -> subword units for that word. `is_first` lets
# byte-level vocabularies prepend a space marker to non-initial words.
SubwordFn = Callable[[str, bool], Sequence[str]]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class SpanTruncationError(ValueError):
    """Right-truncation would cut into a protected span."""


@dataclass(frozen=True)
class Span:
    """Contiguous token range, 1-based inclusive."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not 1 <= self.start <= self.end:
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1

    @property
    def slice(self) -> slice:
        """The equivalent 0-based Python slice."""
        return slice(self.start - 1, self.end)


@dataclass(frozen=True)
class SubwordSpan(Span):
    """A span over subword units, carrying the length of its sequence."""

    sequence_length: int

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.end > self.sequence_length:
            raise ValueError(
                f"span [{self.start}, {self.end}] exceeds sequence of "
                f"{self.sequence_length} units"
            )


@dataclass(frozen=True)
class AlignedSequence:
    """Subword units plus, for each source word, the half-open unit range it
    produced. Ranges tile the unit sequence in order."""

    units: tuple[str, ...]
    word_boundaries: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        cursor = 0
        for lo, hi in self.word_boundaries:
            if lo != cursor or hi <= lo:
                raise ValueError("word boundaries must tile the unit sequence")
            cursor = hi
        if cursor != len(self.units):
            raise ValueError("word boundaries must cover every unit")

    def __len__(self) -> int:
        return len(self.units)

    def word_span_to_subwords(self, word_span: Span) -> SubwordSpan:
        if word_span.end > len(self.word_boundaries):
            raise ValueError("word span out of bounds")
        lo = self.word_boundaries[word_span.start - 1][0]
        hi = self.word_boundaries[word_span.end - 1][1]
        return SubwordSpan(lo + 1, hi, len(self.units))


def word_tokenize(text: str) -> list[str]:
    """Deterministic word tokenizer.

    Runs of word characters form one token; every other non-space character
    is its own token. No visible character is dropped, so joining the tokens
    reconstructs the input minus whitespace.
    """
    return _TOKEN_RE.findall(text)


def subword_align(
    words: Sequence[str], word_span: Span, subword_fn: SubwordFn
) -> tuple[AlignedSequence, SubwordSpan]:
    """Tokenize `words` into subword units and map `word_span` onto them.

    The returned span is the union of the unit ranges of the words inside
    `word_span`; contiguity follows from per-word tokenization.
    """
    if word_span.end > len(words):
        raise ValueError(
            f"word span [{word_span.start}, {word_span.end}] exceeds "
            f"{len(words)} words"
        )
    units: list[str] = []
    boundaries: list[tuple[int, int]] = []
    for index, word in enumerate(words):
        pieces = list(subword_fn(word, index == 0))
        if not pieces:
            raise ValueError(f"word {word!r} produced no subword units")
        lo = len(units)
        units.extend(pieces)
        boundaries.append((lo, len(units)))
    aligned = AlignedSequence(tuple(units), tuple(boundaries))
    return aligned, aligned.word_span_to_subwords(word_span)


def build_masked(
    aligned: AlignedSequence, span: Span, mask_unit: str
) -> AlignedSequence:
    """Replace the units inside `span` with a single mask unit.

    The span must begin and end on word boundaries (spans produced by
    `subword_align` always do), otherwise the output could not keep a valid
    word tiling. Output length is len(aligned) - len(span) + 1 and the mask
    sits at position span.start.
    """
    if span.end > len(aligned.units):
        raise ValueError("span out of bounds")
    lo, hi = span.start - 1, span.end
    starts = {b[0] for b in aligned.word_boundaries}
    ends = {b[1] for b in aligned.word_boundaries}
    if lo not in starts or hi not in ends:
        raise ValueError("mask span must be aligned to word boundaries")
    units = aligned.units[:lo] + (mask_unit,) + aligned.units[hi:]
    shift = 1 - (hi - lo)
    boundaries: list[tuple[int, int]] = []
    placed = False
    for blo, bhi in aligned.word_boundaries:
        if bhi <= lo:
            boundaries.append((blo, bhi))
        elif blo >= hi:
            boundaries.append((blo + shift, bhi + shift))
        elif not placed:
            boundaries.append((lo, lo + 1))
            placed = True
    return AlignedSequence(units, tuple(boundaries))


def truncate_right(
    aligned: AlignedSequence, max_units: int, protected: Span | None = None
) -> AlignedSequence:
    """Drop whole words from the right until at most `max_units` remain.

    Headlines are short, so this rarely fires; if it would cut into
    `protected`, the instance errors out loudly rather than silently
    corrupting the span.
    """
    if len(aligned.units) <= max_units:
        return aligned
    if protected is not None and protected.end > max_units:
        raise SpanTruncationError(
            f"cannot truncate to {max_units} units without cutting the span "
            f"[{protected.start}, {protected.end}]"
        )
    boundaries = [b for b in aligned.word_boundaries if b[1] <= max_units]
    if not boundaries:
        raise SpanTruncationError(f"no word fits within {max_units} units")
    keep = boundaries[-1][1]
    return AlignedSequence(aligned.units[:keep], tuple(boundaries))
