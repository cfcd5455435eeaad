"""Parsing of the released task CSVs and construction of sentence triples.

Subtask 1 rows are single graded micro-edits; subtask 2 rows pair two edits
of the same headline with a comparative label. The replaced region is
delimited inline as ``<word/>`` inside the original headline, exactly as in
the released files.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence, TextIO

from .spans import Span, WORD_MASK

_REGION_RE = re.compile(r"<([^<>]*)/>")

GRADE_MIN = 0.0
GRADE_MAX = 3.0


class ParseError(ValueError):
    """Malformed task CSV content. Messages name the 1-based data row."""


@dataclass(frozen=True)
class HeadlineInstance:
    """One micro-edited headline; grade absent on unlabeled splits."""

    id: str
    original_text: str
    edit_word: str
    mean_grade: float | None = None


@dataclass(frozen=True)
class PairInstance:
    """Two edits of the same headline plus the funnier-one label (0 = tie)."""

    first: HeadlineInstance
    second: HeadlineInstance
    label: int | None = None

    @property
    def pair_id(self) -> str:
        return f"{self.first.id}-{self.second.id}"


@dataclass(frozen=True)
class SentenceTriple:
    """Original, edited, and masked-context word sequences with their spans.

    Spans are 1-based inclusive. The context sequence is the edited one with
    the edit span collapsed into a single mask placeholder, so its length is
    len(edited_tokens) - len(edit_span) + 1.
    """

    original_tokens: tuple[str, ...]
    edited_tokens: tuple[str, ...]
    context_tokens: tuple[str, ...]
    original_span: Span
    edit_span: Span
    context_span: Span


def split_delimited(text: str) -> tuple[str, str, str]:
    """Split a headline around its single ``<.../>`` region."""
    matches = list(_REGION_RE.finditer(text))
    if len(matches) != 1:
        raise ValueError(
            f"expected exactly one <.../> region, found {len(matches)}: {text!r}"
        )
    region = matches[0]
    return text[: region.start()], region.group(1), text[region.end() :]


def _header_map(header: Sequence[str], required: Iterable[str]) -> dict[str, int]:
    columns = {name: idx for idx, name in enumerate(header)}
    missing = [name for name in required if name not in columns]
    if missing:
        raise ParseError(f"header is missing columns: {', '.join(missing)}")
    return columns


def _rows(stream: TextIO) -> tuple[list[str], Iterator[tuple[int, list[str]]]]:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file: no header row") from None

    def numbered() -> Iterator[tuple[int, list[str]]]:
        row_no = 0
        for row in reader:
            if not row:
                continue
            row_no += 1
            yield row_no, row

    return header, numbered()


def _cell(row: list[str], columns: dict[str, int], name: str) -> str | None:
    idx = columns.get(name)
    if idx is None:
        return None
    return row[idx]


def _parse_grade(value: str | None, row_no: int, column: str) -> float | None:
    if value is None or value.strip() == "":
        return None
    try:
        grade = float(value)
    except ValueError:
        raise ParseError(f"row {row_no}: unparsable {column} {value!r}") from None
    if not GRADE_MIN <= grade <= GRADE_MAX:
        raise ParseError(f"row {row_no}: {column} {grade} outside [0, 3]")
    return grade


def _parse_label(value: str | None, row_no: int) -> int | None:
    if value is None or value.strip() == "":
        return None
    try:
        label = int(value)
    except ValueError:
        raise ParseError(f"row {row_no}: unparsable label {value!r}") from None
    if label not in (0, 1, 2):
        raise ParseError(f"row {row_no}: label {label} outside {{0, 1, 2}}")
    return label


def _check_region(text: str, row_no: int) -> str:
    try:
        split_delimited(text)
    except ValueError as exc:
        raise ParseError(f"row {row_no}: {exc}") from None
    return text


def _headline(
    row: list[str],
    columns: dict[str, int],
    row_no: int,
    suffix: str = "",
    id_value: str | None = None,
) -> HeadlineInstance:
    original = _check_region(row[columns["original" + suffix]], row_no)
    edit = row[columns["edit" + suffix]]
    if not edit.strip():
        raise ParseError(f"row {row_no}: empty edit word")
    grade = _parse_grade(
        _cell(row, columns, "meanGrade" + suffix), row_no, "meanGrade" + suffix
    )
    if id_value is None:
        id_value = row[columns["id" + suffix]]
    return HeadlineInstance(
        id=id_value, original_text=original, edit_word=edit, mean_grade=grade
    )


def parse_task1(stream: TextIO) -> list[HeadlineInstance]:
    """Parse a subtask 1 CSV. Row order is preserved; unlabeled rows keep a
    None grade. The per-annotator grades column is validated by shape only
    and not retained."""
    header, rows = _rows(stream)
    columns = _header_map(header, ("id", "original", "edit"))
    out = []
    for row_no, row in rows:
        if len(row) != len(header):
            raise ParseError(
                f"row {row_no}: expected {len(header)} columns, got {len(row)}"
            )
        out.append(_headline(row, columns, row_no))
    return out


def parse_task2(stream: TextIO) -> list[PairInstance]:
    """Parse a subtask 2 CSV.

    Accepts either separate ``id1``/``id2`` columns or a single composite
    ``id`` of the form ``first-second``. The label column is optional for
    unlabeled splits.
    """
    header, rows = _rows(stream)
    columns = _header_map(
        header, ("original1", "edit1", "original2", "edit2")
    )
    split_ids = "id1" in columns and "id2" in columns
    if not split_ids and "id" not in columns:
        raise ParseError("header is missing columns: id (or id1/id2)")
    out = []
    for row_no, row in rows:
        if len(row) != len(header):
            raise ParseError(
                f"row {row_no}: expected {len(header)} columns, got {len(row)}"
            )
        if split_ids:
            id1, id2 = row[columns["id1"]], row[columns["id2"]]
        else:
            composite = row[columns["id"]]
            id1, _, id2 = composite.partition("-")
            if not id1 or not id2:
                raise ParseError(
                    f"row {row_no}: composite id {composite!r} is not 'first-second'"
                )
        first = _headline(row, columns, row_no, suffix="1", id_value=id1)
        second = _headline(row, columns, row_no, suffix="2", id_value=id2)
        if first.id == second.id:
            raise ParseError(f"row {row_no}: pair members share id {first.id!r}")
        label = _parse_label(_cell(row, columns, "label"), row_no)
        if (
            label == 0
            and first.mean_grade is not None
            and second.mean_grade is not None
            and first.mean_grade != second.mean_grade
        ):
            raise ParseError(
                f"row {row_no}: label 0 requires equal grades, got "
                f"{first.mean_grade} and {second.mean_grade}"
            )
        out.append(PairInstance(first=first, second=second, label=label))
    return out


def build_triple(
    instance: HeadlineInstance,
    word_tokenizer: Callable[[str], Sequence[str]],
) -> SentenceTriple:
    """Construct the original/edited/context token sequences for one edit.

    The shared prefix and suffix are tokenized once, so tokens outside the
    spans are identical across the three sequences after position shifting,
    and substituting tokens back at the spans round-trips exactly.
    """
    prefix, region, suffix = split_delimited(instance.original_text)
    prefix_tokens = list(word_tokenizer(prefix))
    region_tokens = list(word_tokenizer(region))
    suffix_tokens = list(word_tokenizer(suffix))
    edit_tokens = list(word_tokenizer(instance.edit_word))
    if not region_tokens:
        raise ValueError(
            f"instance {instance.id}: delimited region {region!r} tokenizes "
            "to zero tokens"
        )
    if not edit_tokens:
        raise ValueError(
            f"instance {instance.id}: edit word {instance.edit_word!r} "
            "tokenizes to zero tokens"
        )
    start = len(prefix_tokens) + 1
    return SentenceTriple(
        original_tokens=tuple(prefix_tokens + region_tokens + suffix_tokens),
        edited_tokens=tuple(prefix_tokens + edit_tokens + suffix_tokens),
        context_tokens=tuple(prefix_tokens + [WORD_MASK] + suffix_tokens),
        original_span=Span(start, start + len(region_tokens) - 1),
        edit_span=Span(start, start + len(edit_tokens) - 1),
        context_span=Span(start, start),
    )


def merge_extra(train: Sequence, extra: Sequence) -> list:
    """Concatenate the extra training split after the primary one.

    No deduplication and no reweighting; extra rows are mixed in only by the
    per-epoch shuffle downstream.
    """
    return list(train) + list(extra)
