"""Phrase labelling: external labels, a rule-based segmenter, and ablation variants."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Melody
from .errors import DataError
from .representation import check_labels

PhraseLabels = tuple[int, ...]


class SegmenterKind(str, enum.Enum):
    EXTERNAL = "external"
    HEURISTIC = "heuristic"
    NO_SEGMENT = "no_segment"
    TWO_BARS = "two_bars"
    EXPANSION = "expansion"


@dataclass(frozen=True)
class HeuristicConfig:
    rest_beats: float = 1.0
    long_note_beats: float = 2.0
    min_notes_before_long: int = 4
    min_phrase_notes: int = 2


def validate_labels(labels: Sequence[int], n_notes: int | None = None) -> PhraseLabels:
    labels = tuple(int(x) for x in labels)
    if n_notes is not None and len(labels) != n_notes:
        raise DataError(f"{len(labels)} phrase labels for {n_notes} notes")
    check_labels(labels)
    return labels


def heuristic_labels(melody: Melody, cfg: HeuristicConfig = HeuristicConfig()) -> PhraseLabels:
    """Cut after a note followed by a long rest, or after a long note that ends a
    run of at least ``min_notes_before_long`` notes.

    A cut that would leave fewer than ``min_phrase_notes`` notes on its left is
    deferred to the next note; one that would leave too few on its right is
    dropped.
    """
    notes = melody.notes
    beat = melody.beat_ticks
    n = len(notes)
    labels: list[int] = []
    phrase, count, pending = 1, 0, False
    for i, note in enumerate(notes):
        labels.append(phrase)
        count += 1
        if i == n - 1:
            break
        rest = notes[i + 1].onset - note.end
        cut = (pending
               or rest >= cfg.rest_beats * beat
               or (note.duration >= cfg.long_note_beats * beat and count >= cfg.min_notes_before_long))
        if not cut:
            continue
        if count < cfg.min_phrase_notes:
            pending = True
        elif n - i - 1 < cfg.min_phrase_notes:
            pending = False
        else:
            phrase, count, pending = phrase + 1, 0, False
    return tuple(labels)


def two_bar_labels(melody: Melody) -> PhraseLabels:
    span = 2 * melody.bar_ticks
    raw = [n.onset // span for n in melody.notes]
    return _dense(raw)


def expand_labels(labels: Sequence[int]) -> PhraseLabels:
    """Merge phrases pairwise: 2k-1 and 2k become k; an odd last phrase stays alone."""
    return tuple((k + 1) // 2 for k in labels)


def _dense(raw: Sequence[int]) -> PhraseLabels:
    out, phrase = [], 1
    for i, value in enumerate(raw):
        if i and value != raw[i - 1]:
            phrase += 1
        out.append(phrase)
    return tuple(out)


def segment(melody: Melody, kind: SegmenterKind | str,
            external: Sequence[int] | None = None,
            base: SegmenterKind | str = SegmenterKind.HEURISTIC,
            heuristic: HeuristicConfig = HeuristicConfig()) -> PhraseLabels:
    """Label every note of ``melody`` with a 1-based phrase index.

    ``EXPANSION`` merges the ``external`` labels when given, otherwise the
    labels produced by ``base``.
    """
    kind = SegmenterKind(kind)
    n = len(melody)
    if kind is SegmenterKind.EXTERNAL:
        if external is None:
            raise DataError("external segmentation requested but no labels supplied")
        return validate_labels(external, n)
    if kind is SegmenterKind.HEURISTIC:
        return heuristic_labels(melody, heuristic)
    if kind is SegmenterKind.NO_SEGMENT:
        return (1,) * n
    if kind is SegmenterKind.TWO_BARS:
        return two_bar_labels(melody)
    base = SegmenterKind(base)
    if base is SegmenterKind.EXPANSION:
        raise DataError("expansion needs a non-expansion base segmenter")
    if external is not None:
        base_labels = validate_labels(external, n)
    else:
        base_labels = segment(melody, base, heuristic=heuristic)
    return expand_labels(base_labels)


def phrase_spans(labels: Sequence[int]) -> list[tuple[int, int]]:
    """Inclusive ``(first, last)`` note index of each phrase, in order."""
    spans: list[tuple[int, int]] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[i - 1]:
            spans.append((start, i - 1))
            start = i
    return spans


def labels_from_spans(spans: Sequence[tuple[int, int]]) -> PhraseLabels:
    return tuple(k + 1 for k, (a, b) in enumerate(spans) for _ in range(a, b + 1))


def read_labels(path: str | Path) -> PhraseLabels:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return tuple(int(x) for x in text.split())
    except ValueError:
        raise DataError(f"{path}: phrase labels must be whitespace-separated integers") from None


def write_labels(labels: Sequence[int], path: str | Path) -> None:
    Path(path).write_text(" ".join(str(x) for x in labels) + "\n", encoding="utf-8")
