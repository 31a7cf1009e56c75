"""Skeleton-note extraction within phrases.

Four note types are detected: the trembling figure (a pitch that returns to
itself around one or two shorter ornamental notes), metrical accents,
syncopations and long notes. A phrase where nothing fires falls back to its
longest note so every phrase contributes at least one skeleton token.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Melody
from .representation import TokenSequence, encode
from .segmentation import phrase_spans, validate_labels


class SkeletonType(enum.Flag):
    # declaration order doubles as reporting priority
    TREMBLING = enum.auto()
    SYNCOPATION = enum.auto()
    METRICAL_ACCENT = enum.auto()
    LONG_NOTE = enum.auto()


NONE = SkeletonType(0)
_NAMES = {
    SkeletonType.TREMBLING: "Trembling",
    SkeletonType.SYNCOPATION: "Syncopation",
    SkeletonType.METRICAL_ACCENT: "MetricalAccent",
    SkeletonType.LONG_NOTE: "LongNote",
}


def flag_names(flags: SkeletonType) -> list[str]:
    return [name for member, name in _NAMES.items() if member in flags]


@dataclass(frozen=True)
class SkeletonConfig:
    long_note_beats: float = 1.5
    trembling_max_between: int = 2


@dataclass(frozen=True)
class SkeletonAnnotation:
    flags: tuple[SkeletonType, ...]
    selected: tuple[bool, ...]
    labels: tuple[int, ...]
    fallback: tuple[bool, ...]

    def selected_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.selected) if s]

    def dumps(self) -> str:
        lines = []
        for i, (f, s, fb) in enumerate(zip(self.flags, self.selected, self.fallback)):
            names = flag_names(f) + (["Fallback"] if fb else [])
            lines.append(f"{i} {','.join(names) or '-'} {int(s)}")
        return "\n".join(lines) + "\n"


def trembling_pairs(melody: Melody, labels: Sequence[int],
                    max_between: int = 2) -> list[tuple[int, int]]:
    notes = melody.notes
    pairs = []
    for i, a in enumerate(notes):
        for j in range(i + 2, min(i + 2 + max_between, len(notes))):
            b = notes[j]
            if labels[j] != labels[i] or b.pitch != a.pitch:
                continue
            between = notes[i + 1:j]
            if all(m.duration < a.duration and m.duration < b.duration for m in between):
                pairs.append((i, j))
    return pairs


def rhythm_flags(melody: Melody, cfg: SkeletonConfig = SkeletonConfig()) -> list[SkeletonType]:
    beat, bar = melody.beat_ticks, melody.bar_ticks
    numerator = melody.time_signature[0]
    out = []
    for n in melody.notes:
        f = NONE
        pos = n.onset % bar
        if pos == 0 or (numerator == 4 and pos == 2 * beat):
            f |= SkeletonType.METRICAL_ACCENT
        if n.onset % beat and n.end > (n.onset // beat + 1) * beat:
            f |= SkeletonType.SYNCOPATION
        if n.duration >= cfg.long_note_beats * beat:
            f |= SkeletonType.LONG_NOTE
        out.append(f)
    return out


def extract_skeleton(melody: Melody, labels: Sequence[int],
                     cfg: SkeletonConfig = SkeletonConfig()) -> SkeletonAnnotation:
    labels = validate_labels(labels, len(melody))
    flags = rhythm_flags(melody, cfg)
    for i, j in trembling_pairs(melody, labels, cfg.trembling_max_between):
        flags[i] |= SkeletonType.TREMBLING
        flags[j] |= SkeletonType.TREMBLING
    selected = [bool(f) for f in flags]
    fallback = [False] * len(flags)
    for first, last in phrase_spans(labels):
        if any(selected[first:last + 1]):
            continue
        # max() keeps the earliest index among equal durations
        k = max(range(first, last + 1), key=lambda i: (melody.notes[i].duration, -i))
        flags[k] = SkeletonType.LONG_NOTE
        selected[k] = fallback[k] = True
    return SkeletonAnnotation(tuple(flags), tuple(selected), labels, tuple(fallback))


def remove_fraction(ann: SkeletonAnnotation, fraction: float = 0.5,
                    seed: int = 0) -> SkeletonAnnotation:
    """Deselect ``floor(k * fraction)`` of the ``k`` skeleton notes in each phrase,
    always leaving at least one."""
    rng = np.random.default_rng(seed)
    selected = list(ann.selected)
    for first, last in phrase_spans(ann.labels):
        chosen = [i for i in range(first, last + 1) if selected[i]]
        drop = min(math.floor(len(chosen) * fraction), len(chosen) - 1)
        if drop <= 0:
            continue
        for i in rng.choice(chosen, size=drop, replace=False):
            selected[int(i)] = False
    return replace(ann, selected=tuple(selected))


def skeleton_sequence(melody: Melody, labels: Sequence[int],
                      ann: SkeletonAnnotation) -> TokenSequence:
    """Encode the selected notes, keeping their original phrase ids."""
    idx = ann.selected_indices()
    sub = melody.with_notes(melody.notes[i] for i in idx)
    return encode(sub, [labels[i] for i in idx], kind="skeleton")


def write_annotation(ann: SkeletonAnnotation, path: str | Path) -> None:
    Path(path).write_text(ann.dumps(), encoding="utf-8")
