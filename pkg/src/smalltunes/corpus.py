"""Melody containers, MIDI ingestion and desk-scale corpora.

All melodies live on a 480 ticks-per-quarter clock and are snapped to a
60-tick (32nd note) grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import midi
from .errors import DataError, EmptyMelodyError, FilteredOut

TICKS_PER_QUARTER = 480
GRID = 60
PENTATONIC_CLASSES = frozenset({0, 2, 4, 7, 9})


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset: int
    duration: int

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True)
class Melody:
    """A quantized monophonic melody.

    ``phrases`` optionally carries ground-truth phrase labels (synthetic
    corpora only); it takes no part in equality.
    """

    notes: tuple[NoteEvent, ...]
    ticks_per_quarter: int = TICKS_PER_QUARTER
    time_signature: tuple[int, int] = (4, 4)
    title: str = ""
    phrases: tuple[int, ...] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "notes", tuple(self.notes))
        object.__setattr__(self, "time_signature", tuple(self.time_signature))
        if not self.notes:
            raise EmptyMelodyError("melody has no notes")
        if self.ticks_per_quarter != TICKS_PER_QUARTER:
            raise DataError(f"melodies must use {TICKS_PER_QUARTER} ticks per quarter")
        num, den = self.time_signature
        if num < 1 or den < 1:
            raise DataError(f"invalid time signature {num}/{den}")
        prev_end = 0
        for i, n in enumerate(self.notes):
            if not 0 <= n.pitch <= 127:
                raise DataError(f"note {i}: pitch {n.pitch} outside 0-127")
            if n.duration < GRID or n.duration % GRID or n.onset % GRID:
                raise DataError(f"note {i}: onset/duration not on the {GRID}-tick grid")
            if n.onset < prev_end:
                raise DataError(f"note {i}: overlaps previous note (onset {n.onset} < {prev_end})")
            prev_end = n.end
        if self.phrases is not None and len(self.phrases) != len(self.notes):
            raise DataError("phrase labels do not match note count")

    def __len__(self) -> int:
        return len(self.notes)

    @property
    def pitches(self) -> list[int]:
        return [n.pitch for n in self.notes]

    @property
    def durations(self) -> list[int]:
        return [n.duration for n in self.notes]

    @property
    def onsets(self) -> list[int]:
        return [n.onset for n in self.notes]

    @property
    def end(self) -> int:
        return self.notes[-1].end

    @property
    def beat_ticks(self) -> int:
        return self.ticks_per_quarter * 4 // self.time_signature[1]

    @property
    def bar_ticks(self) -> int:
        return self.beat_ticks * self.time_signature[0]

    def with_notes(self, notes: Iterable[NoteEvent]) -> "Melody":
        return Melody(tuple(notes), self.ticks_per_quarter, self.time_signature, self.title)


def _snap(tick: int, tpq: int) -> int:
    """Rescale to 480 tpq and round half-up onto the 60-tick grid."""
    slots = TICKS_PER_QUARTER // GRID
    return ((2 * tick * slots + tpq) // (2 * tpq)) * GRID


def quantize_notes(raw: Sequence[tuple[int, int, int]], tpq: int) -> list[NoteEvent]:
    """Snap ``(pitch, start, end)`` triples and force monophony.

    Simultaneous onsets keep the highest pitch; an earlier note that runs into
    the next onset is truncated there.
    """
    snapped = []
    for pitch, start, end in raw:
        onset = _snap(start, tpq)
        duration = max(GRID, _snap(end - start, tpq))
        snapped.append((onset, -pitch, duration))
    snapped.sort()
    notes: list[NoteEvent] = []
    for onset, neg_pitch, duration in snapped:
        if notes and notes[-1].onset == onset:
            continue
        if notes and notes[-1].end > onset:
            last = notes[-1]
            notes[-1] = NoteEvent(last.pitch, last.onset, onset - last.onset)
        notes.append(NoteEvent(-neg_pitch, onset, duration))
    return notes


def parse_midi(data: bytes) -> Melody:
    """Parse an SMF (type 0 or 1) into a quantized monophonic melody.

    The track with the most notes is used. Raises :class:`FilteredOut` when
    the first time signature has a denominator other than 4.
    """
    raw = midi.read_smf(data)
    if not raw.tracks:
        raise EmptyMelodyError("file contains no tracks")
    best = max(range(len(raw.tracks)), key=lambda i: (len(raw.tracks[i].notes), -i))
    track = raw.tracks[best]
    if not track.notes:
        raise EmptyMelodyError("no track contains notes")
    num, den = (raw.time_signatures[0][1], raw.time_signatures[0][2]) if raw.time_signatures else (4, 4)
    if den != 4:
        raise FilteredOut(f"time signature {num}/{den} has denominator != 4")
    title = track.name or next((t.name for t in raw.tracks if t.name), "")
    notes = quantize_notes(track.notes, raw.ticks_per_quarter)
    if not notes:
        raise EmptyMelodyError("no notes after quantization")
    return Melody(tuple(notes), TICKS_PER_QUARTER, (num, den), title)


def write_midi(melody: Melody) -> bytes:
    notes = [(n.pitch, n.onset, n.end) for n in melody.notes]
    return midi.write_smf(notes, melody.ticks_per_quarter, melody.time_signature, melody.title)


def read_midi_file(path: str | Path) -> Melody:
    return parse_midi(Path(path).read_bytes())


def write_midi_file(melody: Melody, path: str | Path) -> None:
    Path(path).write_bytes(write_midi(melody))


# ---------------------------------------------------------------------------
# synthetic corpora

_BEAT_PATTERNS = ((480,), (240, 240), (240, 120, 120), (120, 120, 240))
_PENTATONIC_PITCHES = [p for p in range(60, 85) if p % 12 in PENTATONIC_CLASSES]


def _beat_rhythm(rng: np.random.Generator, beats: int) -> list[int]:
    while True:
        out: list[int] = []
        for _ in range(beats):
            out.extend(_BEAT_PATTERNS[rng.integers(len(_BEAT_PATTERNS))])
        if len(out) >= 3:
            return out


def _synthetic_song(rng: np.random.Generator, style: str, title: str) -> Melody:
    numerator = int(rng.choice([2, 4]))
    n_phrases = int(rng.integers(4, 9))
    body_beats = 2 * numerator - 2  # each phrase ends with a two-beat note
    templates = [_beat_rhythm(rng, body_beats) for _ in range(2)]
    if style == "pentatonic":
        scale = _PENTATONIC_PITCHES
    else:
        scale = list(range(55, 85))
    pos = int(rng.integers(len(scale) // 3, 2 * len(scale) // 3))

    def step() -> int:
        nonlocal pos
        pos = int(np.clip(pos + rng.integers(-2, 3), 0, len(scale) - 1))
        return scale[pos]

    notes: list[NoteEvent] = []
    labels: list[int] = []
    tick = 0
    for k in range(1, n_phrases + 1):
        rhythm = list(templates[int(rng.integers(2))])
        last = k == n_phrases
        if last and style == "pentatonic" and numerator == 4:
            # final bar reads as [x, C, C-long] so the tonic is unambiguous
            rhythm = _beat_rhythm(rng, body_beats - 2) + [480, 480]
        for j, dur in enumerate(rhythm):
            pitch = step()
            if last and style == "pentatonic" and numerator == 4 and j == len(rhythm) - 1:
                pitch = 72
            notes.append(NoteEvent(pitch, tick, dur))
            labels.append(k)
            tick += dur
        final = 72 if last and style == "pentatonic" else step()
        notes.append(NoteEvent(final, tick, 960))
        labels.append(k)
        tick += 960
    if style == "chromatic" and not any(n.pitch % 12 in (1, 3, 8) for n in notes):
        i = int(rng.integers(len(notes)))
        n = notes[i]
        notes[i] = NoteEvent(n.pitch - n.pitch % 12 + 1, n.onset, n.duration)
    return Melody(tuple(notes), TICKS_PER_QUARTER, (numerator, 4), title, phrases=tuple(labels))


def make_synthetic_corpus(n_songs: int, seed: int, style: str = "pentatonic") -> list[Melody]:
    """Generate gapless folk-like melodies of 4-8 two-bar phrases.

    Every melody carries its ground-truth phrase labels in ``Melody.phrases``.
    """
    if n_songs < 1:
        raise ValueError(f"n_songs must be >= 1, got {n_songs}")
    if style not in ("pentatonic", "chromatic"):
        raise ValueError(f"unknown style {style!r}")
    rng = np.random.default_rng(seed)
    return [_synthetic_song(rng, style, f"synthetic-{seed}-{i:04d}") for i in range(n_songs)]


# ---------------------------------------------------------------------------
# splitting and manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str
    n_notes: int


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int

    def split(self, tag: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def dumps(self) -> str:
        lines = [f"# seed={self.seed}"]
        lines += [f"{e.path}\t{e.split}\t{e.n_notes}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CorpusManifest":
        seed = 0
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.startswith("# seed="):
                    seed = int(line.split("=", 1)[1])
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in ("train", "test"):
                raise DataError(f"manifest line {lineno}: expected 'path<TAB>train|test<TAB>notes'")
            entries.append(ManifestEntry(parts[0], parts[1], int(parts[2])))
        return cls(tuple(entries), seed)


def split_corpus(melodies: Sequence[Melody], ratio: float = 0.9, seed: int = 0,
                 paths: Sequence[str] | None = None) -> CorpusManifest:
    """Shuffle deterministically and tag ``ratio`` of the corpus as train.

    The test share is floored, so the train split absorbs any remainder.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if not melodies:
        raise DataError("cannot split an empty corpus")
    if paths is None:
        paths = [m.title or f"{i:04d}" for i, m in enumerate(melodies)]
    n = len(melodies)
    n_test = math.floor(n * (1.0 - ratio) + 1e-9)
    order = np.random.default_rng(seed).permutation(n)
    test = set(int(i) for i in order[:n_test])
    entries = tuple(ManifestEntry(paths[i], "test" if i in test else "train", len(melodies[i]))
                    for i in range(n))
    return CorpusManifest(entries, seed)
