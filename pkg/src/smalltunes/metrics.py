"""Objective melody metrics.

TPC and TRC compare a two-bar theme against sliding windows of a song (pitch
windows stride one note, onset windows stride one 16th slot). PSC scores
pentatonic adherence relative to a tonic; RC is groove consistency between
consecutive bars; PE and PCE are base-2 entropies of pitches and pitch classes.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import Melody
from .errors import DataError

SLOT = 120  # one 16th note at 480 ticks per quarter
PENTATONIC_DEGREES = frozenset({0, 2, 4, 7, 9})
ORNAMENT_DEGREES = frozenset({5, 6, 10, 11})
COLUMNS = ("TPC", "TRC", "RC", "PSC", "PCE", "PE")


def onset_vector(melody: Melody, start: int = 0, end: int | None = None) -> np.ndarray:
    """Binary onset slots over ``[start, end)``; ``end`` defaults to the melody's end."""
    end = melody.end if end is None else end
    bits = np.zeros(max(0, math.ceil((end - start) / SLOT)), dtype=np.uint8)
    for n in melody.notes:
        if start <= n.onset < end:
            bits[(n.onset - start) // SLOT] = 1
    return bits


def _min_window_distance(pattern: np.ndarray, seq: np.ndarray, first: int) -> int:
    L = len(pattern)
    if first + L > len(seq):
        raise DataError(f"no window of length {L} fits after position {first} in a sequence of {len(seq)}")
    windows = sliding_window_view(seq[first:], L)
    return int((windows != pattern).sum(axis=1).min())


def trc(theme: Melody, continuation: Melody, skip_ticks: int = 0) -> int:
    """Minimum onset Hamming distance over windows starting at or after ``skip_ticks``."""
    return _min_window_distance(onset_vector(theme), onset_vector(continuation),
                                math.ceil(skip_ticks / SLOT))


def tpc(theme: Melody, continuation: Melody, skip_notes: int = 0) -> int:
    """Minimum count of unequal pitches over note windows starting at or after ``skip_notes``."""
    return _min_window_distance(np.array(theme.pitches), np.array(continuation.pitches), skip_notes)


def detect_tonic(melody: Melody) -> int:
    """Most frequent pitch class in the final bar; ties go to the class heard last."""
    bar = melody.bar_ticks
    last_bar = melody.notes[-1].onset // bar * bar
    classes = [n.pitch % 12 for n in melody.notes if n.onset >= last_bar]
    counts = Counter(classes)
    best = max(counts.values())
    return next(c for c in reversed(classes) if counts[c] == best)


def psc(melody: Melody, tonic: int | None = None,
        ornament: frozenset[int] = ORNAMENT_DEGREES) -> float:
    """Mean per-note score: 10 for pentatonic degrees, 6 for ornament degrees, else -10."""
    if len(melody) == 0:
        raise DataError("PSC of an empty melody")
    tonic = detect_tonic(melody) if tonic is None else tonic % 12
    scores = []
    for p in melody.pitches:
        degree = (p - tonic) % 12
        scores.append(10 if degree in PENTATONIC_DEGREES else 6 if degree in ornament else -10)
    return float(np.mean(scores))


def _entropy(values: Sequence[int]) -> float:
    if not values:
        raise DataError("entropy of an empty melody")
    counts = np.array(list(Counter(values).values()), dtype=np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0  # drop -0.0


def pe(melody: Melody) -> float:
    return _entropy(melody.pitches)


def pce(melody: Melody) -> float:
    return _entropy([p % 12 for p in melody.pitches])


def rc(melody: Melody) -> float:
    """Groove consistency: mean of 1 - Hamming/slots over consecutive bar pairs, as a fraction."""
    bar = melody.bar_ticks
    n_bars = math.ceil(melody.end / bar)
    if n_bars < 2:
        raise DataError("RC needs at least two bars")
    per_bar = bar // SLOT
    grid = onset_vector(melody, 0, n_bars * bar).reshape(n_bars, per_bar)
    return float(np.mean(1.0 - (grid[1:] != grid[:-1]).sum(axis=1) / per_bar))


def theme_of(melody: Melody, bars: int = 2) -> Melody:
    """Notes with onset inside the first ``bars`` bars."""
    limit = bars * melody.bar_ticks
    if melody.end < limit:
        raise DataError(f"melody spans {melody.end} ticks, shorter than {bars} bars")
    return melody.with_notes(n for n in melody.notes if n.onset < limit)


@dataclass(frozen=True)
class MetricReport:
    tpc: float
    trc: float
    rc: float
    psc: float
    pce: float
    pe: float

    def cells(self) -> list[str]:
        def fmt(x: float, digits: int) -> str:
            return "nan" if math.isnan(x) else f"{x:.{digits}f}"
        return [fmt(self.tpc, 3), fmt(self.trc, 3), fmt(100 * self.rc, 2),
                fmt(self.psc, 3), fmt(self.pce, 4), fmt(self.pe, 4)]


def _or_nan(fn, *args, **kwargs) -> float:
    # songs too short for a window (or a second bar) score NaN rather than abort the corpus
    try:
        return float(fn(*args, **kwargs))
    except DataError:
        return math.nan


def evaluate_song(melody: Melody, theme: Melody | None = None, tonic: int | None = None,
                  ornament: frozenset[int] = ORNAMENT_DEGREES, bars: int = 2) -> MetricReport:
    """All six metrics; windows overlapping the theme's first ``bars`` bars are skipped."""
    limit = bars * melody.bar_ticks
    if theme is None and melody.end >= limit:
        theme = theme_of(melody, bars)
    if theme is None:
        t_pc = t_rc = math.nan
    else:
        t_pc = _or_nan(tpc, theme, melody, skip_notes=len(theme))
        t_rc = _or_nan(trc, theme, melody, skip_ticks=limit)
    return MetricReport(t_pc, t_rc, _or_nan(rc, melody), psc(melody, tonic, ornament), pce(melody), pe(melody))


@dataclass(frozen=True)
class CorpusReport:
    names: tuple[str, ...]
    rows: tuple[MetricReport, ...]
    mean: MetricReport

    def to_tsv(self) -> str:
        lines = ["\t".join(("song",) + COLUMNS)]
        for name, row in zip(self.names, self.rows):
            lines.append("\t".join([name] + row.cells()))
        lines.append("\t".join(["MEAN"] + self.mean.cells()))
        return "\n".join(lines) + "\n"


def mean_report(rows: Sequence[MetricReport]) -> MetricReport:
    if not rows:
        raise DataError("cannot aggregate metrics over zero songs")
    table = np.array([astuple(r) for r in rows], dtype=np.float64)
    means = []
    for col in table.T:
        finite = col[~np.isnan(col)]
        means.append(float(finite.mean()) if finite.size else math.nan)
    return MetricReport(*means)


def evaluate_corpus(melodies: Sequence[Melody], themes: Sequence[Melody | None] | None = None,
                    names: Sequence[str] | None = None, tonic: int | None = None,
                    ornament: frozenset[int] = ORNAMENT_DEGREES) -> CorpusReport:
    if not melodies:
        raise DataError("cannot aggregate metrics over zero songs")
    themes = list(themes) if themes is not None else [None] * len(melodies)
    if len(themes) != len(melodies):
        raise DataError(f"{len(themes)} themes for {len(melodies)} songs")
    names = tuple(names) if names is not None else tuple(m.title or f"song{i}" for i, m in enumerate(melodies))
    rows = tuple(evaluate_song(m, t, tonic, ornament) for m, t in zip(melodies, themes))
    return CorpusReport(names, rows, mean_report(rows))

