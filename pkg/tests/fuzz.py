"""Random melodies and phrase labels for property tests."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from smalltunes.corpus import Melody, NoteEvent

TIME_SIGNATURES = [(2, 4), (3, 4), (4, 4)]


def random_melody(rng: np.random.Generator, min_notes: int = 1, max_notes: int = 40,
                  gaps: bool = True, max_units: int = 64) -> Melody:
    """Grid-aligned monophonic melody; durations in 60-tick units up to ``max_units``."""
    n = int(rng.integers(min_notes, max_notes + 1))
    ts = TIME_SIGNATURES[int(rng.integers(len(TIME_SIGNATURES)))]
    notes, tick = [], 0
    for _ in range(n):
        if gaps and rng.random() < 0.2:
            tick += 60 * int(rng.integers(1, 9))
        dur = 60 * int(rng.integers(1, max_units + 1))
        notes.append(NoteEvent(int(rng.integers(0, 128)), tick, dur))
        tick += dur
    return Melody(tuple(notes), time_signature=ts)


def random_labels(rng: np.random.Generator, n: int, p_new: float = 0.25) -> tuple[int, ...]:
    labels, k = [1], 1
    for _ in range(n - 1):
        if rng.random() < p_new:
            k += 1
        labels.append(k)
    return tuple(labels)


@st.composite
def melodies(draw, min_notes: int = 1, max_notes: int = 24, gaps: bool = True) -> Melody:
    seed = draw(st.integers(0, 2**32 - 1))
    return random_melody(np.random.default_rng(seed), min_notes, max_notes, gaps)


@st.composite
def melody_with_labels(draw, min_notes: int = 1, max_notes: int = 24, gaps: bool = True):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    m = random_melody(rng, min_notes, max_notes, gaps)
    return m, random_labels(rng, len(m))
