"""Triplet tokens ``{pitch, duration, segment}`` and their vocabularies.

Each note becomes one token. A sequence is framed by BOS/EOS and every phrase
change is marked by a PHRASE_END token that carries the closing phrase's
segment id, so that generation can advance the segment counter.

Onsets are not tokenized: decoding rebuilds a gapless melody from durations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import GRID, Melody, NoteEvent
from .errors import DataError, StructureError

PAD, BOS, EOS, PHRASE_END = 0, 1, 2, 3
SPECIAL_NAMES = ("PAD", "BOS", "EOS", "PHRASE_END")
N_SPECIAL = len(SPECIAL_NAMES)
MAX_DURATION = 3840


class Vocabulary:
    """Bijective symbol <-> id map. Ids below ``N_SPECIAL`` are the specials."""

    def __init__(self, values: Sequence[int]) -> None:
        self.symbols: tuple[str | int, ...] = SPECIAL_NAMES + tuple(values)
        self._index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def id(self, symbol: str | int) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise DataError(f"symbol {symbol!r} not in vocabulary") from None

    def symbol(self, token_id: int) -> str | int:
        if not 0 <= token_id < len(self.symbols):
            raise DataError(f"token id {token_id} outside vocabulary of size {len(self)}")
        return self.symbols[token_id]


PITCH_VOCAB = Vocabulary(range(128))
DURATION_VOCAB = Vocabulary(range(GRID, MAX_DURATION + 1, GRID))


def pitch_id(pitch: int) -> int:
    return N_SPECIAL + pitch


def duration_id(ticks: int) -> int:
    return N_SPECIAL - 1 + min(ticks, MAX_DURATION) // GRID


class NoteTriplet(NamedTuple):
    pitch: int
    duration: int
    segment: int

    @property
    def is_special(self) -> bool:
        return self.pitch < N_SPECIAL

    def symbols(self) -> tuple[str | int, str | int, int]:
        """``(77, 240, 1)``-style view with ids mapped back to values."""
        return PITCH_VOCAB.symbol(self.pitch), DURATION_VOCAB.symbol(self.duration), self.segment


def special(token: int, segment: int) -> NoteTriplet:
    return NoteTriplet(token, token, segment)


@dataclass(frozen=True)
class TokenSequence:
    """A framed token sequence.

    ``kind`` is ``full`` or ``skeleton`` for closed sequences (BOS ... EOS) and
    ``prompt`` for an open prefix (BOS ... with no EOS).
    """

    triplets: tuple[NoteTriplet, ...]
    kind: str = "full"

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self):
        return iter(self.triplets)

    @property
    def segments(self) -> list[int]:
        return [t.segment for t in self.triplets]

    @property
    def n_phrases(self) -> int:
        return self.triplets[-1].segment if self.triplets else 0

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.asarray(self.triplets, dtype=np.int64).reshape(-1, 3)
        return a[:, 0], a[:, 1], a[:, 2]

    def dumps(self) -> str:
        return " ".join(_format_triplet(t) for t in self.triplets)

    @classmethod
    def loads(cls, line: str, kind: str = "full") -> "TokenSequence":
        return cls(tuple(_parse_triplet(word) for word in line.split()), kind)


def _format_triplet(t: NoteTriplet) -> str:
    p, d, s = t.symbols()
    return f"{p}:{d}:{s}"


def _parse_triplet(word: str) -> NoteTriplet:
    try:
        p, d, s = word.split(":")
        pid = PITCH_VOCAB.id(p if p in SPECIAL_NAMES else int(p))
        did = DURATION_VOCAB.id(d if d in SPECIAL_NAMES else int(d))
        return NoteTriplet(pid, did, int(s))
    except ValueError:
        raise DataError(f"malformed token {word!r}; expected pitch:duration:segment") from None


def check_labels(labels: Sequence[int]) -> None:
    if not labels:
        raise DataError("phrase labels are empty")
    if labels[0] != 1:
        raise DataError(f"phrase labels must start at 1, got {labels[0]}")
    for i in range(1, len(labels)):
        if labels[i] - labels[i - 1] not in (0, 1):
            raise DataError(f"phrase label {i} jumps from {labels[i - 1]} to {labels[i]}")


def encode_notes(pitches: Sequence[int], durations: Sequence[int], segments: Sequence[int],
                 kind: str = "full") -> TokenSequence:
    if not (len(pitches) == len(durations) == len(segments)):
        raise DataError(f"length mismatch: {len(pitches)} notes vs {len(segments)} segment labels")
    check_labels(segments)
    out = [special(BOS, 1)]
    for i, (p, d, s) in enumerate(zip(pitches, durations, segments)):
        if i and s != segments[i - 1]:
            out.append(special(PHRASE_END, segments[i - 1]))
        out.append(NoteTriplet(pitch_id(p), duration_id(d), s))
    out.append(special(EOS, segments[-1]))
    return TokenSequence(tuple(out), kind)


def encode(melody: Melody, segments: Sequence[int], kind: str = "full") -> TokenSequence:
    """Tokenize a melody; durations above the vocabulary cap are clamped."""
    return encode_notes(melody.pitches, melody.durations, list(segments), kind)


def validate(tokens: TokenSequence) -> None:
    """Raise :class:`StructureError` unless the framing invariants hold."""
    seq = tokens.triplets
    closed = tokens.kind != "prompt"
    if not seq:
        raise StructureError("empty token sequence", 0)
    if seq[0] != special(BOS, 1):
        raise StructureError("sequence must start with BOS in segment 1", 0)
    for i in range(1, len(seq)):
        t, prev = seq[i], seq[i - 1]
        if t.is_special != (t.duration < N_SPECIAL) or (t.is_special and t.pitch != t.duration):
            raise StructureError("pitch and duration disagree on a special token", i)
        if t.pitch in (PAD, BOS):
            raise StructureError(f"unexpected {SPECIAL_NAMES[t.pitch]}", i)
        if t.pitch == EOS and (not closed or i != len(seq) - 1):
            raise StructureError("EOS allowed only as the final token", i)
        if t.pitch in (EOS, PHRASE_END) and prev.is_special:
            raise StructureError(f"{SPECIAL_NAMES[t.pitch]} closes an empty phrase", i)
        expected = prev.segment + 1 if prev.pitch == PHRASE_END else prev.segment
        if t.segment != expected:
            raise StructureError(f"segment {t.segment} where {expected} was expected", i)
    if closed and seq[-1].pitch != EOS:
        raise StructureError("sequence does not end with EOS", len(seq) - 1)


def note_tokens(tokens: TokenSequence) -> list[NoteTriplet]:
    return [t for t in tokens.triplets if not t.is_special]


def decode(tokens: TokenSequence, time_signature: tuple[int, int] = (4, 4),
           title: str = "") -> Melody:
    """Rebuild a gapless melody starting at tick 0."""
    validate(tokens)
    notes: list[NoteEvent] = []
    tick = 0
    for t in note_tokens(tokens):
        dur = DURATION_VOCAB.symbol(t.duration)
        notes.append(NoteEvent(PITCH_VOCAB.symbol(t.pitch), tick, dur))
        tick += dur
    return Melody(tuple(notes), time_signature=time_signature, title=title)


def decode_segments(tokens: TokenSequence) -> list[int]:
    return [t.segment for t in note_tokens(tokens)]


def dump_corpus(sequences: Iterable[TokenSequence]) -> str:
    return "".join(seq.dumps() + "\n" for seq in sequences)


def load_corpus(text: str, kind: str = "full") -> list[TokenSequence]:
    return [TokenSequence.loads(line, kind) for line in text.splitlines() if line.strip()]
