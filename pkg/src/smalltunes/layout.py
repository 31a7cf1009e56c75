"""On-disk corpus directories.

::

    <corpus>/manifest.txt        "# seed=S" then path<TAB>train|test<TAB>notes
    <corpus>/songs/<name>.mid    quantized type-0 MIDI
    <corpus>/songs/<name>.phrases  optional whitespace-separated phrase labels
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .corpus import CorpusManifest, Melody, read_midi_file, split_corpus, write_midi_file
from .errors import DataError
from .segmentation import read_labels, validate_labels, write_labels

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
SONGS = "songs"


@dataclass(frozen=True)
class CorpusSong:
    name: str
    melody: Melody
    split: str


def safe_name(text: str, fallback: str) -> str:
    name = re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("._")
    return name or fallback


def write_corpus_dir(melodies: Sequence[Melody], out: str | Path, seed: int = 0,
                     ratio: float = 0.9, names: Sequence[str] | None = None) -> CorpusManifest:
    out = Path(out)
    (out / SONGS).mkdir(parents=True, exist_ok=True)
    if names is None:
        names = [safe_name(m.title, f"{i:04d}") for i, m in enumerate(melodies)]
    if len(set(names)) != len(names):
        raise DataError("duplicate song names in corpus")
    rel = [f"{SONGS}/{n}.mid" for n in names]
    manifest = split_corpus(melodies, ratio, seed, rel)
    for name, m in zip(names, melodies):
        write_midi_file(m, out / SONGS / f"{name}.mid")
        if m.phrases is not None:
            write_labels(m.phrases, out / SONGS / f"{name}.phrases")
    (out / MANIFEST).write_text(manifest.dumps(), encoding="utf-8")
    return manifest


def load_melody(path: Path) -> Melody:
    """Read a MIDI file, attaching ``<stem>.phrases`` labels when present."""
    melody = read_midi_file(path)
    sidecar = path.with_suffix(".phrases")
    if sidecar.exists():
        melody = replace(melody, phrases=validate_labels(read_labels(sidecar), len(melody)))
    return melody


def load_corpus_dir(root: str | Path, split: str = "all") -> list[CorpusSong]:
    """Songs listed in the manifest (``split`` = train, test or all), in manifest order."""
    root = Path(root)
    if not (root / MANIFEST).exists():
        raise DataError(f"{root}: no {MANIFEST}; not a corpus directory")
    manifest = CorpusManifest.loads((root / MANIFEST).read_text(encoding="utf-8"))
    songs = []
    for e in manifest.entries:
        if split != "all" and e.split != split:
            continue
        path = root / e.path
        songs.append(CorpusSong(path.stem, load_melody(path), e.split))
    return songs


def load_midi_dir(root: str | Path) -> list[CorpusSong]:
    """All ``*.mid`` files of a directory (or of its ``songs/`` child), sorted by name."""
    root = Path(root)
    if (root / SONGS).is_dir():
        root = root / SONGS
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    paths = sorted(root.glob("*.mid"))
    if not paths:
        raise DataError(f"{root}: no .mid files")
    return [CorpusSong(p.stem, load_melody(p), "all") for p in paths]
