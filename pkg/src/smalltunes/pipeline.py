"""Per-song preparation shared by training, generation and the CLI.

A :class:`Variant` fixes one cell of the ablation grid: which segmenter labels
the phrases and whether half of the skeleton notes are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Melody
from .representation import TokenSequence, encode
from .segmentation import HeuristicConfig, SegmenterKind, segment
from .skeleton import SkeletonAnnotation, SkeletonConfig, extract_skeleton, remove_fraction, skeleton_sequence


@dataclass(frozen=True)
class Variant:
    segmenter: SegmenterKind = SegmenterKind.HEURISTIC
    # labeller standing in for "our" segmentation; also the base that expansion merges
    base: SegmenterKind = SegmenterKind.HEURISTIC
    remove_half: bool = False
    seed: int = 0
    heuristic: HeuristicConfig = HeuristicConfig()
    skeleton: SkeletonConfig = SkeletonConfig()


# (segmenter, remove_half) per ablation group; None means the base segmenter
ABLATION_GROUPS: dict[int, tuple[SegmenterKind | None, bool]] = {
    1: (None, False),
    2: (SegmenterKind.NO_SEGMENT, False),
    3: (SegmenterKind.TWO_BARS, False),
    4: (SegmenterKind.EXPANSION, False),
    5: (None, True),
    6: (SegmenterKind.NO_SEGMENT, True),
    7: (SegmenterKind.TWO_BARS, True),
    8: (SegmenterKind.EXPANSION, True),
}


def ablation_variant(group: int, base: SegmenterKind | str = SegmenterKind.HEURISTIC,
                     seed: int = 0) -> Variant:
    if group not in ABLATION_GROUPS:
        raise ValueError(f"ablation group must be 1-8, got {group}")
    kind, remove_half = ABLATION_GROUPS[group]
    base = SegmenterKind(base)
    return Variant(segmenter=kind or base, base=base, remove_half=remove_half, seed=seed)


@dataclass(frozen=True)
class PreparedSong:
    melody: Melody
    labels: tuple[int, ...]
    annotation: SkeletonAnnotation
    full: TokenSequence
    skeleton: TokenSequence


def song_labels(melody: Melody, variant: Variant, external: Sequence[int] | None = None) -> tuple[int, ...]:
    """Phrase labels for ``melody``; ground-truth labels stand in for external ones."""
    if external is None:
        external = melody.phrases
    kind = variant.segmenter
    needs_external = kind is SegmenterKind.EXTERNAL or (
        kind is SegmenterKind.EXPANSION and variant.base is SegmenterKind.EXTERNAL)
    return segment(melody, kind, external=external if needs_external else None,
                   base=variant.base, heuristic=variant.heuristic)


def prepare_song(melody: Melody, variant: Variant, external: Sequence[int] | None = None,
                 index: int = 0) -> PreparedSong:
    labels = song_labels(melody, variant, external)
    ann = extract_skeleton(melody, labels, variant.skeleton)
    if variant.remove_half:
        ann = remove_fraction(ann, 0.5, seed=variant.seed * 100_003 + index)
    return PreparedSong(melody, labels, ann, encode(melody, labels), skeleton_sequence(melody, labels, ann))
