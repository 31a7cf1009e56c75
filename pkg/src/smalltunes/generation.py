"""Autoregressive melody generation from a skeleton and a short prompt.

Pitch and duration are drawn independently from their heads. A special token
(EOS or PHRASE_END) is accepted only when both heads choose the same one;
otherwise the head that proposed it is re-drawn with specials excluded.
Each accepted PHRASE_END advances the running phrase id, which is capped by
the skeleton's phrase count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Melody
from .errors import DataError, SmallTunesError
from .model import SkeletonTransformer, TokenBatch, build_phrase_mask
from .representation import (BOS, EOS, N_SPECIAL, PAD, PHRASE_END, NoteTriplet, TokenSequence,
                             decode, encode_notes, special, validate)


class GenerationStall(SmallTunesError):
    pass


@dataclass(frozen=True)
class GenConfig:
    temperature: float = 1.0
    top_k: int = 0
    max_tokens: int = 512
    seed: int = 0
    greedy: bool = False
    stall_limit: int = 8

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 0 or self.max_tokens < 0:
            raise ValueError("top_k and max_tokens must be >= 0")


def extract_prompt(melody: Melody, labels: Sequence[int] | None = None, bars: int = 2) -> TokenSequence:
    """Tokens of every note whose onset falls inside the first ``bars`` bars.

    ``labels`` defaults to the melody's ground-truth phrases, else one phrase.
    """
    limit = bars * melody.bar_ticks
    if melody.end < limit:
        raise DataError(f"melody spans {melody.end} ticks, shorter than {bars} bars ({limit})")
    if labels is None:
        labels = melody.phrases or (1,) * len(melody)
    keep = [i for i, n in enumerate(melody.notes) if n.onset < limit]
    seq = encode_notes([melody.notes[i].pitch for i in keep], [melody.notes[i].duration for i in keep],
                       [labels[i] for i in keep], kind="prompt")
    return TokenSequence(seq.triplets[:-1], kind="prompt")


def _pick(logits: np.ndarray, blocked: np.ndarray, cfg: GenConfig, rng: np.random.Generator) -> int:
    z = np.where(blocked, -np.inf, logits.astype(np.float64))
    if cfg.greedy:
        return int(np.argmax(z))
    z = z / cfg.temperature
    if cfg.top_k and cfg.top_k < np.isfinite(z).sum():
        cutoff = np.sort(z)[-cfg.top_k]
        z = np.where(z < cutoff, -np.inf, z)
    p = np.exp(z - z.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def generate_tokens(model: SkeletonTransformer, skeleton: TokenSequence, prompt: TokenSequence,
                    cfg: GenConfig = GenConfig()) -> TokenSequence:
    """Extend ``prompt`` into a closed full-melody token sequence."""
    validate(skeleton)
    validate(TokenSequence(prompt.triplets, "prompt"))
    n_phrases = skeleton.n_phrases
    tokens: list[NoteTriplet] = list(prompt.triplets)
    segment = tokens[-1].segment + (1 if tokens[-1].pitch == PHRASE_END else 0)
    if segment > n_phrases:
        raise DataError(f"prompt reaches phrase {segment} but the skeleton has only {n_phrases}")
    rng = np.random.default_rng(cfg.seed)
    skel_segments = skeleton.segments
    stall = 0
    with ad.no_grad():
        memory = model.encode(TokenBatch.from_sequences([skeleton]))
        for _ in range(cfg.max_tokens):
            batch = TokenBatch.from_sequences([TokenSequence(tuple(tokens), "prompt")])
            mask = build_phrase_mask([t.segment for t in tokens], skel_segments)[None]
            pl, dl = model.decode(memory, batch, mask)
            p_logits, d_logits = pl.data[0, -1], dl.data[0, -1]
            blocked = np.zeros(len(p_logits), dtype=bool)
            blocked[[PAD, BOS]] = True
            if tokens[-1].is_special:  # no empty phrases
                blocked[[EOS, PHRASE_END]] = True
            d_blocked = np.zeros(len(d_logits), dtype=bool)
            d_blocked[: N_SPECIAL] = blocked[: N_SPECIAL]
            p = _pick(p_logits, blocked, cfg, rng)
            d = _pick(d_logits, d_blocked, cfg, rng)
            if p < N_SPECIAL or d < N_SPECIAL:
                stall += 1
                if stall >= cfg.stall_limit:
                    raise GenerationStall(f"model proposed special tokens for {stall} consecutive steps")
                if p == d:
                    if p == EOS or segment == n_phrases:
                        break
                    tokens.append(special(PHRASE_END, segment))
                    segment += 1
                    continue
                no_special = np.zeros(len(p_logits), dtype=bool)
                no_special[:N_SPECIAL] = True
                if p < N_SPECIAL:
                    p = _pick(p_logits, no_special, cfg, rng)
                if d < N_SPECIAL:
                    d = _pick(d_logits, no_special[: len(d_logits)], cfg, rng)
            else:
                stall = 0
            tokens.append(NoteTriplet(p, d, segment))
    if tokens[-1].pitch == PHRASE_END:
        tokens.pop()
    tokens.append(special(EOS, tokens[-1].segment))
    return TokenSequence(tuple(tokens), "full")


def generate(model: SkeletonTransformer, skeleton: TokenSequence, prompt: TokenSequence,
             cfg: GenConfig = GenConfig(), time_signature: tuple[int, int] = (4, 4),
             title: str = "") -> Melody:
    return decode(generate_tokens(model, skeleton, prompt, cfg), time_signature, title)
