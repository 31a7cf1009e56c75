from __future__ import annotations

import numpy as np
import pytest

from smalltunes.corpus import Melody, NoteEvent, make_synthetic_corpus
from smalltunes.errors import DataError
from smalltunes.generation import GenConfig, GenerationStall, extract_prompt, generate, generate_tokens
from smalltunes.model import ModelConfig, SkeletonTransformer
from smalltunes.pipeline import Variant, prepare_song
from smalltunes.representation import BOS, EOS, PHRASE_END

CFG = ModelConfig(d_model=16, n_layers_encoder=1, n_layers_decoder=1, n_heads=2, d_ff=32,
                  max_relative_distance=8, dropout=0.0)


@pytest.fixture(scope="module")
def song():
    return prepare_song(make_synthetic_corpus(1, seed=5)[0], Variant())


@pytest.fixture(scope="module")
def model():
    return SkeletonTransformer(CFG, seed=0)


def quarters(n, ts=(4, 4)):
    return Melody(tuple(NoteEvent(60 + i, i * 480, 480) for i in range(n)), time_signature=ts)


def test_prompt_is_first_two_bars():
    prompt = extract_prompt(quarters(12))
    assert prompt.kind == "prompt"
    assert prompt.triplets[0].pitch == BOS
    assert len(prompt) == 9 and prompt.triplets[-1].pitch != EOS


def test_prompt_keeps_straddling_note():
    m = Melody((NoteEvent(60, 0, 1920), NoteEvent(62, 1920, 1440), NoteEvent(64, 3360, 960),
                NoteEvent(65, 4320, 480)))
    prompt = extract_prompt(m)
    assert [t.pitch - 4 for t in prompt.triplets[1:]] == [60, 62, 64]


def test_prompt_too_short():
    with pytest.raises(DataError):
        extract_prompt(quarters(3, ts=(2, 4)))
    assert len(extract_prompt(quarters(4, ts=(2, 4)))) == 5


def test_zero_tokens_returns_prompt(model, song):
    prompt = extract_prompt(song.melody, song.labels)
    out = generate(model, song.skeleton, prompt, GenConfig(max_tokens=0))
    limit = 2 * song.melody.bar_ticks
    assert out.notes == tuple(n for n in song.melody.notes if n.onset < limit)


def test_same_seed_same_output(model, song):
    prompt = extract_prompt(song.melody, song.labels)
    cfg = GenConfig(max_tokens=40, seed=3, temperature=1.2, top_k=20)
    assert generate_tokens(model, song.skeleton, prompt, cfg) == generate_tokens(model, song.skeleton,
                                                                                 prompt, cfg)


def test_segments_bounded_and_monotone(model, song):
    prompt = extract_prompt(song.melody, song.labels)
    for seed in range(5):
        out = generate_tokens(model, song.skeleton, prompt, GenConfig(max_tokens=60, seed=seed))
        segs = out.segments
        assert all(a <= b for a, b in zip(segs, segs[1:]))
        assert max(segs) <= song.skeleton.n_phrases
        assert out.triplets[-1].pitch == EOS
        # no empty phrase and no phrase end right before the end marker
        for a, b in zip(out.triplets, out.triplets[1:]):
            assert not (a.pitch == PHRASE_END and b.is_special)


def test_prompt_beyond_skeleton_rejected(model, song):
    prompt = extract_prompt(song.melody, song.labels, bars=3)
    one_phrase = prepare_song(song.melody, Variant(segmenter="no_segment")).skeleton
    assert prompt.n_phrases == 2
    with pytest.raises(DataError):
        generate_tokens(model, one_phrase, prompt, GenConfig(max_tokens=5))


def test_stall_raises(monkeypatch, song):
    model = SkeletonTransformer(CFG, seed=0)
    real = model.decode

    def specials_only(memory, batch, mask, rng=None):
        pl, dl = real(memory, batch, mask, rng)
        pl.data[..., :4] += 1e4
        dl.data[..., 3] -= 1e4  # duration never agrees on a phrase end
        dl.data[..., 2] += 1e4
        pl.data[..., 2] -= 1e4
        return pl, dl

    monkeypatch.setattr(model, "decode", specials_only)
    prompt = extract_prompt(song.melody, song.labels)
    with pytest.raises(GenerationStall):
        generate_tokens(model, song.skeleton, prompt, GenConfig(greedy=True, stall_limit=4))


def test_greedy_ignores_seed(model, song):
    prompt = extract_prompt(song.melody, song.labels)
    a = generate_tokens(model, song.skeleton, prompt, GenConfig(greedy=True, max_tokens=20, seed=1))
    b = generate_tokens(model, song.skeleton, prompt, GenConfig(greedy=True, max_tokens=20, seed=2))
    assert a == b


def test_bad_config():
    with pytest.raises(ValueError):
        GenConfig(temperature=0)
    with pytest.raises(ValueError):
        GenConfig(top_k=-1)


def test_generated_melody_is_playable(model, song):
    prompt = extract_prompt(song.melody, song.labels)
    out = generate(model, song.skeleton, prompt, GenConfig(max_tokens=30, seed=4))
    onsets = [n.onset for n in out.notes]
    assert onsets == sorted(onsets) and all(n.duration > 0 for n in out.notes)
    assert np.all([0 <= n.pitch < 128 for n in out.notes])
