"""Acceptance gates. Each test prints one ``ACCEPTANCE <n> ... PASS|FAIL`` line."""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from brute import window_mismatches
from fuzz import random_labels, random_melody
from oracles import layer_gradient_errors, mask_mismatches, no_segment_logits_identical, \
    phrase_locality_failures
from smalltunes.cli import main
from smalltunes.config import load_config
from smalltunes.corpus import Melody, NoteEvent, make_synthetic_corpus, parse_midi, write_midi
from smalltunes.generation import extract_prompt, generate_tokens
from smalltunes.metrics import pce, psc, rc
from smalltunes.model import ModelConfig, SkeletonTransformer
from smalltunes.pipeline import prepare_song
from smalltunes.representation import decode, encode
from smalltunes.segmentation import phrase_spans
from smalltunes.skeleton import SkeletonType, extract_skeleton, skeleton_sequence
from smalltunes.training import build_examples, train
from test_skeleton import molihua_fragment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def gate(capsys):
    def report(number: int, name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    return report


def test_1_gradient_correctness(gate):
    start = time.perf_counter()
    errors = layer_gradient_errors(seed=0)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-3 and elapsed < 120
    gate(1, "gradient correctness", ok,
         f"max rel err {errors[worst]:.1e} in {worst}, {len(errors)} checks, {elapsed:.1f}s")
    assert ok, errors


def test_2_phrase_locality(gate):
    failures = phrase_locality_failures(100, seed=0)
    gate(2, "phrase locality", failures == 0, f"{failures} failures over 100 instances")
    assert failures == 0


def test_3_mask_oracle(gate):
    bad = mask_mismatches(1000, seed=0)
    gate(3, "mask oracle", bad == 0, f"{bad} mismatches over 1000 label pairs")
    assert bad == 0


def test_4_ablation_reduction(gate):
    same = no_segment_logits_identical(seed=0)
    gate(4, "no-segment reduction", same, "logits bit-identical" if same else "logits differ")
    assert same


def test_5_overfit_and_reproduce(gate):
    start = time.perf_counter()
    cfg = load_config(CONFIGS / "overfit.json")
    songs = make_synthetic_corpus(cfg.synth.songs, cfg.seed, cfg.synth.style)
    prepared = [prepare_song(m, cfg.variant, index=i) for i, m in enumerate(songs)]
    model = SkeletonTransformer(cfg.model, seed=cfg.seed)
    result = train(build_examples(prepared), model, cfg.train_config)
    losses = [v for _, v in result.losses]
    first_below = next((s for s, v in result.losses if v < 0.1), None)
    reproduced = 0
    for p in prepared:
        prompt = extract_prompt(p.melody, p.labels, cfg.prompt_bars)
        out = generate_tokens(model, p.skeleton, prompt, cfg.gen_config)
        reproduced += out == p.full
    elapsed = time.perf_counter() - start
    ok = (len(losses) <= 3000 and first_below is not None and losses[-1] < 0.1
          and reproduced >= 7 and elapsed < 900)
    gate(5, "overfit and reproduce", ok,
         f"loss < 0.1 first at step {first_below}, final {losses[-1]:.4f} after {len(losses)} steps; "
         f"{reproduced}/{len(prepared)} songs reproduced; {elapsed:.0f}s")
    assert ok


def test_6_metric_oracles(gate):
    windows_bad = window_mismatches(500, seed=0)
    psc_bad = sum(psc(m) != 10 for m in make_synthetic_corpus(200, seed=6))
    uniform = Melody(tuple(NoteEvent(60 + i % 12, 240 * i, 240) for i in range(36)))
    pce_err = abs(pce(uniform) - math.log2(12))
    rng = np.random.default_rng(0)
    rc_bad = 0
    for _ in range(100):
        ts = [(2, 4), (3, 4), (4, 4)][int(rng.integers(3))]
        bar = ts[0] * 480
        cuts = sorted(set(rng.choice(np.arange(1, bar // 120), size=int(rng.integers(0, 5))).tolist()))
        rhythm = np.diff([0] + [120 * c for c in cuts] + [bar]).tolist()
        notes, t = [], 0
        for _ in range(int(rng.integers(2, 6))):
            for d in rhythm:
                notes.append(NoteEvent(int(rng.integers(48, 84)), t, d))
                t += d
        rc_bad += rc(Melody(tuple(notes), time_signature=ts)) != 1.0
    ok = windows_bad == 0 and psc_bad == 0 and pce_err <= 1e-9 and rc_bad == 0
    gate(6, "metric oracles", ok,
         f"{windows_bad} TPC/TRC mismatches over 500 pairs, {psc_bad}/200 pentatonic PSC != 10, "
         f"PCE err {pce_err:.1e}, {rc_bad}/100 uniform-rhythm RC != 100%")
    assert ok


def test_7_round_trips(gate, tmp_path):
    rng = np.random.default_rng(7)
    midi_bad = token_bad = 0
    for _ in range(1000):
        m = random_melody(rng, 1, 40)
        midi_bad += parse_midi(write_midi(m)) != m
        # tokens carry no rests, so the token round trip is checked on gapless melodies
        g = random_melody(rng, 1, 40, gaps=False)
        labels = random_labels(rng, len(g))
        token_bad += decode(encode(g, labels), g.time_signature) != g
    cfg = ModelConfig(d_model=16, n_layers_encoder=2, n_layers_decoder=2, n_heads=4, d_ff=32,
                      max_relative_distance=8, dropout=0.1)
    model = SkeletonTransformer(cfg, seed=3)
    model.save(tmp_path / "m.ckpt")
    again = SkeletonTransformer.load(tmp_path / "m.ckpt")
    ckpt_bad = 0
    for _ in range(20):
        g = random_melody(rng, 2, 30, gaps=False, max_units=16)
        labels = random_labels(rng, len(g))
        full, skel = encode(g, labels), skeleton_sequence(g, labels, extract_skeleton(g, labels))
        a, b = model.forward_sequences(skel, full), again.forward_sequences(skel, full)
        ckpt_bad += not all(np.array_equal(x, y) for x, y in zip(a, b))
    ok = midi_bad == token_bad == ckpt_bad == 0
    gate(7, "round trips", ok, f"MIDI {midi_bad}/1000, tokens {token_bad}/1000, "
                               f"checkpoint logits {ckpt_bad}/20 mismatches")
    assert ok


def test_8_skeleton_totality(gate):
    rng = np.random.default_rng(8)
    empty = fallback = 0
    for _ in range(1000):
        m = random_melody(rng, 1, 40)
        labels = random_labels(rng, len(m))
        ann = extract_skeleton(m, labels)
        empty += sum(not any(ann.selected[a:b + 1]) for a, b in phrase_spans(labels))
        fallback += any(ann.fallback)
    frag = molihua_fragment()
    flags = extract_skeleton(frag, [1] * len(frag)).flags
    trembling = (SkeletonType.TREMBLING in flags[9] and SkeletonType.TREMBLING in flags[11]
                 and SkeletonType.TREMBLING not in flags[10])
    ok = empty == 0 and trembling
    gate(8, "skeleton totality", ok, f"{empty} empty phrases over 1000 pairs, fallback used in "
                                     f"{fallback}; trembling fragment {'flagged' if trembling else 'missed'}")
    assert ok


def test_9_ablation_determinism(gate, tmp_path, capsys):
    config = CONFIGS / "smoke.json"
    codes = [main(["ablate", "--group", "1", "--config", str(config), "--steps", "60",
                   "--out", str(tmp_path / run), "--jobs", jobs]) for run, jobs in (("a", "1"), ("b", "2"))]
    capsys.readouterr()
    a, b = (tmp_path / "a" / "report.tsv").read_bytes(), (tmp_path / "b" / "report.tsv").read_bytes()
    logs_equal = ((tmp_path / "a" / "train" / "loss.log").read_bytes()
                  == (tmp_path / "b" / "train" / "loss.log").read_bytes())
    ok = codes == [0, 0] and a == b and logs_equal
    rows = a.decode().count("\n") - 2
    gate(9, "ablation determinism", ok, f"exit codes {codes}, {rows} song rows, reports "
                                        f"{'byte-identical' if a == b else 'differ'}")
    assert ok
