from __future__ import annotations

import math

import numpy as np
import pytest

from smalltunes.autodiff import Tensor
from smalltunes.corpus import make_synthetic_corpus
from smalltunes.errors import ContractViolation, DataError
from smalltunes.model import ModelConfig, SkeletonTransformer
from smalltunes.pipeline import Variant, prepare_song
from smalltunes.representation import BOS, EOS
from smalltunes.training import (Adam, TrainConfig, batch_order, build_examples, initial_loss_estimate,
                                 make_batch, resume, train)

SMALL = ModelConfig(d_model=16, n_layers_encoder=1, n_layers_decoder=1, n_heads=2, d_ff=32,
                    max_relative_distance=8, dropout=0.1)


@pytest.fixture(scope="module")
def examples():
    songs = make_synthetic_corpus(4, seed=3)
    return build_examples([prepare_song(m, Variant()) for m in songs])


def test_adam_first_step_matches_hand_computation():
    p = Tensor.param(np.array([1.0], np.float32))
    p.grad = np.array([1.0], np.float32)
    opt = Adam(lr=0.1)
    opt.step({"p": p})
    # m_hat = v_hat = 1 after bias correction
    assert p.data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-7)
    p.grad = np.array([1.0], np.float32)
    opt.step({"p": p})
    assert p.data[0] == pytest.approx(0.8, abs=1e-6)


def test_adam_zero_gradient_is_a_no_op():
    p = Tensor.param(np.arange(4, dtype=np.float32))
    p.grad = np.zeros(4, np.float32)
    Adam().step({"p": p})
    assert p.data.tolist() == [0, 1, 2, 3]


def test_adam_refuses_non_finite_gradient():
    a, b = Tensor.param(np.ones(2, np.float32)), Tensor.param(np.ones(2, np.float32))
    a.grad = np.ones(2, np.float32)
    b.grad = np.array([np.nan, 0], np.float32)
    opt = Adam()
    with pytest.raises(ContractViolation):
        opt.step({"a": a, "b": b})
    assert a.data.tolist() == [1, 1] and opt.t == 0


def test_make_batch_shifts_targets(examples):
    skel, full, (tp, td) = make_batch(examples[:2], max_len=512)
    assert full.pitch[0, 0] == BOS
    ex = examples[0]
    n = len(ex.full) - 1
    assert full.pitch[0, :n].tolist() == [t.pitch for t in ex.full.triplets[:-1]]
    assert tp[0, :n].tolist() == [t.pitch for t in ex.full.triplets[1:]]
    assert tp[0, n - 1] == EOS
    assert (tp[0, n:] == 0).all()


def test_make_batch_truncation_drops_lost_phrases(examples):
    skel, full, _ = make_batch(examples[:1], max_len=10)
    assert full.pitch.shape[1] == 10
    assert skel.segment.max() <= full.segment.max()


def test_batch_order_covers_each_epoch():
    seen = np.concatenate([batch_order(10, 4, seed=1, step=s) for s in range(3)])
    assert sorted(seen.tolist()) == list(range(10))
    assert batch_order(10, 4, 1, 5).tolist() == batch_order(10, 4, 1, 5).tolist()


def test_initial_loss_is_near_uniform(examples):
    model = SkeletonTransformer(SMALL, seed=0)
    result = train(examples, model, TrainConfig(max_steps=1, batch_size=4))
    expected = initial_loss_estimate(SMALL)
    assert expected == pytest.approx(math.log(132) + math.log(68))
    assert abs(result.losses[0][1] - expected) < 0.1 * expected


def test_loss_decreases(examples):
    model = SkeletonTransformer(SMALL, seed=0)
    result = train(examples, model, TrainConfig(max_steps=40, batch_size=4, learning_rate=3e-3))
    first, last = result.losses[0][1], np.mean([v for _, v in result.losses[-5:]])
    assert last < 0.8 * first


def test_training_is_deterministic(examples, tmp_path):
    cfg = TrainConfig(max_steps=5, batch_size=2, seed=7)
    a = train(examples, SkeletonTransformer(SMALL, seed=1), cfg, tmp_path / "a")
    b = train(examples, SkeletonTransformer(SMALL, seed=1), cfg, tmp_path / "b")
    assert a.losses == b.losses
    assert (tmp_path / "a" / "loss.log").read_bytes() == (tmp_path / "b" / "loss.log").read_bytes()


def test_resume_matches_uninterrupted_run(examples, tmp_path):
    full_cfg = TrainConfig(max_steps=6, batch_size=2, seed=2, checkpoint_interval=3)
    whole = train(examples, SkeletonTransformer(SMALL, seed=4), full_cfg, tmp_path / "whole")
    model, opt, step, _ = resume(tmp_path / "whole" / "step_000003.ckpt")
    assert step == 3 and opt.t == 3
    rest = train(examples, model, full_cfg, tmp_path / "rest", optimizer=opt, start_step=step)
    assert [s for s, _ in rest.losses] == [3, 4, 5]
    assert rest.losses == whole.losses[3:]
    for name, p in whole.model.params.items():
        np.testing.assert_array_equal(p.data, rest.model.params[name].data)


def test_loss_log_format(examples, tmp_path):
    train(examples, SkeletonTransformer(SMALL, seed=0), TrainConfig(max_steps=3, batch_size=2),
          tmp_path)
    lines = (tmp_path / "loss.log").read_text().splitlines()
    assert [line.split("\t")[0] for line in lines] == ["0", "1", "2"]
    assert all(len(line.split("\t")[1].split(".")[1]) == 6 for line in lines)
    assert (tmp_path / "final.ckpt").exists()


def test_empty_examples_and_bad_config():
    with pytest.raises(DataError):
        train([], SkeletonTransformer(SMALL, seed=0), TrainConfig(max_steps=1))
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(DataError):
        TrainConfig.from_dict({"lr": 1})
