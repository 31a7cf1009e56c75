from __future__ import annotations

import json
from pathlib import Path

import pytest

from smalltunes.config import RunConfig, echo_config, load_config
from smalltunes.errors import DataError
from smalltunes.segmentation import SegmenterKind

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_file_matches_dataclass_defaults():
    assert load_config(CONFIGS / "default.json") == RunConfig()
    assert load_config(None) == RunConfig()


@pytest.mark.parametrize("name", ["default.json", "overfit.json", "smoke.json"])
def test_shipped_configs_round_trip(name):
    cfg = load_config(CONFIGS / name)
    assert RunConfig.from_dict(json.loads(cfg.dumps())) == cfg


@pytest.mark.parametrize("data", [
    {"sed": 1},
    {"model": {"d_model": 8, "width": 3}},
    {"train": {"seed": 4}},
    {"generate": {"seed": 4}},
    {"segmenter": "bars"},
    {"model": [1]},
    {"model": {"d_model": 10, "n_heads": 4}},
    {"prompt_bars": 0},
])
def test_bad_configs_rejected(data):
    with pytest.raises(DataError):
        RunConfig.from_dict(data)


def test_top_level_seed_reaches_every_stage():
    cfg = RunConfig.from_dict({"seed": 9, "segmenter": "two_bars"})
    assert cfg.train_config.seed == cfg.gen_config.seed == cfg.variant.seed == 9
    assert cfg.variant.segmenter is SegmenterKind.TWO_BARS


def test_echo_writes_resolved_config(tmp_path):
    cfg = RunConfig.from_dict({"seed": 3, "train": {"max_steps": 7}})
    echo_config(cfg, tmp_path / "out")
    assert load_config(tmp_path / "out" / "config.json") == cfg


def test_invalid_json(tmp_path):
    (tmp_path / "x.json").write_text("{")
    with pytest.raises(DataError):
        load_config(tmp_path / "x.json")
    with pytest.raises(DataError):
        load_config(tmp_path / "missing.json")


def test_default_hyperparameters():
    cfg = RunConfig()
    m, t = cfg.model, cfg.train
    assert (m.d_model, m.n_layers_encoder, m.n_layers_decoder) == (256, 6, 6)
    assert (t.learning_rate, t.batch_size, t.beta1, t.beta2, t.eps) == (1e-3, 16, 0.9, 0.999, 1e-8)
    assert m.cross_attention_scale == "d_model"
