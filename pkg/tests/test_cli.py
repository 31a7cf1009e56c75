from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from smalltunes.cli import main
from smalltunes.config import load_config
from smalltunes.corpus import read_midi_file
from smalltunes.model import SkeletonTransformer
from smalltunes.representation import TokenSequence
from smalltunes.segmentation import read_labels

SMOKE = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.json")


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    assert run("synth", "--songs", 8, "--seed", 1, "--out", out) == 0
    return out


def test_synth_layout(corpus):
    assert len(list((corpus / "songs").glob("*.mid"))) == 8
    assert (corpus / "manifest.txt").read_text().count("\n") >= 8


def test_segment_and_skeleton_write_text_artifacts(corpus, tmp_path):
    assert run("segment", "--corpus", corpus, "--kind", "two_bars", "--out", tmp_path / "lab") == 0
    files = sorted((tmp_path / "lab").glob("*.phrases"))
    assert len(files) == 8
    labels = read_labels(files[0])
    assert labels[0] == 1
    assert run("skeleton", "--corpus", corpus, "--labels", tmp_path / "lab", "--remove-half",
               "--out", tmp_path / "sk") == 0
    tokens = TokenSequence.loads((tmp_path / "sk" / (files[0].stem + ".tokens")).read_text(), "skeleton")
    assert tokens.n_phrases == labels[-1]
    assert (tmp_path / "sk" / (files[0].stem + ".skel")).exists()


def test_train_generate_evaluate(corpus, tmp_path, capsys):
    assert run("train", "--config", SMOKE, "--corpus", corpus, "--out", tmp_path / "run") == 0
    for name in ("config.json", "loss.log", "final.ckpt", "full.tokens", "skeleton.tokens"):
        assert (tmp_path / "run" / name).exists()
    assert len((tmp_path / "run" / "loss.log").read_text().splitlines()) == 20
    assert run("generate", "--checkpoint", tmp_path / "run" / "final.ckpt", "--split", "all",
               "--out", tmp_path / "gen", "--jobs", 2) == 0
    mids = sorted((tmp_path / "gen").glob("*.mid"))
    assert mids and all(len(read_midi_file(m)) > 0 for m in mids)
    capsys.readouterr()
    assert run("evaluate", tmp_path / "gen", "--themes", corpus / "songs") == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0].split("\t") == ["song", "TPC", "TRC", "RC", "PSC", "PCE", "PE"]
    assert all(len(r.split("\t")) == 7 for r in rows) and rows[-1].startswith("MEAN")


def test_generation_is_deterministic_across_job_counts(corpus, tmp_path):
    run("train", "--config", SMOKE, "--corpus", corpus, "--steps", 3, "--out", tmp_path / "run")
    ckpt = tmp_path / "run" / "final.ckpt"
    run("generate", "--checkpoint", ckpt, "--split", "all", "--out", tmp_path / "a")
    run("generate", "--checkpoint", ckpt, "--split", "all", "--out", tmp_path / "b", "--jobs", 3)
    a, b = sorted((tmp_path / "a").iterdir()), sorted((tmp_path / "b").iterdir())
    assert [p.name for p in a] == [p.name for p in b]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_synth_pipes_into_evaluate(tmp_path):
    cmd = [sys.executable, "-m", "smalltunes.cli"]
    synth = subprocess.run(cmd + ["synth", "--songs", "1", "--seed", "42", "--out", str(tmp_path / "c")],
                           capture_output=True, text=True, check=True)
    ev = subprocess.run(cmd + ["evaluate"], input=synth.stdout, capture_output=True, text=True, check=True)
    header, row, mean = ev.stdout.splitlines()
    assert row.split("\t")[header.split("\t").index("PSC")] == "10.000"


def test_usage_errors_exit_1(capsys):
    assert run_exit("ablate", "--group", 9) == 1
    assert run_exit("frobnicate") == 1
    assert run_exit("evaluate", ".", "--tonic", 12) == 1
    assert "usage" in capsys.readouterr().err


def run_exit(*argv) -> int:
    with pytest.raises(SystemExit) as info:
        run(*argv)
    return info.value.code


def test_data_errors_exit_2(tmp_path, capsys):
    assert run("evaluate", tmp_path / "nothing") == 2
    (tmp_path / "bad.json").write_text('{"train": {"seed": 1}}')
    assert run("train", "--config", tmp_path / "bad.json") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 2 and all(line.startswith("smalltunes: error:") for line in err)


def test_contract_violation_exits_3(tmp_path, capsys):
    model = SkeletonTransformer(load_config(SMOKE).model, seed=0)
    model.params["fusion.W"].data[:] = np.nan
    model.save(tmp_path / "nan.ckpt", meta={})
    assert run("train", "--config", SMOKE, "--resume", tmp_path / "nan.ckpt", "--out", tmp_path / "r") == 3
    assert "contract violation" in capsys.readouterr().err


@pytest.mark.parametrize("command", ["synth", "ingest", "segment", "skeleton", "train", "generate",
                                     "evaluate", "ablate"])
def test_help_documents_exit_codes(command, capsys):
    assert run_exit(command, "--help") == 0
    text = capsys.readouterr().out
    assert "exit codes" in text and "3 contract violation" in text
