import csv
import json
from pathlib import Path

import pytest

from hybrid_ar.cli import derive_seed, main

SMALL_WORLD = {
    "experiment": {
        "n_accents": 2, "n_speakers_per_accent": 3, "n_utts_per_speaker": 6,
        "n_val_speakers_per_accent": 1, "native_speakers": 3, "native_utts_per_speaker": 6,
        "native_val_speakers": 1, "epochs": 1, "pretrain_epochs": 1, "finetune_epochs": 1,
        "probe_epochs": 1,
    }
}


@pytest.fixture
def runs(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("HYBRID_AR_RUN_ROOT", str(root))
    monkeypatch.chdir(tmp_path)
    return root


def _run_dir(root, command):
    dirs = sorted(root.glob(f"*-{command}*"))
    assert dirs, f"no run dir for {command}"
    return dirs[-1]


@pytest.fixture
def corpus(runs, tmp_path):
    assert main(["synth", "--n-accents", "2", "--speakers-per-accent", "2", "--utts-per-speaker", "5",
                 "--out", str(tmp_path / "corp")]) == 0
    return tmp_path / "corp" / "manifest.jsonl"


@pytest.fixture
def checkpoint(runs, corpus):
    assert main(["train", "--manifest", str(corpus), "--val-speakers", "1", "--regime", "mtl",
                 "--epochs", "1", "--lr", "1e-3"]) == 0
    return _run_dir(runs, "train") / "model.pt"


def test_run_dir_and_config_echo(runs, corpus):
    d = _run_dir(runs, "synth")
    assert d.name.split("-")[2] == "seed0"
    cfg = json.loads((d / "config.json").read_text())
    assert cfg["command"] == "synth" and cfg["corpus"]["n_accents"] == 2
    assert cfg["corpus"]["seed"] == derive_seed(0, "corpus")


def test_global_seed_cascades(runs, tmp_path):
    main(["synth", "--seed", "7", "--n-accents", "1", "--speakers-per-accent", "1",
          "--utts-per-speaker", "2", "--out", str(tmp_path / "c7")])
    cfg = json.loads((_run_dir(runs, "synth") / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["corpus"]["seed"] == derive_seed(7, "corpus")
    assert derive_seed(7, "corpus") != derive_seed(7, "train") != derive_seed(8, "corpus")


def test_explicit_flags_override_config_file(runs, corpus, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"seed": 3, "train": {"lr": 0.5, "max_epochs": 1, "regime": "ar_only"}}))
    assert main(["train", "--config", str(conf), "--manifest", str(corpus), "--lr", "1e-3"]) == 0
    cfg = json.loads((_run_dir(runs, "train") / "config.json").read_text())
    assert cfg["seed"] == 3 and cfg["train"]["lr"] == 1e-3
    assert cfg["train"]["regime"] == "ar_only" and cfg["train"]["max_epochs"] == 1


@pytest.mark.parametrize("payload", [{"bogus": {}}, {"train": {"lrr": 1}}, {"experiment": {"x": 1}}])
def test_unknown_config_keys_are_rejected(runs, tmp_path, payload, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps(payload))
    assert main(["synth", "--config", str(conf)]) == 1
    assert "unknown" in capsys.readouterr().err


def test_user_errors_exit_one(runs, tmp_path, checkpoint):
    assert main(["train", "--no-such-flag"]) == 1
    assert main(["evaluate", "--checkpoint", "missing.pt", "--manifest", "x.jsonl"]) == 1
    assert main(["train", "--manifest", "missing.jsonl"]) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--manifest", str(bad)]) == 1


def test_evaluate_empty_manifest_exits_one(runs, tmp_path, checkpoint, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--manifest", str(empty)]) == 1
    assert "no utterances" in capsys.readouterr().err


def test_internal_errors_exit_two(runs, monkeypatch, corpus):
    import hybrid_ar.cli as cli

    def boom(run, args):
        raise KeyError("bug")

    monkeypatch.setitem(cli.COMMANDS, "synth", boom)
    assert main(["synth"]) == 2


def test_evaluate_writes_per_accent_csv(runs, corpus, checkpoint):
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--manifest", str(corpus)]) == 0
    rows = list(csv.reader((_run_dir(runs, "evaluate") / "accuracy.csv").open()))
    assert rows[0] == ["model", "accent0", "accent1", "Total"] and len(rows) == 2


def test_hybrid_training_pipeline(runs, tmp_path, corpus):
    assert main(["synth", "--native", "--n-accents", "1", "--speakers-per-accent", "3",
                 "--utts-per-speaker", "4", "--out", str(tmp_path / "nat")]) == 0
    assert main(["pretrain-asr", "--manifest", str(tmp_path / "nat" / "manifest.jsonl"),
                 "--val-speakers", "1", "--epochs", "1"]) == 0
    ref = _run_dir(runs, "pretrain-asr") / "acoustic.pt"
    assert main(["train", "--manifest", str(corpus), "--val-speakers", "1", "--regime", "hybrid",
                 "--fusion", "concat_ca", "--lambda", "0.1", "--reference", str(ref),
                 "--init-acoustic", str(ref), "--epochs", "1"]) == 0
    d = _run_dir(runs, "train")
    assert (d / "metrics.csv").exists() and (d / "accuracy.csv").exists()
    cfg = json.loads((d / "config.json").read_text())
    assert cfg["train"]["lam"] == 0.1 and cfg["train"]["fusion_mode"] == "concat_ca"
    model = str(d / "model.pt")
    assert main(["attention-report", "--checkpoint", model, "--manifest", str(corpus)]) == 0
    assert (_run_dir(runs, "attention-report") / "attention.csv").exists()
    assert main(["export-embeddings", "--checkpoint", model, "--manifest", str(corpus)]) == 0
    assert main(["probe-speaker", "--checkpoint", model, "--manifest", str(corpus), "--epochs", "1"]) == 0
    assert (_run_dir(runs, "probe-speaker") / "probe_accuracy.csv").exists()


def test_hybrid_without_reference_is_user_error(runs, corpus):
    assert main(["train", "--manifest", str(corpus), "--regime", "hybrid", "--epochs", "1"]) == 1


def test_degrade_writes_loadable_manifest(runs, corpus, tmp_path, checkpoint):
    out = tmp_path / "elsewhere" / "deg.jsonl"
    assert main(["degrade", "--manifest", str(corpus), "--theta", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("#")
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--manifest", str(out)]) == 0
    assert main(["degrade", "--manifest", str(corpus)]) == 1


def test_features_from_wav(runs, tmp_path):
    import wave

    import numpy as np

    path = tmp_path / "tone.wav"
    pcm = (0.3 * 32767 * np.sin(2 * np.pi * 440 * np.arange(8000) / 16000)).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(pcm.tobytes())
    assert main(["features", str(path), "--out", str(tmp_path / "f")]) == 0
    assert (tmp_path / "f" / "tone.fbk").exists()
    assert main(["features", str(tmp_path / "nope.wav")]) == 1


def test_robustness_partial_table(runs, tmp_path):
    conf = tmp_path / "w.json"
    conf.write_text(json.dumps(SMALL_WORLD))
    assert main(["robustness", "--config", str(conf), "--theta", "0,0.5,1", "--random"]) == 0
    rows = list(csv.reader((_run_dir(runs, "robustness") / "robustness.csv").open()))
    assert rows[0][:2] == ["transcription", "regime"] and rows[0][-2:] == ["Total", "status"]
    assert len(rows) == 9
    assert [r[0] for r in rows[1::2]] == ["theta=0", "theta=0.5", "theta=1", "random"]


def test_report_writes_trend_rows(runs, tmp_path, capsys):
    conf = tmp_path / "w.json"
    conf.write_text(json.dumps(SMALL_WORLD))
    assert main(["report", "--config", str(conf), "--seeds", "0"]) == 0
    rows = list(csv.reader((_run_dir(runs, "report") / "trends.csv").open()))
    assert rows[0][0] == "seed" and len(rows) == 2
    assert "trend A" in capsys.readouterr().out


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "robustness" in capsys.readouterr().out
