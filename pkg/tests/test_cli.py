import json

import numpy as np
import pytest

from srvaegan.cli import main
from srvaegan.checkpoint import load_checkpoint
from srvaegan.mididata import (
    PianoRollSequence,
    load_dataset,
    read_midi,
    roll_to_midi_bytes,
    save_dataset,
    synthetic_scale_corpus,
)

CONFIG = """\
batch_size = 4
enc_channels = 4, 8, 16
gen_channels = 16, 8, 8, 4
dis_channels = 4, 8, 8, 16
gen_base = 32
"""


@pytest.fixture
def midi_dir(tmp_path):
    d = tmp_path / "midi"
    d.mkdir()
    for k, seq in enumerate(synthetic_scale_corpus(3, 3)):
        (d / f"piece{k}.mid").write_bytes(roll_to_midi_bytes(seq))
    return d


@pytest.fixture
def workspace(tmp_path, midi_dir):
    ds = tmp_path / "data.srvd"
    assert main(["ingest", "--midi-dir", str(midi_dir), "--out", str(ds)]) == 0
    cfg = tmp_path / "small.cfg"
    cfg.write_text(CONFIG)
    return tmp_path, ds, cfg


def test_ingest_reports_and_is_reproducible(tmp_path, midi_dir, capsys, caplog):
    (midi_dir / "broken.mid").write_bytes(b"MThd\x00\x00")
    out1, out2 = tmp_path / "a.srvd", tmp_path / "b.srvd"
    assert main(["ingest", "--midi-dir", str(midi_dir), "--out", str(out1)]) == 0
    text = capsys.readouterr()
    assert "piece0.mid: 3 bars" in text.out
    assert "9 bars in 3 sequences, 1 files skipped" in text.out
    assert "broken.mid" in caplog.text
    assert main(["ingest", "--midi-dir", str(midi_dir), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_ingest_empty_directory_fails(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    out = tmp_path / "x.srvd"
    assert main(["ingest", "--midi-dir", str(tmp_path / "empty"), "--out", str(out)]) == 1
    assert "error" in capsys.readouterr().err
    assert not out.exists()


def test_ingest_single_note_file(tmp_path):
    bar = np.zeros((1, 88, 16), np.float32)
    bar[0, 39, :] = 0.7  # one two-second note
    d = tmp_path / "one"
    d.mkdir()
    (d / "n.mid").write_bytes(roll_to_midi_bytes(PianoRollSequence(bar)))
    assert main(["ingest", "--midi-dir", str(d), "--out", str(tmp_path / "o.srvd")]) == 0
    assert len(load_dataset(tmp_path / "o.srvd")[0]) >= 1


def test_train_zero_epochs(workspace):
    tmp, ds, cfg = workspace
    ck, log = tmp / "m.ckpt", tmp / "log.jsonl"
    argv = ["train", "--config", str(cfg), "--dataset", str(ds), "--out-checkpoint", str(ck), "--log", str(log),
            "--epochs", "0", "--seed", "1"]
    assert main(argv) == 0
    assert log.read_text() == ""
    _, iteration, seed = load_checkpoint(ck)
    assert (iteration, seed) == (0, 1)


def test_train_same_seed_identical_checkpoints(workspace):
    tmp, ds, cfg = workspace
    outs = []
    for name in ("a", "b"):
        ck = tmp / f"{name}.ckpt"
        assert main(["train", "--config", str(cfg), "--dataset", str(ds), "--out-checkpoint", str(ck),
                     "--epochs", "2", "--seed", "4"]) == 0
        outs.append(ck.read_bytes())
    assert outs[0] == outs[1]
    lines = (tmp / "a.log.jsonl").read_text().splitlines()
    assert [json.loads(l)["iter"] for l in lines] == [1, 2]


def test_train_flags_override_config(workspace):
    tmp, ds, cfg = workspace
    cfg.write_text(CONFIG + "seed = 9\nepochs = 5\n")
    ck = tmp / "m.ckpt"
    assert main(["train", "--config", str(cfg), "--dataset", str(ds), "--out-checkpoint", str(ck),
                 "--epochs", "0"]) == 0
    assert load_checkpoint(ck)[1:] == (0, 9)


def test_train_rejects_unknown_config_key(workspace, capsys):
    tmp, ds, cfg = workspace
    cfg.write_text(CONFIG + "learning_rate = 3\n")
    assert main(["train", "--config", str(cfg), "--dataset", str(ds), "--out-checkpoint", str(tmp / "m")]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_train_rejects_wrong_bar_shape(workspace, capsys):
    tmp, _, cfg = workspace
    bad = tmp / "bad.srvd"
    buf = bytearray(b"SRVD" + (1).to_bytes(2, "little") + (64).to_bytes(4, "little") + (16).to_bytes(4, "little")
                    + (0).to_bytes(4, "little"))
    bad.write_bytes(bytes(buf))
    assert main(["train", "--config", str(cfg), "--dataset", str(bad), "--out-checkpoint", str(tmp / "m")]) == 1
    assert "64x16" in capsys.readouterr().err


def test_resume_flag_continues_run(workspace):
    tmp, ds, cfg = workspace
    base = ["train", "--config", str(cfg), "--dataset", str(ds), "--seed", "2", "--epochs", "1"]
    assert main(base + ["--out-checkpoint", str(tmp / "full.ckpt"), "--log", str(tmp / "full.log")]) == 0
    assert main(base + ["--out-checkpoint", str(tmp / "part.ckpt"), "--log", str(tmp / "part.log"),
                        "--max-iters", "1"]) == 0
    assert main(base + ["--out-checkpoint", str(tmp / "part.ckpt"), "--log", str(tmp / "part.log"),
                        "--resume", str(tmp / "part.ckpt")]) == 0
    assert (tmp / "full.ckpt").read_bytes() == (tmp / "part.ckpt").read_bytes()
    assert (tmp / "full.log").read_text() == (tmp / "part.log").read_text()


@pytest.fixture
def checkpoint(workspace):
    tmp, ds, cfg = workspace
    ck = tmp / "m.ckpt"
    assert main(["train", "--config", str(cfg), "--dataset", str(ds), "--out-checkpoint", str(ck),
                 "--max-iters", "1", "--seed", "0"]) == 0
    return ck


def test_generate_mode2(workspace, checkpoint, capsys):
    tmp, _, _ = workspace
    out = tmp / "gen.srvd"
    assert main(["generate", "--checkpoint", str(checkpoint), "--mode", "2", "--bars", "5", "--seed", "3",
                 "--out", str(out), "--midi", str(tmp / "gen.mid")]) == 0
    (seq,) = load_dataset(out)
    assert len(seq) == 5
    assert "non-zero cells per bar" in capsys.readouterr().out
    assert read_midi(tmp / "gen.mid").format == 0
    assert main(["generate", "--checkpoint", str(checkpoint), "--mode", "2", "--bars", "1", "--seed", "3",
                 "--out", str(out)]) == 0
    assert len(load_dataset(out)[0]) == 1


def test_generate_fixed_seed_reproducible(workspace, checkpoint):
    tmp, ds, _ = workspace
    outs = []
    for name in ("a", "b"):
        out = tmp / f"{name}.srvd"
        assert main(["generate", "--checkpoint", str(checkpoint), "--mode", "1", "--dataset", str(ds),
                     "--bars", "3", "--seed", "7", "--samples", "2", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_generate_without_seed_prints_one(workspace, checkpoint, capsys):
    tmp, _, _ = workspace
    assert main(["generate", "--checkpoint", str(checkpoint), "--mode", "2", "--bars", "1",
                 "--out", str(tmp / "g.srvd")]) == 0
    assert capsys.readouterr().out.startswith("seed: ")


def test_generate_mode1_needs_dataset(workspace, checkpoint):
    tmp, _, _ = workspace
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--checkpoint", str(checkpoint), "--mode", "1", "--out", str(tmp / "g.srvd")])
    assert exc.value.code == 2


def test_eval_reports(tmp_path, capsys):
    seqs = synthetic_scale_corpus(2, 1)
    ds = tmp_path / "two.srvd"
    save_dataset(ds, [seqs[0], seqs[0]])
    out = tmp_path / "r.json"
    assert main(["eval", "--in", str(ds), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["diversity"] == 0.0
    assert report["per_sample"]["scale_consistency"] == [100.0, 100.0]
    assert "reference" in capsys.readouterr().out
    save_dataset(ds, seqs[:1])
    assert main(["eval", "--in", str(ds), "--out", str(out)]) == 0
    assert "diversity" not in json.loads(out.read_text())


def test_eval_on_midi_directory(tmp_path, midi_dir):
    out = tmp_path / "r.json"
    assert main(["eval", "--in", str(midi_dir), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["n_samples"] == 3


def test_eval_without_samples_fails(tmp_path):
    (tmp_path / "e").mkdir()
    assert main(["eval", "--in", str(tmp_path / "e"), "--out", str(tmp_path / "r.json")]) == 1


def test_export_files(tmp_path):
    seqs = synthetic_scale_corpus(2, 2) + [PianoRollSequence(np.zeros((2, 88, 16)))]
    ds = tmp_path / "d.srvd"
    save_dataset(ds, seqs)
    out = tmp_path / "midi"
    assert main(["export", "--in", str(ds), "--out-dir", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["seq_0000.mid", "seq_0001.mid", "seq_0002.mid"]
    silent = read_midi(out / "seq_0002.mid")
    assert not [e for e in silent.events if e.kind.startswith("note")]


def test_export_then_ingest_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    bars = np.where(rng.random((3, 88, 16)) < 0.1, rng.random((3, 88, 16)), 0).astype(np.float32)
    ds = tmp_path / "d.srvd"
    save_dataset(ds, [PianoRollSequence(bars)])
    assert main(["export", "--in", str(ds), "--out-dir", str(tmp_path / "m")]) == 0
    assert main(["ingest", "--midi-dir", str(tmp_path / "m"), "--out", str(tmp_path / "back.srvd")]) == 0
    back = load_dataset(tmp_path / "back.srvd")[0].bars
    keep = bars >= 0.05
    assert np.max(np.abs(back[keep] - bars[keep])) <= 1 / 254 + 1e-7


def test_export_unwritable_directory(tmp_path):
    ds = tmp_path / "d.srvd"
    save_dataset(ds, synthetic_scale_corpus(1, 1))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["export", "--in", str(ds), "--out-dir", str(blocker / "sub")]) == 1


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["export", "--in", "x", "--out-dir", "y", "--bogus"])
    assert exc.value.code == 2
