import subprocess
import sys

import numpy as np
import pytest

from sparknet.audio import write_wav
from sparknet.cli import main
from sparknet.data import LABELS


def run(capsys, *argv):
    code = main(["--jobs", "1", *argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_macs(capsys):
    code, out, err = run(capsys, "macs", "--channels", "16", "--frames", "98")
    assert code == 0
    assert "params=4,636" in out
    assert "macs_strict=384,544" in out
    assert "macs_extended=" in out
    assert "seed" in err  # resolved-config banner


def test_macs_preset(capsys):
    code, out, _ = run(capsys, "macs", "--preset", "sparknet-32")
    assert code == 0 and "params=11,500" in out


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        main(["macs", "--bogus"])
    assert exc.value.code == 2


def test_runtime_error_is_one_line(capsys, tmp_path):
    code, _, err = run(capsys, "infer", "--checkpoint", str(tmp_path / "none.ckpt"), "x.wav")
    assert code == 1
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("sparknet: error: CheckpointError:")


def test_bad_set_key(capsys):
    code, _, err = run(capsys, "macs", "--set", "model.widgets=3")
    assert code == 1 and "ConfigError" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sparknet", "macs", "--channels", "4"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "params=" in proc.stdout


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_end_to_end(capsys, pipeline_dir):
    d = pipeline_dir
    assert run(capsys, "make-synthetic", "--out", str(d / "sc"), "--per-word", "10", "--noise-out", str(d / "noise"))[0] == 0
    code, out, _ = run(capsys, "prepare-data", "--data-root", str(d / "sc"), "--out", str(d / "m"))
    assert code == 0 and "raw_utterances=180" in out
    manifest = str(d / "m" / "manifest.tsv")

    for name in ("r1", "r2"):
        code, out, _ = run(capsys, "train", "--manifest", manifest, "--out", str(d / name), "--channels", "4",
                           "--epochs", "2", "--batch-size", "16", "--seed", "7", "--limit", "48")
        assert code == 0, out
    assert (d / "r1" / "metrics.csv").read_bytes() == (d / "r2" / "metrics.csv").read_bytes()
    assert (d / "r1" / "final.ckpt").read_bytes() == (d / "r2" / "final.ckpt").read_bytes()
    ckpt = str(d / "r1" / "final.ckpt")

    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", str(d / "eval"))
    assert code == 0 and "top-1 accuracy" in out
    assert (d / "eval.csv").exists() and (d / "eval.provenance.json").exists()

    noisy = str(d / "noisy.tsv")
    code, out, _ = run(capsys, "make-noisy-test", "--manifest", manifest, "--noise-dir", str(d / "noise"),
                       "--seeds", "0,1", "--out", noisy)
    assert code == 0
    first = (d / "noisy.tsv").read_bytes()
    run(capsys, "make-noisy-test", "--manifest", manifest, "--noise-dir", str(d / "noise"), "--seeds", "0,1", "--out", noisy)
    assert (d / "noisy.tsv").read_bytes() == first

    code, out, _ = run(capsys, "eval-noisy", "--checkpoint", ckpt, "--noisy-manifest", noisy, "--manifest", manifest,
                       "--seeds", "0,1", "--out", str(d / "sweep"))
    assert code == 0 and "clean:" in out
    code, _, err = run(capsys, "eval-noisy", "--checkpoint", ckpt, "--noisy-manifest", noisy, "--seeds", "0,1,2")
    assert code == 1 and "(2, 0)" in err

    silent = d / "silent.wav"
    write_wav(silent, np.zeros(16000))
    code, out, _ = run(capsys, "infer", "--checkpoint", ckpt, str(silent))
    assert code == 0
    path, label, prob = out.strip().split("\t")
    assert label in LABELS and 0 < float(prob) <= 1

    code, out, _ = run(capsys, "dump-gates", "--checkpoint", ckpt, "--mode", "hard", "--out", str(d / "gates"), str(silent))
    assert code == 0
    assert (d / "gates" / "silent_gates_hard.pgm").exists()
    assert (d / "gates" / "provenance.json").exists()
