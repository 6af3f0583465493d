import hashlib
import json
import subprocess
import sys

import pytest

from lineinbet.cli import main


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "inbetween" in capsys.readouterr().out


def test_unknown_flag_named(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x", "--bogus-flag", "3"])
    assert exc.value.code == 2
    assert "--bogus-flag" in capsys.readouterr().err


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert main(["vectorize", "--in", str(tmp_path / "missing.png"), "--out", str(tmp_path / "g.json")]) == 1
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"train": {"no_such_field": 1}}))
    assert main(["train", "--data", str(tmp_path), "--config", str(bad), "--out", str(tmp_path / "m.bin")]) == 1
    assert "no_such_field" in capsys.readouterr().err


def run_pipeline(root, tag):
    data, out = root / "data", root / tag
    out.mkdir()
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"model": {"channels": 8, "n_layers": 1, "spectral_dim": 8},
                               "train": {"gap_min": 0, "gap_max": 1, "accumulation_steps": 2,
                                         "splits": ["train"], "epochs_phase1": 1}}))
    if not data.exists():
        assert main(["synth", "--figures", "1", "--motions", "1", "--frames", "4", "--canvas", "48",
                     "--out", str(data)]) == 0
    manifest = json.loads((data / "manifest.json").read_text())
    frames = manifest["sequences"][0]["frames"]
    assert main(["train", "--data", str(data), "--config", str(cfg), "--epochs", "2", "--pairs-per-epoch", "2",
                 "--out", str(out / "m.bin"), "--log", str(out / "loss.csv")]) == 0
    assert main(["vectorize", "--in", str(data / frames[0]["image"]), "--out", str(out / "v.json")]) == 0
    assert main(["inbetween", "--g0", str(data / frames[0]["graph"]), "--g1", str(data / frames[2]["graph"]),
                 "--i0", str(data / frames[0]["image"]), "--i1", str(data / frames[2]["image"]),
                 "--params", str(out / "m.bin"), "--out-graph", str(out / "mid.json"),
                 "--out-png", str(out / "mid.png")]) == 0
    assert main(["eval", "--data", str(data), "--params", str(out / "m.bin"), "--gaps", "1",
                 "--splits", "train", "--out", str(out / "report.csv")]) == 0
    return out


def test_smoke_and_hash_determinism(tmp_path):
    a = run_pipeline(tmp_path, "a")
    b = run_pipeline(tmp_path, "b")
    names = ["m.bin", "loss.csv", "v.json", "mid.json", "mid.png", "report.csv"]
    for n in names:
        assert (a / n).stat().st_size > 0
        assert sha(a / n) == sha(b / n), n
    rows = (a / "report.csv").read_text().splitlines()
    assert rows[0] == "gap,pair_id,cd" and len(rows) == 1 + 2 + 1


def test_synth_hash_determinism_and_precedence(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"synth": {"canvas": 40, "frames_per_seq": 3, "n_figures": 1, "n_motions": 1}}))
    for tag in "ab":
        assert main(["synth", "--config", str(cfg), "--frames", "2", "--out", str(tmp_path / tag)]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert ma["config"]["canvas"] == 40 and ma["config"]["frames_per_seq"] == 2
    assert sha(tmp_path / "a" / "manifest.json") == sha(tmp_path / "b" / "manifest.json")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "lineinbet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "vectorize" in r.stdout
