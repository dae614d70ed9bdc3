import csv
import json

import pytest

from daks.cli import main
from daks.experiment import CheckError, SweepSpec, calibrate, check, load_document, load_sweep


def write(path, text):
    path.write_text(text)
    return path


def test_minimal_config_runs(tmp_path, capsys):
    assert main(["run", "--config", "minimal", "--out-dir", str(tmp_path), "--serial"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "runs.csv")))
    assert len(rows) == 1
    assert rows[0]["n"] == "16" and rows[0]["all_correct"] == "1"
    assert (tmp_path / "outcomes.jsonl").exists() and (tmp_path / "run.log").exists()
    assert "wrote 1 runs" in capsys.readouterr().out


def test_infeasible_average_refused(tmp_path, capsys):
    cfg = write(tmp_path / "bad.toml", "n = 16\ntarget_p = 0.6\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert "mean(p) < 1/2 - zeta" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_malformed_config_names_field(tmp_path, capsys):
    cfg = write(tmp_path / "bad.toml", "n = 16\nH = -1\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "H" in capsys.readouterr().err
    cfg = write(tmp_path / "bad2.toml", "n = 16\nwidth = 3\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "width" in capsys.readouterr().err


def test_truncated_run_exits_nonzero(tmp_path):
    assert main(["run", "--config", "minimal", "--out-dir", str(tmp_path), "--max-rounds", "3", "--serial"]) == 1


def test_rerun_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", "minimal", "--seeds", "3", "--out-dir", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()
    assert (tmp_path / "a" / "traces.jsonl").read_bytes() == (tmp_path / "b" / "traces.jsonl").read_bytes()


def test_serial_matches_parallel(tmp_path):
    assert main(["run", "--config", "minimal", "--seeds", "2", "--serial", "--out-dir", str(tmp_path / "s")]) == 0
    assert main(["run", "--config", "minimal", "--seeds", "2", "--out-dir", str(tmp_path / "p")]) == 0
    assert (tmp_path / "s" / "runs.csv").read_bytes() == (tmp_path / "p" / "runs.csv").read_bytes()


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("DAKS_SEED", "41")
    assert load_sweep("minimal").configs()[0].seed == 41
    assert main(["run", "--config", "minimal", "--out-dir", str(tmp_path), "--serial"]) == 0
    assert next(csv.DictReader(open(tmp_path / "runs.csv")))["seed"] == "41"


def test_json_and_toml_agree(tmp_path):
    doc = load_document("mfp-sweep")
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(doc))
    assert SweepSpec.from_dict(load_document(path)).configs() == SweepSpec.from_dict(doc).configs()


def test_cells_override_defaults():
    spec = SweepSpec.from_dict({"n": [4, 8], "seeds": 2, "K": 3, "cell": [{}, {"K": 5, "target_p": 0.1}]})
    cfgs = spec.configs()
    assert len(cfgs) == 8
    assert [c.K for c in cfgs[:4]] == [3, 3, 5, 5]
    assert cfgs[2].target_p == 0.1 and cfgs[0].target_p == 0


def test_check_noise_free(tmp_path, capsys):
    cfg = write(tmp_path / "nf.toml", "n = [1, 16]\nseeds = 3\n")
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path), "--serial"]) == 0
    capsys.readouterr()
    assert main(["check", "--results", str(tmp_path), "--criteria", "criteria-noise-free"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert "measured 1 vs bound 1" in out


def test_check_empty_results(tmp_path, capsys):
    (tmp_path / "runs.csv").write_text(",".join(["seed", "n", "t", "model", "rounds", "all_correct", "agreement", "truncated"]) + "\n")
    assert main(["check", "--results", str(tmp_path), "--criteria", "criteria-noise-free"]) == 1
    assert "no completed runs" in capsys.readouterr().out


def test_check_missing_column(tmp_path, capsys):
    (tmp_path / "runs.csv").write_text("seed,n\n0,4\n")
    with pytest.raises(CheckError, match="missing column"):
        check(tmp_path, "criteria-noise-free")
    assert main(["check", "--results", str(tmp_path), "--criteria", "criteria-noise-free"]) == 2


def test_calibrate_tiny_k_fails_honestly(capsys, tmp_path):
    doc = {"H": [2.0], "K": [0.1], "n": [64], "seeds": 10, "min_correct": 0.95,
           "scenario": {"target_p": 0.3, "zeta": 0.15}}  # fmt: skip
    out = calibrate(doc, serial=True)
    assert out["recommended"] is None and out["passing"] == []
    assert out["table"][0]["correct_fraction"] < 0.95


def test_calibrate_defaults_pass(tmp_path):
    doc = {"H": [2.0], "K": [8.0], "n": [64], "seeds": 10, "scenario": {"target_p": 0.3, "zeta": 0.15}}
    out = calibrate(doc, out_dir=tmp_path)
    assert (2.0, 8.0) in out["passing"]
    assert (tmp_path / "calibration.csv").read_text().startswith("H,K,n,runs,correct_fraction")


def test_calibrate_single_processor_any_pair_passes(tmp_path, capsys):
    path = write(tmp_path / "cal.toml", "H = [0.1, 2.0]\nK = [0.1, 8.0]\nn = [1]\nseeds = 3\n")
    assert main(["calibrate", "--config", str(path), "--serial"]) == 0
    out = calibrate(load_document(path), serial=True)
    assert len(out["passing"]) == 4
    assert out["recommended"] == (0.1, 0.1)
    assert "recommended H=0.1 K=0.1" in capsys.readouterr().out
