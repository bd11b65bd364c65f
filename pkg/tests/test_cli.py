"""Command-line workflow at small scale: 16 channels at 256 Hz, a tiny network."""

import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from engage import cli
from engage.data import load_recording, read_manifest, save_recording, write_manifest
from engage.stream import write_recording_stream

COHORT = {"seed": 7, "n_subjects": 2, "session": {"fs_hz": 256.0, "n_channels": 16}}
RUN = {
    "architecture": {"conv_channels": [2, 2, 2, 2], "input_shape": [16, 600]},
    "train": {"epochs": 2, "batch_size": 64},
}


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cohort.json").write_text(json.dumps(COHORT))
    (root / "run.json").write_text(json.dumps(RUN))
    assert cli.main(["synth", "--config", str(root / "cohort.json"), "--out", str(root / "data")]) == 0
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "train"
    assert cli.main(["train", "--manifest", str(workspace / "data" / "manifest.json"),
                     "--config", str(workspace / "run.json"), "--out", str(out)]) == 0
    return out


def test_synth_writes_recordings_and_manifest(workspace):
    entries = read_manifest(workspace / "data" / "manifest.json")
    assert [sid for sid, _ in entries] == ["S01", "S02"]
    rec = load_recording(entries[0][1])
    assert rec.n_channels == 16 and rec.duration_s == 2100.0 and len(rec.feedback) == 7
    assert (workspace / "data" / "S01_behavior.csv").exists()


def test_synth_is_byte_identical_on_rerun(workspace, tmp_path):
    assert cli.main(["synth", "--config", str(workspace / "cohort.json"), "--out", str(tmp_path)]) == 0
    for name in ("S01.eegr", "S02.eegr", "S01_behavior.csv", "manifest.json"):
        assert sha(tmp_path / name) == sha(workspace / "data" / name)


def test_synth_seed_override_changes_data(workspace, tmp_path):
    small = dict(COHORT, n_subjects=1, session={"fs_hz": 256.0, "n_channels": 2, "duration_s": 10})
    (tmp_path / "c.json").write_text(json.dumps(small))
    cli.main(["synth", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "a")])
    cli.main(["synth", "--config", str(tmp_path / "c.json"), "--seed", "8", "--out", str(tmp_path / "b")])
    assert sha(tmp_path / "a" / "S01.eegr") != sha(tmp_path / "b" / "S01.eegr")


def test_train_is_deterministic(workspace, trained, tmp_path):
    assert cli.main(["train", "--manifest", str(workspace / "data" / "manifest.json"),
                     "--config", str(workspace / "run.json"), "--out", str(tmp_path)]) == 0
    assert sha(tmp_path / "model.cecn") == sha(trained / "model.cecn")
    assert sha(tmp_path / "report.json") == sha(trained / "report.json")
    report = json.loads((trained / "report.json").read_text())
    assert report["kind"] == "train" and report["train"]["n"] == 2 * 170


def test_loso_and_subject_reports(workspace, capsys):
    manifest = str(workspace / "data" / "manifest.json")
    run = str(workspace / "run.json")
    assert cli.main(["loso", "--manifest", manifest, "--config", run, "--out", str(workspace / "loso")]) == 0
    doc = json.loads((workspace / "loso" / "report.json").read_text())
    assert [f["subject_id"] for f in doc["folds"]] == ["S01", "S02"]
    assert (workspace / "loso" / "fold_S01.cecn").exists()
    assert cli.main(["subject", "--manifest", manifest, "--config", run, "--subject", "S02",
                     "--out", str(workspace / "subject")]) == 0
    doc = json.loads((workspace / "subject" / "report.json").read_text())
    assert [r["subject_id"] for r in doc["runs"]] == ["S02"] and doc["runs"][0]["n"] == 34
    assert "mean" in capsys.readouterr().out


def test_subject_not_in_manifest(workspace):
    assert cli.main(["subject", "--manifest", str(workspace / "data" / "manifest.json"),
                     "--config", str(workspace / "run.json"), "--subject", "S09",
                     "--out", str(workspace / "x")]) == 2


def test_trajectory_reports_nine_windows(workspace, trained, capsys):
    out = workspace / "traj.jsonl"
    report = workspace / "traj_report.json"
    code = cli.main(["trajectory", "--checkpoint", str(trained / "model.cecn"),
                     "--recording", str(workspace / "data" / "S01.eegr"), "--config", str(workspace / "run.json"),
                     "--out", str(out), "--csv", str(workspace / "traj.csv"), "--report", str(report)])
    assert code == 0
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(lines) == 9 and all(x["n_trials"] == 140 for x in lines)
    assert "rho" in capsys.readouterr().out
    assert json.loads(report.read_text())["kind"] == "trajectory"
    assert cli.main(["report", str(report), str(workspace / "loso" / "report.json"),
                     "--out", str(workspace / "tables")]) == 0
    assert (workspace / "tables" / "correlation.csv").exists()


def test_trajectory_without_feedback_skips_correlation(workspace, trained, tmp_path, capsys):
    rec = load_recording(workspace / "data" / "S01.eegr")
    save_recording(type(rec)(rec.subject_id, rec.fs_hz, rec.samples[:, :256 * 900]), tmp_path / "nofb.eegr")
    code = cli.main(["trajectory", "--checkpoint", str(trained / "model.cecn"),
                     "--recording", str(tmp_path / "nofb.eegr"), "--config", str(workspace / "run.json"),
                     "--out", str(tmp_path / "t.jsonl")])
    assert code == 0
    assert "correlation skipped" in capsys.readouterr().err


def test_stream_command(workspace, trained, tmp_path):
    rec = load_recording(workspace / "data" / "S02.eegr")
    with open(tmp_path / "s.bin", "wb") as f:
        write_recording_stream(type(rec)("S02", rec.fs_hz, rec.samples[:, :256 * 30]), f)
    code = cli.main(["stream", "--checkpoint", str(trained / "model.cecn"), "--input", str(tmp_path / "s.bin"),
                     "--out", str(tmp_path / "s.jsonl"), "--config", str(workspace / "run.json"),
                     "--latency-report", str(tmp_path / "lat.json")])
    assert code == 0
    lines = [json.loads(x) for x in (tmp_path / "s.jsonl").read_text().splitlines()]
    assert [x["t"] for x in lines] == [3.0 * k for k in range(10)]
    assert json.loads((tmp_path / "lat.json").read_text())["trials"] == 10


def test_stream_malformed_input_exits_4(workspace, trained, tmp_path, capsys):
    (tmp_path / "bad.bin").write_bytes(b"NOPE" + bytes(12))
    code = cli.main(["stream", "--checkpoint", str(trained / "model.cecn"), "--input", str(tmp_path / "bad.bin"),
                     "--out", str(tmp_path / "o.jsonl")])
    assert code == 4
    assert "offset 0" in capsys.readouterr().err


def test_malformed_recording_exits_4(workspace, tmp_path):
    raw = (workspace / "data" / "S01.eegr").read_bytes()
    (tmp_path / "S01.eegr").write_bytes(raw[:-100])
    write_manifest([("S01", "S01.eegr")], tmp_path / "m.json")
    assert cli.main(["train", "--manifest", str(tmp_path / "m.json"), "--out", str(tmp_path / "o")]) == 4


def test_single_class_data_exits_3(workspace, tmp_path):
    # the first 15 minutes hold engaged trials only
    rec = load_recording(workspace / "data" / "S01.eegr")
    save_recording(type(rec)("S01", rec.fs_hz, rec.samples[:, :256 * 900]), tmp_path / "S01.eegr")
    write_manifest([("S01", "S01.eegr")], tmp_path / "m.json")
    for command in ("train", "subject"):
        assert cli.main([command, "--manifest", str(tmp_path / "m.json"), "--config", str(workspace / "run.json"),
                         "--out", str(tmp_path / command)]) == 3


@pytest.mark.parametrize("argv", [
    ["synth", "--config", "/nonexistent.json", "--out", "/tmp/unused"],
    ["loso", "--manifest", "/nonexistent.json", "--out", "/tmp/unused"],
    ["stream", "--checkpoint", "/nonexistent.cecn"],
])
def test_missing_files_exit_2(argv):
    assert cli.main(argv) == 2


def test_bad_run_config_exits_2(workspace, tmp_path):
    (tmp_path / "run.json").write_text(json.dumps({"train": {"epochs": 0}}))
    assert cli.main(["train", "--manifest", str(workspace / "data" / "manifest.json"),
                     "--config", str(tmp_path / "run.json"), "--out", str(tmp_path)]) == 2
    (tmp_path / "run.json").write_text(json.dumps({"optimizer": {}}))
    assert cli.main(["train", "--manifest", str(workspace / "data" / "manifest.json"),
                     "--config", str(tmp_path / "run.json"), "--out", str(tmp_path)]) == 2


def test_report_errors_exit_5(tmp_path):
    assert cli.main(["report", "--out", str(tmp_path)]) == 5
    (tmp_path / "r.json").write_text(json.dumps({"format": "engage.report", "version": 99, "kind": "loso"}))
    assert cli.main(["report", str(tmp_path / "r.json"), "--out", str(tmp_path)]) == 5


def test_module_entry_point_and_version():
    res = subprocess.run([sys.executable, "-m", "engage", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("engage ")
    res = subprocess.run([sys.executable, "-m", "engage", "report", "--out", "/tmp/unused-engage"],
                         capture_output=True, text=True)
    assert res.returncode == 5
