import csv
import json

import numpy as np
import pytest

from fooder.cli import main
from fooder.io.frames import read_frames, write_frames


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 and out.strip() else None)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny synth -> preprocess -> train -> calibrate run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    raw, der = root / "raw", root / "derived"
    steps = [
        ["synth", "--out-dir", raw, "--frames-per-subject", 40, "--seq-len", 20,
         "--train-frac", 0.5, "--cal-frac", 0.0, "--test-frac", 0.5],
        ["preprocess", "--manifest", raw / "manifest.json", "--out-dir", der],
        ["train-auth", "--manifest", der / "manifest.json", "--out", root / "auth.ckpt", "--epochs", 1,
         "--batch-size", 16],
        ["train-fer", "--manifest", der / "manifest.json", "--out-dir", root / "fer", "--epochs", 1,
         "--batch-size", 16],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0, argv
    return root


def test_no_command_is_usage_error(capsys):
    assert main([]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_option_is_usage_error(capsys):
    assert main(["synth", "--out-dir", "x", "--bogus"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def test_missing_manifest_is_data_error(tmp_path, capsys):
    assert main(["preprocess", "--manifest", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)]) == 2


def test_synth_manifest_and_shapes(workspace):
    m = json.loads((workspace / "raw" / "manifest.json").read_text())
    assert m["kind"] == "raw"
    splits = {(e["subject_label"], e["split"]) for e in m["entries"]}
    assert all(split == "test" for subject, split in splits if subject != "id")
    first = m["entries"][0]
    cubes = read_frames(workspace / "raw" / first["path"], "raw_cube")
    assert cubes.shape[1:] == (3, 64, 128)


def test_preprocess_skips_seven_frames_per_sequence(workspace):
    m = json.loads((workspace / "derived" / "manifest.json").read_text())
    e = m["entries"][0]
    rdi = read_frames(workspace / "derived" / e["path"], "rdi")
    micro = read_frames(workspace / "derived" / e["micro_path"], "micro_rdi")
    assert len(rdi) == e["n_frames"] and len(micro) == e["n_frames"] - 7
    assert rdi.min() >= 0 and rdi.max() <= 1


def test_eval_auth_requires_calibration(workspace, tmp_path, capsys):
    ckpt = tmp_path / "fresh.ckpt"
    ckpt.write_bytes((workspace / "auth.ckpt").read_bytes())
    code, _ = run(capsys, "eval-auth", "--manifest", workspace / "derived" / "manifest.json", "--ckpt", ckpt,
                  "--out-dir", tmp_path / "ev")
    assert code == 2


def test_calibrate_rejects_ood_split(workspace, tmp_path, capsys):
    ckpt = tmp_path / "c.ckpt"
    ckpt.write_bytes((workspace / "auth.ckpt").read_bytes())
    code, _ = run(capsys, "calibrate", "--manifest", workspace / "derived" / "manifest.json", "--ckpt", ckpt,
                  "--split", "test")
    assert code == 2


@pytest.fixture(scope="module")
def calibrated(workspace):
    ckpt = workspace / "cal.ckpt"
    ckpt.write_bytes((workspace / "auth.ckpt").read_bytes())
    # the tiny plan has no cal split, so calibrate on the ID training entries
    assert main(["calibrate", "--manifest", str(workspace / "derived" / "manifest.json"), "--ckpt", str(ckpt),
                 "--split", "train"]) == 0
    return ckpt


def test_eval_auth_outputs(workspace, calibrated, tmp_path, capsys):
    out = tmp_path / "ev"
    code, doc = run(capsys, "eval-auth", "--manifest", workspace / "derived" / "manifest.json", "--ckpt",
                    calibrated, "--out-dir", out)
    assert code == 0
    assert 0.0 <= doc["report"]["auroc"] <= 1.0
    assert set(doc["ablation_auroc"]) == {"full", "rdi", "micro", "bp", "iled"}
    with open(out / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["label"] for r in rows} == {"ID", "OOD"}
    r = rows[0]
    parts = sum(float(r[k]) for k in ("mse_R", "mse_mR", "mse_iled_R", "mse_iled_mR"))
    assert float(r["score"]) == pytest.approx(parts, rel=1e-9)


def test_eval_fer_directory_form(workspace, tmp_path, capsys):
    code, doc = run(capsys, "eval-fer", "--manifest", workspace / "derived" / "manifest.json", "--fer-ckpts",
                    workspace / "fer", "--out", tmp_path / "fer.json")
    assert code == 0
    assert 0.0 <= doc["gate_accuracy"] <= 1.0
    assert (tmp_path / "fer.json").exists()


def test_eval_fer_wrong_file_count_is_usage_error(workspace, capsys):
    code, _ = run(capsys, "eval-fer", "--manifest", workspace / "derived" / "manifest.json", "--fer-ckpts",
                  workspace / "fer" / "gate.ckpt", workspace / "fer" / "static.ckpt")
    assert code == 1


def test_baseline_scores_writes_one_csv_per_method(workspace, tmp_path, capsys):
    out = tmp_path / "bl"
    code, doc = run(capsys, "baseline-scores", "--manifest", workspace / "derived" / "manifest.json",
                    "--out-dir", out, "--epochs", 1, "--methods", "msp", "energy")
    assert code == 0
    assert set(doc) == {"msp", "energy"}
    assert (out / "msp.csv").exists() and (out / "energy.csv").exists() and (out / "flat.ckpt").exists()


def test_stream_counts_and_log(workspace, calibrated, tmp_path, capsys):
    log = tmp_path / "s.jsonl"
    code, doc = run(capsys, "stream", "--manifest", workspace / "raw" / "manifest.json", "--auth-ckpt",
                    calibrated, "--fer-ckpts", workspace / "fer", "--limit", 30, "--log", log)
    assert code == 0
    assert doc["frames"] == 30
    assert doc["specialist_evals"] == doc["id_decisions"]
    assert "cpu" in doc["hardware"]
    assert len(log.read_text().splitlines()) == 30


def test_stream_rejects_derived_manifest(workspace, calibrated, capsys):
    code, _ = run(capsys, "stream", "--manifest", workspace / "derived" / "manifest.json", "--auth-ckpt",
                  calibrated, "--fer-ckpts", workspace / "fer")
    assert code == 2


def test_import_checks_cube_shape(tmp_path, capsys):
    good, bad = tmp_path / "good.food", tmp_path / "bad.food"
    write_frames(good, np.zeros((2, 3, 64, 128), np.complex64), "raw_cube")
    write_frames(bad, np.zeros((2, 3, 32, 128), np.complex64), "raw_cube")
    code, doc = run(capsys, "import", good, "--out-dir", tmp_path / "ds", "--subject", "id", "--expression", "smile")
    assert code == 0 and doc["added"] == ["raw/good.food"]
    code, _ = run(capsys, "import", bad, "--out-dir", tmp_path / "ds", "--subject", "id", "--expression", "smile")
    assert code == 2
