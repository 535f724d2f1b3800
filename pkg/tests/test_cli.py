"""Orchestration surface: run/resume/analyze/verify/export round trips."""

import numpy as np
import pytest

import fedscope.fl.engine as engine_mod
from fedscope.cka import CkaMatrix
from fedscope.experiment.cli import main
from fedscope.experiment.config import parse_config_text
from fedscope.experiment.manifest import check_files, load_manifest
from fedscope.experiment.runner import RunnerError, cmd_run

CFG = """
seed = 3
output_dir = {out}
dataset.per_class = 24
dataset.holdout_per_class = 8
dataset.num_classes = 4
dataset.image_shape = 1x6x6
partition.num_clients = 2
partition.labels_per_client = 2
model.arch = TINY_MLP
model.hidden_dims = 16
model.projection_dim = 4
fl.rounds = {rounds}
fl.batch_size = 16
analysis.probe_per_class = 2
analysis.probe_batches = 2
analysis.snapshot_epochs = {snaps}
"""


def write_cfg(tmp_path, name="exp.cfg", out="run", rounds=2, snaps="2"):
    path = tmp_path / name
    path.write_text(CFG.format(out=out, rounds=rounds, snaps=snaps),
                    encoding="utf-8")
    return path


def test_run_populates_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    assert main(["run", "--config", str(write_cfg(tmp_path))]) == 0
    out = tmp_path / "run"
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "round,client_id,loss,accuracy,samples"
    assert len(lines) == 1 + 2 * (2 + 1)       # header + rounds * (clients+1)
    assert {line.split(",")[1] for line in lines[1:]} == {"0", "1", "SERVER"}
    assert (out / "state_epoch0002.bin").exists()
    m = load_manifest(out)
    assert m.status == "complete"
    assert m.completed_rounds == 2
    assert check_files(out, m) == []
    assert "partition.num_clients = 2" in m.config_text


def test_rerun_of_complete_run_is_a_no_op(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    cfg_path = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg_path)]) == 0
    before = (tmp_path / "run" / "metrics.csv").read_bytes()
    assert main(["run", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "run" / "metrics.csv").read_bytes() == before


def test_metrics_are_byte_identical_across_reruns(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path, "a.cfg", out="a"))])
    main(["run", "--config", str(write_cfg(tmp_path, "b.cfg", out="b"))])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
        (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "state_latest.bin").read_bytes() == \
        (tmp_path / "b" / "state_latest.bin").read_bytes()


def test_conflicting_config_in_same_dir_is_refused(tmp_path, monkeypatch,
                                                   capsys):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path, "a.cfg"))])
    other = write_cfg(tmp_path, "b.cfg", rounds=3, snaps="2")
    assert main(["run", "--config", str(other)]) == 2
    assert "different config" in capsys.readouterr().err


def test_interrupted_run_resumes_to_identical_state(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    full_cfg = parse_config_text(
        CFG.format(out=str(tmp_path / "full"), rounds=4, snaps="2,4"))
    int_cfg = parse_config_text(
        CFG.format(out=str(tmp_path / "interrupted"), rounds=4, snaps="2,4"))
    cmd_run(full_cfg)

    orig = engine_mod.FederatedEngine.run_round
    calls = {"n": 0}

    def crashing(self, r):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("injected crash")
        return orig(self, r)

    monkeypatch.setattr(engine_mod.FederatedEngine, "run_round", crashing)
    with pytest.raises(RunnerError, match="injected"):
        cmd_run(int_cfg)
    monkeypatch.setattr(engine_mod.FederatedEngine, "run_round", orig)

    m = load_manifest(tmp_path / "interrupted")
    assert m.status == "aborted"
    assert m.completed_rounds == 2
    assert any("injected crash" in note for note in m.notes)

    cmd_run(int_cfg)
    assert load_manifest(tmp_path / "interrupted").status == "complete"
    for name in ("metrics.csv", "state_latest.bin", "state_epoch0004.bin"):
        assert (tmp_path / "full" / name).read_bytes() == \
            (tmp_path / "interrupted" / name).read_bytes()


def test_analyze_writes_similarity_products(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path))])
    assert main(["analyze", "run"]) == 0
    out = tmp_path / "run"
    csv_path = out / "same_layer_epoch0002.csv"
    pgm_path = out / "same_layer_epoch0002.pgm"
    assert csv_path.exists() and pgm_path.exists()
    assert (out / "cross_model_client000_epoch0002.csv").exists()
    assert (out / "cross_model_client001_epoch0002.pgm").exists()

    matrix = CkaMatrix.from_csv(csv_path.read_text())
    assert matrix.row_names == ("client0", "client1")
    assert matrix.col_names == ("hidden_0",)
    # re-rendering the parsed CSV reproduces the heatmap byte for byte
    assert matrix.to_pgm() == pgm_path.read_bytes()

    overall = CkaMatrix.from_csv((out / "overall_epoch0002.csv").read_text())
    assert overall.row_names == ("client0", "client1", "server")
    assert overall.row_names == overall.col_names
    assert np.all(np.abs(np.diag(overall.values) - 1.0) < 1e-10)

    m = load_manifest(out)
    assert "same_layer_epoch0002.csv" in m.files
    assert "overall_epoch0002.pgm" in m.files
    assert check_files(out, m) == []


def test_analyze_overall_capture_flag(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path))])
    assert main(["analyze", "run", "--overall-capture", "hidden_0"]) == 0
    assert main(["analyze", "run", "--overall-capture", "nope"]) == 2
    assert "capture point" in capsys.readouterr().err


def test_analyze_missing_epoch_names_it(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path))])
    assert main(["analyze", "run", "--epochs", "20"]) == 2
    err = capsys.readouterr().err
    assert "epoch 20" in err


def test_analyze_client_subset_and_bad_client(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path))])
    assert main(["analyze", "run", "--clients", "1"]) == 0
    assert not (tmp_path / "run" / "cross_model_client000_epoch0002.csv").exists()
    assert (tmp_path / "run" / "cross_model_client001_epoch0002.csv").exists()
    assert main(["analyze", "run", "--clients", "5"]) == 2
    assert "client 5" in capsys.readouterr().err


def test_analyze_without_run_dir_fails_cleanly(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    assert main(["analyze", "nowhere"]) == 2
    assert "manifest" in capsys.readouterr().err


def test_verify_reports_and_mutation_hook(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "suite=hsic-oracle passed=100 failed=0" in out
    assert "suite=gradient-checks" in out
    assert "suite=aggregation-exactness" in out
    assert "suite=partition-invariants" in out
    assert "verify=PASS" in out

    assert main(["verify", "--hsic-pair-coeff", "2.5"]) == 1
    out = capsys.readouterr().out
    assert "verify=FAIL" in out
    assert "suite=hsic-oracle passed=0 failed=100" in out


def test_export_bundles_and_checks_integrity(tmp_path, monkeypatch, capsys):
    import tarfile

    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path))])
    assert main(["export", "run"]) == 0
    archive = tmp_path / "run" / "export.tar"
    with tarfile.open(archive) as tar:
        names = set(tar.getnames())
    assert "manifest.json" in names
    assert "metrics.csv" in names
    assert "state_epoch0002.bin" in names

    (tmp_path / "run" / "metrics.csv").write_text("tampered\n")
    assert main(["export", "run"]) == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_export_archives_are_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDSCOPE_OUTPUT_ROOT", str(tmp_path))
    main(["run", "--config", str(write_cfg(tmp_path))])
    assert main(["export", "run", "--output", str(tmp_path / "one.tar")]) == 0
    assert main(["export", "run", "--output", str(tmp_path / "two.tar")]) == 0
    assert (tmp_path / "one.tar").read_bytes() == (tmp_path / "two.tar").read_bytes()
