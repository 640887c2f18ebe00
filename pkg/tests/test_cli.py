import csv

import pytest

from mwnet.cli import main
from mwnet.model import load_model
from mwnet.synth import read_dataset

TINY_CFG = """num_stages = 2
channels = 4, 6
blocks = 1, 1
decoder_width = 4
section_length = 3
checkpoint_every = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY_CFG)
    assert main(["generate", "--out", str(root / "data"), "--videos", "2", "--frames", "4",
                 "--size", "32", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(workspace):
    ckpt = workspace / "run" / "model.ckpt"
    assert main(["train", "--data", str(workspace / "data"), "--config",
                 str(workspace / "tiny.cfg"), "--out", str(ckpt), "--steps", "3"]) == 0
    return ckpt


def test_check_reconstruction_exits_zero(capsys):
    assert main(["check", "--suite", "reconstruction"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_generate_layout(workspace):
    train = read_dataset(workspace / "data" / "train")
    test = read_dataset(workspace / "data" / "test")
    assert len(train) == 2 and len(test) == 1
    assert train[0].frames.shape == (4, 32, 32)
    assert (workspace / "data" / "train" / "video0000" / "meta.txt").exists()


def test_train_then_eval(workspace, checkpoint):
    ckpt = checkpoint
    assert load_model(ckpt).cfg.resolution == 32
    for suffix in (".loss.csv", ".loss.png"):
        assert ckpt.with_suffix(suffix).stat().st_size > 0
    report = workspace / "run" / "report.csv"
    dump = workspace / "run" / "masks"
    assert main(["eval", "--data", str(workspace / "data"), "--ckpt", str(ckpt),
                 "--report", str(report), "--dump-masks", str(dump)]) == 0
    rows = list(csv.DictReader(report.open()))
    assert [r["video"] for r in rows] == ["video0000", "aggregate"]
    assert all(0.0 <= float(rows[-1][k]) <= 1.0 for k in ("dsc", "iou", "mae"))
    assert len(list(csv.DictReader(report.with_suffix(".frames.csv").open()))) == 4
    for suffix in (".dsc.png", ".overlay.png"):
        assert report.with_suffix(suffix).read_bytes()[:4] == b"\x89PNG"
    assert len(list((dump / "video0000").glob("pred_*.pgm"))) == 4


def test_train_flags_select_variant(workspace):
    for flag, key, want in (("--no-memory", "memory", False), ("--no-hff", "hff", False)):
        ckpt = workspace / f"{key}.ckpt"
        assert main(["train", "--data", str(workspace / "data"), "--config",
                     str(workspace / "tiny.cfg"), "--out", str(ckpt), "--steps", "1",
                     flag]) == 0
        assert getattr(load_model(ckpt).cfg, key) is want


def test_basis_flag_gives_two_eval_rows(workspace, capsys):
    dscs = []
    for basis in ("haar", "adaptive"):
        ckpt = workspace / f"{basis}.ckpt"
        assert main(["train", "--data", str(workspace / "data"), "--config",
                     str(workspace / "tiny.cfg"), "--out", str(ckpt), "--steps", "1",
                     "--basis", basis]) == 0
        assert load_model(ckpt).cfg.basis == basis
        report = workspace / f"{basis}.csv"
        assert main(["eval", "--data", str(workspace / "data"), "--ckpt", str(ckpt),
                     "--report", str(report)]) == 0
        dscs.append(list(csv.DictReader(report.open()))[-1]["dsc"])
    assert len(dscs) == 2


def test_ablate_writes_table_and_figure(workspace):
    out = workspace / "ablate.csv"
    assert main(["ablate", "--data", str(workspace / "data"), "--config",
                 str(workspace / "tiny.cfg"), "--out", str(out), "--steps", "1"]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["variant"] for r in rows] == ["plainconv", "wtconv", "wtconv+memory",
                                            "wtconv+memory+hff"]
    assert out.with_suffix(".png").exists()


def test_unknown_flag_is_usage_error(capsys):
    assert main(["train", "--bogus"]) == 2
    assert main([]) == 2


def test_runtime_errors_return_one(tmp_path, capsys):
    assert main(["eval", "--data", str(tmp_path), "--ckpt", str(tmp_path / "none.ckpt"),
                 "--report", str(tmp_path / "r.csv")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("mwnet eval: error:")
    (tmp_path / "bad.cfg").write_text("nonsense = 1\n")
    assert main(["train", "--data", str(tmp_path), "--config", str(tmp_path / "bad.cfg"),
                 "--out", str(tmp_path / "m.ckpt")]) == 1
    assert "unknown key" in capsys.readouterr().err


def test_resolution_mismatch_is_reported(checkpoint, tmp_path, capsys):
    ckpt = checkpoint
    assert main(["generate", "--out", str(tmp_path / "big"), "--videos", "1", "--frames", "2",
                 "--size", "64", "--heldout", "1"]) == 0
    assert main(["eval", "--data", str(tmp_path / "big"), "--ckpt", str(ckpt),
                 "--report", str(tmp_path / "r.csv")]) == 1
    assert "resolution" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "mwnet", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "generate" in res.stdout
