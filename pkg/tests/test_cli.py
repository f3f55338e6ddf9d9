import subprocess
import sys

import numpy as np
import pytest

from hybridseg import cli
from hybridseg.data import load_dataset, synth_scene
from hybridseg.heads import UNKNOWN
from hybridseg.pnm import read_segmap, write_segmap

CONFIG = """\
# small recipe for CLI tests
base_lr=0.1
epochs=2
lr_drop_epochs=1
patch=32
stride=32
model.unet_widths=8,12,16,24
model.unet_depths=1,1,1,1
model.feature_channels=16
model.tr_stem=8
model.tr_widths=8,12,16
model.n_f=16
model.layers=1
model.head_layers=1
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth-data", "--out", str(root / "data"), "--scenes", "2", "--seed", "4"]) == 0
    (root / "cfg.txt").write_text(CONFIG)
    assert cli.main(["train", "--config", str(root / "cfg.txt"), "--data", str(root / "data"),
                     "--out", str(root / "run")]) == 0
    return root


def test_synth_data_layout(workspace):
    scenes = load_dataset(workspace / "data")
    assert len(scenes) == 2
    for s in scenes:
        assert sorted(p.name for p in (workspace / "data" / s.id).iterdir()) == ["dsm.pgm", "image.ppm", "labels.pgm"]


def test_patchify(workspace, capsys):
    assert cli.main(["patchify", "--in", str(workspace / "data"), "--out", str(workspace / "patches"),
                     "--patch", "32", "--stride", "16"]) == 0
    assert "wrote 18 patches" in capsys.readouterr().out
    patches = load_dataset(workspace / "patches")
    assert patches[0].shape == (32, 32) and patches[0].id.endswith("_r0000_c0000")


def test_train_outputs(workspace):
    names = {p.name for p in (workspace / "run").iterdir()}
    assert {"model.ckpt", "last.ckpt", "history.json"} <= names


def test_predict_and_eval(workspace, capsys):
    scene = sorted((workspace / "data").iterdir())[0]
    out = workspace / "pred.pgm"
    assert cli.main(["predict", "--ckpt", str(workspace / "run" / "model.ckpt"), "--scene", str(scene),
                     "--out", str(out)]) == 0
    labels = read_segmap(out)
    assert labels.shape == (64, 64) and not (labels == UNKNOWN).any()
    rep = workspace / "report.txt"
    assert cli.main(["eval", "--ckpt", str(workspace / "run" / "model.ckpt"), "--data", str(workspace / "data"),
                     "--report", str(rep)]) == 0
    text = rep.read_text()
    assert text.startswith("overall_accuracy ") and text in capsys.readouterr().out
    assert (workspace / "report.csv").read_text().startswith("class,f1\n")


def test_inpaint(tmp_path):
    seg = np.full((5, 5), UNKNOWN, dtype=np.uint8)
    seg[0, 0], seg[4, 4] = 1, 3
    write_segmap(tmp_path / "in.pgm", seg)
    assert cli.main(["inpaint", "--in", str(tmp_path / "in.pgm"), "--out", str(tmp_path / "out.pgm")]) == 0
    out = read_segmap(tmp_path / "out.pgm")
    assert out[1, 0] == 1 and out[3, 4] == 3 and not (out == UNKNOWN).any()


def test_gradcheck_pass(capsys):
    assert cli.main(["gradcheck", "--module", "softmax", "--seed", "1"]) == 0
    assert capsys.readouterr().out.rstrip().endswith("PASS")


def test_gradcheck_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_case", lambda name, seed: (1.0, 1e-6))
    assert cli.main(["gradcheck", "--module", "softmax"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["gradcheck", "--module", "nope"])
    assert exc.value.code == 1
    assert cli.main(["predict", "--ckpt", str(tmp_path / "missing.ckpt"), "--scene", str(tmp_path),
                     "--out", str(tmp_path / "x.pgm")]) == 1
    (tmp_path / "bad.txt").write_text("nonsense_key=3\n")
    assert cli.main(["train", "--config", str(tmp_path / "bad.txt"), "--data", str(tmp_path),
                     "--out", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err


def test_all_unknown_inpaint_is_usage_error(tmp_path):
    write_segmap(tmp_path / "u.pgm", np.full((3, 3), UNKNOWN, dtype=np.uint8))
    assert cli.main(["inpaint", "--in", str(tmp_path / "u.pgm"), "--out", str(tmp_path / "o.pgm")]) == 1


def test_divergence_exit_code(workspace, tmp_path):
    cfg = CONFIG.replace("base_lr=0.1", "base_lr=1e12").replace("epochs=2", "epochs=8")
    (tmp_path / "hot.txt").write_text(cfg)
    with np.errstate(all="ignore"):
        code = cli.main(["train", "--config", str(tmp_path / "hot.txt"), "--data", str(workspace / "data"),
                         "--out", str(tmp_path / "run")])
    assert code == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "hybridseg.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout
