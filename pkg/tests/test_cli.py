import csv
import json
import math
import subprocess
import sys

import pytest

from claysplat.cli import main
from claysplat.imageio import read_pfm
from claysplat.optimize.train import LOG_COLUMNS


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    code = main(["make-scene", "--shape", "sphere", "--preset", "mirror", "--views", "4", "--res", "16",
                 "--gaussians", "128", "--seed", "7", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def short_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "short.cfg"
    path.write_text("t_clay = 3\nt_total = 6\n", encoding="utf-8")
    return path


def _manifest(out):
    return json.loads((out / "run.json").read_text(encoding="utf-8"))


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "make-scene" in capsys.readouterr().out


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "claysplat.cli", "train", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "--stop-after-clay" in proc.stdout


def test_train_without_scene_is_usage_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 2
    assert "--scene" in capsys.readouterr().err


def test_unknown_flag_names_offending_token(tmp_path, capsys):
    assert main(["render", "--scene", "x", "--out", str(tmp_path), "--bogus-flag"]) == 2
    assert "--bogus-flag" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error():
    assert main([]) == 2


def test_missing_scene_file_is_domain_error(tmp_path, capsys):
    assert main(["train", "--scene", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 1
    assert "nowhere" in capsys.readouterr().err


def test_bad_thread_setting_is_usage_error(tmp_path, monkeypatch):
    monkeypatch.setenv("CLAYSPLAT_THREADS", "-3")
    assert main(["precompute-lut", "--res", "4", "--samples", "16", "--out", str(tmp_path)]) == 2


def test_precompute_lut(tmp_path):
    assert main(["precompute-lut", "--res", "16", "--samples", "64", "--out", str(tmp_path)]) == 0
    lut = read_pfm(tmp_path / "lut.pfm")
    assert lut.shape == (16, 16, 3)
    assert ((lut[..., :2] >= 0) & (lut[..., :2] <= 1)).all()
    assert "lut.pfm" in _manifest(tmp_path)["outputs"]


def test_make_scene_writes_bundle(bundle_dir):
    for name in ("scene.cspl", "init.cspl", "env.pfm", "cameras.json", "gt.ply", "views/rgb_003.png",
                 "views/clay_000.pfm", "views/mask_002.pfm", "run.json"):
        assert (bundle_dir / name).is_file(), name
    manifest = _manifest(bundle_dir)
    assert manifest["command"] == "make-scene" and manifest["seed"] == 7
    assert set(manifest["versions"]) >= {"claysplat", "python", "torch", "numpy"}


def test_make_scene_is_byte_reproducible(bundle_dir, tmp_path):
    argv = ["make-scene", "--shape", "sphere", "--preset", "mirror", "--views", "4", "--res", "16",
            "--gaussians", "128", "--seed", "7", "--out", str(tmp_path)]
    assert main(argv) == 0
    assert _manifest(tmp_path)["outputs"] == _manifest(bundle_dir)["outputs"]


def test_render_with_clay(bundle_dir, tmp_path):
    assert main(["render", "--scene", str(bundle_dir), "--views", "2", "--res", "12", "--clay", "--out", str(tmp_path)]) == 0
    outputs = _manifest(tmp_path)["outputs"]
    assert any(name.startswith("clay_") for name in outputs)
    assert any(name.startswith("render_") for name in outputs)


def test_train_and_eval(bundle_dir, short_config, tmp_path):
    train_out = tmp_path / "train"
    argv = ["train", "--scene", str(bundle_dir), "--variant", "ptrn", "--config", str(short_config),
            "--seed", "2", "--out", str(train_out)]
    assert main(argv) == 0
    with open(train_out / "loss.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and list(rows[0]) == list(LOG_COLUMNS)
    assert rows[2]["L_clay"] != "" and rows[3]["L_clay"] == ""
    manifest = _manifest(train_out)
    assert manifest["config"]["variant"] == "ptrn" and manifest["seed"] == 2
    assert set(manifest["outputs"]) == {"scene.cspl", "env.pfm", "loss.csv"}

    eval_out = tmp_path / "eval"
    assert main(["eval", "--scene", str(train_out), "--out", str(eval_out)]) == 0
    metrics = json.loads((eval_out / "metrics.json").read_text(encoding="utf-8"))
    assert metrics["chamfer_l1"] >= 0 and 0 <= metrics["normal_mae"] <= 180
    assert math.isfinite(metrics["psnr"])

    stopped = tmp_path / "stopped"
    assert main(argv[:-2] + ["--stop-after-clay", "true", "--out", str(stopped)]) == 0
    assert len((stopped / "loss.csv").read_text(encoding="utf-8").splitlines()) == 1 + 3


def test_train_is_reproducible(bundle_dir, short_config, tmp_path):
    hashes = []
    for run in ("a", "b"):
        argv = ["train", "--scene", str(bundle_dir / "init.cspl"), "--config", str(short_config),
                "--clay-sigma", "0.05", "--out", str(tmp_path / run)]
        assert main(argv) == 0
        hashes.append(_manifest(tmp_path / run)["outputs"])
    assert hashes[0] == hashes[1]


def test_eval_without_data_is_usage_error(bundle_dir, tmp_path):
    assert main(["eval", "--scene", str(bundle_dir / "scene.cspl"), "--out", str(tmp_path)]) == 2


def test_ablate_three_variants(bundle_dir, short_config, tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["ablate", "--variants", "none,p,ptr", "--scene", str(bundle_dir), "--config", str(short_config),
                     "--out", str(out)]) == 0
        outs.append(out)
    with open(outs[0] / "ablation.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["none", "p", "ptr"]
    assert list(rows[0]) == ["variant", "chamfer_l1", "normal_mae", "final_L_rgb"]
    assert all(math.isfinite(float(r["chamfer_l1"])) for r in rows)
    assert (outs[0] / "ablation.csv").read_bytes() == (outs[1] / "ablation.csv").read_bytes()
    assert _manifest(outs[0])["outputs"] == _manifest(outs[1])["outputs"]


def test_ablate_single_variant_on_generated_fixture(short_config, tmp_path):
    assert main(["ablate", "--variants", "ptr+smooth", "--views", "4", "--res", "12", "--config", str(short_config),
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2 and lines[1].startswith("ptr+smooth,")


def test_ablate_rejects_unknown_variant(tmp_path):
    assert main(["ablate", "--variants", "none,xyz", "--out", str(tmp_path)]) == 1
