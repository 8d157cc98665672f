import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from sparseview import io
from sparseview.cli import main
from sparseview.metrics import PSNR_CEILING


def _tree(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "timings.json"}


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "run"
    assert main(["pipeline", "--preset", "plane3view", "--out", str(out), "--seed", "3", "--threads", "1"]) == 0
    return out


def _err(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(line)


def test_pipeline_layout(pipeline_out):
    for d in ("synth", "depth", "align", "warp", "fuse", "occlusion", "eval"):
        assert (pipeline_out / d).is_dir()
    man = json.loads((pipeline_out / "manifest.json").read_text())
    assert [s["name"] for s in man["stages"]] == [
        "synth", "estimate-depth", "align", "warp", "fuse", "occlusion-mask", "eval"]
    assert man["seed"] == 3
    timings = json.loads((pipeline_out / "timings.json").read_text())
    assert set(timings) >= {"synth", "eval"}
    rep = json.loads((pipeline_out / "eval" / "report.json").read_text())
    assert all(v["pcc"] > 0.99 for v in rep["depth"].values())


def test_pipeline_deterministic(pipeline_out, tmp_path):
    again = tmp_path / "again"
    assert main(["pipeline", "--preset", "plane3view", "--out", str(again), "--seed", "3", "--threads", "4"]) == 0
    a, b = _tree(pipeline_out), _tree(again)
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


def test_eval_self(tmp_path, capsys, rng):
    img = rng.integers(0, 256, (20, 24, 3)).astype(np.uint8)
    io.write_png(tmp_path / "a.png", img)
    assert main(["eval", "--image", str(tmp_path / "a.png"), "--reference", str(tmp_path / "a.png"),
                 "--out", str(tmp_path / "e")]) == 0
    rep = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rep["l1"] == 0.0 and rep["ssim"] == pytest.approx(1.0) and rep["psnr"] == PSNR_CEILING
    assert rep["lpips"] == "unavailable"


def test_estimate_depth_empty(tmp_path, capsys, pipeline_out):
    (tmp_path / "m").mkdir()
    code = main(["estimate-depth", "--rig", str(pipeline_out / "synth" / "rig.json"),
                 "--matches", str(tmp_path / "m"), "--out", str(tmp_path / "o")])
    assert code == 2 and _err(capsys)["error"] == "EmptyMatchGraph"


@pytest.mark.parametrize("flag,value", [("--d-nn", "0"), ("--iterations", "0"), ("--n-slices", "1"),
                                        ("--k-fuse", "0"), ("--outlier-fraction", "1.5"), ("--seed", "-1")])
def test_config_out_of_range(tmp_path, capsys, flag, value):
    code = main(["pipeline", "--preset", "plane3view", "--out", str(tmp_path / "o"), flag, value])
    err = _err(capsys)
    assert code == 2 and err["error"] == "ConfigOutOfRange" and err["flag"] == flag


def test_missing_input(tmp_path, capsys):
    code = main(["align", "--rig", str(tmp_path / "rig.json"), "--depth-field", str(tmp_path / "f.csv"),
                 "--mono", str(tmp_path), "--out", str(tmp_path / "o")])
    assert code == 2 and _err(capsys)["error"] == "MissingInput"


def test_stagewise_matches_pipeline(pipeline_out, tmp_path):
    s = pipeline_out / "synth"
    assert main(["estimate-depth", "--rig", str(s / "rig.json"), "--matches", str(s / "matches"),
                 "--out", str(tmp_path / "depth")]) == 0
    a = (tmp_path / "depth" / "depth_field.csv").read_bytes()
    assert a == (pipeline_out / "depth" / "depth_field.csv").read_bytes()
    assert main(["occlusion-mask", "--rig", str(s / "rig.json"), "--images", str(s / "images"),
                 "--depths", str(pipeline_out / "align"), "--out", str(tmp_path / "occ")]) == 0
    for p in (pipeline_out / "occlusion").glob("*.png"):
        assert (tmp_path / "occ" / p.name).read_bytes() == p.read_bytes()


def test_console_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparseview.cli", "synth", "--preset", "occluder-square",
                           "--count", "50", "--out", str(tmp_path / "s")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "s" / "rig.json").exists()
    proc = subprocess.run([sys.executable, "-m", "sparseview.cli", "synth", "--preset", "nope",
                           "--out", str(tmp_path / "t")], capture_output=True, text=True)
    assert proc.returncode == 2 and "error" in json.loads(proc.stderr.strip())
