import csv
import subprocess
import sys

import numpy as np
import pytest

from geowarp import io
from geowarp.camera import CameraIntrinsics
from geowarp.cli import main
from geowarp.synthetic import render_plane_pair

K = CameraIntrinsics(48.0, 48.0, 23.5, 23.5)
POSE = "0.01 -0.005 0.008 0.01 0.005 -0.01"


@pytest.fixture
def files(tmp_path):
    img, _, depth = render_plane_pair((48, 48), K, np.zeros(6), seed=3, freq=(10.0, 40.0), n_waves=12)
    io.write_image(img, tmp_path / "base.pgm", 65535)
    io.write_depth(depth, tmp_path / "depth.pfm")
    (tmp_path / "K.txt").write_text(K.to_string() + "\n")
    return tmp_path


def test_gradcheck_so3_five_lines(capsys):
    assert main(["gradcheck", "--module", "so3", "--trials", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    for line in lines:
        err = float(line.split("max_rel_err=")[1].split()[0])
        assert err < 1e-6 and line.endswith("PASS")


def test_gradcheck_failure_exit_code(capsys):
    assert main(["gradcheck", "--module", "robust", "--trials", "1", "--tol", "1e-30"]) == 3


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["gradcheck", "--bogus"],
                                  ["align", "--ref", "a.pgm"], ["gradcheck", "--module", "nope"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_error_exit_1(files, capsys):
    code = main(["warp", "--image", str(files / "missing.pgm"), "--depth", str(files / "depth.pfm"),
                 "--pose", POSE, "--intrinsics", str(files / "K.txt"), "--out", str(files / "o.pgm")])
    assert code == 1
    captured = capsys.readouterr()
    assert "missing.pgm" in captured.err and captured.out == ""


def test_warp_identity(files, capsys):
    out = files / "w.pgm"
    assert main(["warp", "--image", str(files / "base.pgm"), "--depth", str(files / "depth.pfm"),
                 "--pose", "0 0 0 0 0 0", "--intrinsics", str(files / "K.txt"), "--out", str(out)]) == 0
    warped = io.read_image(out)
    base = io.read_image(files / "base.pgm")
    assert np.max(np.abs(warped[1:-1, 1:-1] - base[1:-1, 1:-1])) <= 1 / 510 + 1e-12
    assert io.read_image(files / "w_mask.pgm")[1:-1, 1:-1].min() == 1.0


def test_synth_then_align_recovers_pose(files, capsys):
    assert main(["synth", "--image", str(files / "base.pgm"), "--depth", str(files / "depth.pfm"),
                 "--pose", POSE, "--intrinsics", str(files / "K.txt"), "--out-dir", str(files / "s")]) == 0
    capsys.readouterr()
    s = files / "s"
    assert main(["align", "--ref", str(s / "ref.pgm"), "--live", str(s / "live.pgm"), "--depth", str(s / "depth.pfm"),
                 "--intrinsics", str(s / "intrinsics.txt"), "--mode", "se3", "--max-iters", "400",
                 "--out-dir", str(files / "a")]) == 0
    pose = io.parse_pose(capsys.readouterr().out.strip())
    truth = io.parse_pose(str(s / "pose.txt"))
    assert np.linalg.norm(pose[:3] - truth[:3]) < np.deg2rad(0.05)
    assert np.linalg.norm(pose[3:] - truth[3:]) < 0.05 * np.linalg.norm(truth[3:])
    with open(files / "a" / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "cost", "step", "valid_fraction"]
    costs = [float(r[1]) for r in rows[1:]]
    assert [int(r[0]) for r in rows[1:]] == list(range(len(costs)))
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    residuals = sorted(p.name for p in (files / "a").glob("residual_*.pgm"))
    assert residuals[0] == "residual_0000.pgm" and "residual_0010.pgm" in residuals
    assert residuals[-1] == f"residual_{len(costs) - 1:04d}.pgm"
    assert (files / "a" / "pose.txt").read_text().strip() == io.format_pose(pose)


def test_align_live_equals_ref(files, capsys):
    b = str(files / "base.pgm")
    assert main(["align", "--ref", b, "--live", b, "--intrinsics", str(files / "K.txt"),
                 "--mode", "so3", "--out-dir", str(files / "same")]) == 0
    pose = io.parse_pose(capsys.readouterr().out.strip())
    assert np.max(np.abs(pose)) < 1e-6


def test_align_requires_depth_in_se3(files, capsys):
    b = str(files / "base.pgm")
    assert main(["align", "--ref", b, "--live", b, "--intrinsics", str(files / "K.txt"),
                 "--mode", "se3", "--out-dir", str(files / "x")]) == 1
    assert "depth" in capsys.readouterr().err


def test_outputs_byte_identical_across_runs(files, capsys):
    for run in ("1", "2"):
        assert main(["synth", "--image", str(files / "base.pgm"), "--depth", str(files / "depth.pfm"),
                     "--pose", POSE, "--intrinsics", str(files / "K.txt"), "--noise", "0.02", "--seed", "7",
                     "--out-dir", str(files / f"s{run}")]) == 0
        s = files / f"s{run}"
        assert main(["align", "--ref", str(s / "ref.pgm"), "--live", str(s / "live.pgm"),
                     "--depth", str(s / "depth.pfm"), "--intrinsics", str(s / "intrinsics.txt"),
                     "--mode", "se3", "--loss", "huber", "--loss-scale", "0.05", "--levels", "2",
                     "--out-dir", str(files / f"a{run}")]) == 0
    for d in ("s", "a"):
        names = sorted(p.name for p in (files / f"{d}1").iterdir())
        assert names == sorted(p.name for p in (files / f"{d}2").iterdir())
        for name in names:
            assert (files / f"{d}1" / name).read_bytes() == (files / f"{d}2" / name).read_bytes(), name


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "geowarp", "gradcheck", "--module", "sampler", "--trials", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and len(proc.stdout.splitlines()) == 2
    proc = subprocess.run([sys.executable, "-m", "geowarp", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
