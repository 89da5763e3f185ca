import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from alipp import export, kernels
from alipp.mission import read_curve
from alipp.terrain import Pose

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_raster_roundtrip_is_exact(tmp_path, raster):
    export.write_raster(tmp_path / "t.raster", raster)
    back = export.read_raster(tmp_path / "t.raster")
    np.testing.assert_array_equal(back.labels, raster.labels)
    np.testing.assert_array_equal(back.appearance, raster.appearance)
    assert (back.resolution_m, back.num_classes) == (raster.resolution_m, raster.num_classes)


@pytest.mark.parametrize("text", ["hello\n", "ALIPP-RASTER 2\n1 1 2 1 1.0\n0\n0.5\n", "ALIPP-RASTER 1\n1 1 2 1 1.0\n0\n"])
def test_raster_format_errors(tmp_path, text):
    (tmp_path / "bad.raster").write_text(text)
    with pytest.raises(export.RasterFormatError):
        export.read_raster(tmp_path / "bad.raster")


def test_path_csv_roundtrip(tmp_path):
    poses = [Pose(1.5, 2.25), Pose(10.0 / 3, 4.0)]
    export.write_path_csv(tmp_path / "p.csv", poses, [0.0, 1.0 / 7])
    rows = export.read_path_csv(tmp_path / "p.csv")
    assert rows == [{"t": 0, "x": 1.5, "y": 2.25, "z": 30.0, "leg_cost": 0.0},
                    {"t": 1, "x": 10.0 / 3, "y": 4.0, "z": 30.0, "leg_cost": 1.0 / 7}]


def test_png_colours_and_path_overlay(tmp_path, raster):
    unexplored = np.zeros(raster.labels.shape, bool)
    unexplored[:4] = True
    rgb = export.label_rgb(raster.labels, unexplored)
    export.save_png(tmp_path / "m.png", rgb, scale=1)
    img = np.asarray(Image.open(tmp_path / "m.png"))
    assert img.shape == raster.labels.shape + (3,)
    assert tuple(img[0, 0]) == export.UNEXPLORED
    np.testing.assert_array_equal(img[10, 10], export.CLASS_COLORS[raster.labels[10, 10]])

    export.save_png(tmp_path / "p.png", np.zeros((40, 40, 3), np.uint8), [(10.0, 30.0), (30.0, 30.0)], 1.0, 2)
    img = np.asarray(Image.open(tmp_path / "p.png"))
    # the leg runs along y = 30 m, i.e. image row 60 at scale 2
    assert tuple(img[60, 40]) == export.PATH_COLOR
    assert not img[10].any()


def test_heat_ramp_ends():
    rgb = export.heat_rgb(np.array([[0.0, 0.5, 1.0, 2.0]]))
    assert rgb[0].tolist() == [[0, 0, 0], [255, 0, 0], [255, 255, 0], [255, 255, 0]]


def test_backend_flag_selects_numpy_and_agrees(tmp_path):
    env = {**os.environ, "ALIPP_DISABLE_NUMBA": "1"}
    probe = subprocess.run([sys.executable, "-c", "from alipp import kernels; print(kernels.BACKEND)"],
                           env=env, capture_output=True, text=True, check=True)
    assert probe.stdout.strip() == "numpy"
    runs = {}
    for label, extra in (("default", {}), ("numpy", {"ALIPP_DISABLE_NUMBA": "1"})):
        out = tmp_path / label
        subprocess.run([sys.executable, "-m", "alipp.cli", "run", "--config", str(CONFIGS / "small.yaml"),
                        "--out", str(out)], env={**os.environ, **extra}, check=True, capture_output=True)
        runs[label] = read_curve(out / "learning_curve.csv")
    assert runs["default"].column("num_labeled_images").tolist() == runs["numpy"].column("num_labeled_images").tolist()
    for name in ("accuracy", "miou", "ece", "spent_budget_s"):
        np.testing.assert_allclose(runs["default"].column(name), runs["numpy"].column(name), rtol=1e-9, atol=1e-12)
    assert kernels.BACKEND in ("numba", "numpy")
