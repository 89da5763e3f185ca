import csv
import hashlib
from pathlib import Path

import numpy as np
import pytest
import yaml

from alipp.cli import aggregate, common_grid, load_sweep, main
from alipp.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
from alipp.mission import CurveRow, LearningCurve

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
MINIMAL = "seed: 0\nplanner:\n  kind: coverage\nmission:\n  num_missions: 1\n  budget_s: 60\n"


def test_minimal_config_takes_defaults():
    cfg = parse_config(MINIMAL)
    ref = ExperimentConfig()
    assert cfg.terrain == ref.terrain and cfg.camera == ref.camera
    assert cfg.planner.kind == "coverage" and cfg.planner.step_m == ref.planner.step_m
    assert cfg.mission.budget_s == 60.0 and cfg.mission.num_missions == 1


def test_dump_roundtrip():
    for name in ("small.yaml", "default.yaml"):
        cfg = load_config(CONFIGS / name)
        assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("extra, where, fragment", [
    ("mapping:\n  prior_var: 1.5\n", 8, "prior_var"),
    ("model:\n  dropout: 1.0\n", 8, "dropout"),
    ("camera:\n  width_px: 400\n", 7, "footprint"),
    ("planner2: 3\n", 7, "unknown key planner2"),
    ("model:\n  epochs: ten\n", 8, "must be an integer"),
])
def test_invalid_configs_name_the_line(extra, where, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + extra, "x.yaml")
    assert any(v.startswith(f"x.yaml:{where}:") and fragment in v for v in info.value.violations)


def test_missing_required_key_and_multiple_errors():
    text = "seed: 0\nplanner:\n  kind: coverage\nmission:\n  num_missions: 1\nmodel:\n  dropout: 2\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert len(info.value.violations) == 2
    assert any("missing required key mission.budget_s" in v for v in info.value.violations)


def test_yaml_syntax_error():
    with pytest.raises(ConfigError, match="YAML syntax error"):
        parse_config("seed: [0\n")


# -- CLI -------------------------------------------------------------------------

def _write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", str(CONFIGS / "small.yaml")]) == 0
    assert yaml.safe_load(capsys.readouterr().out)["planner"]["kind"] == "fixed_horizon"
    assert main(["validate", "--config", str(_write(tmp_path, MINIMAL + "mapping:\n  prior_var: 1.5\n"))]) == 2
    assert "prior_var" in capsys.readouterr().err
    assert main(["validate", "--config", str(_write(tmp_path, MINIMAL + "camera:\n  width_px: 400\n"))]) == 2
    assert main(["validate", "--config", str(_write(tmp_path, "seed: 0\n"))]) == 2
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert main(["frobnicate"]) == 2


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_run_is_byte_reproducible_and_leaves_config_untouched(tmp_path, capsys):
    cfg = CONFIGS / "small.yaml"
    before = _digest(cfg)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert capsys.readouterr().out.strip().endswith("learning_curve.csv")
    assert main(["run", "--config", str(tmp_path / "a" / "config_resolved.yaml"), "--out", str(tmp_path / "b")]) == 0
    assert _digest(tmp_path / "a" / "learning_curve.csv") == _digest(tmp_path / "b" / "learning_curve.csv")
    assert _digest(cfg) == before


def test_run_seed_override(tmp_path):
    assert main(["run", "--config", str(CONFIGS / "small.yaml"), "--out", str(tmp_path), "--seed-override", "9"]) == 0
    assert load_config(tmp_path / "config_resolved.yaml").seed == 9


def _sweep_file(tmp_path, planners, seeds, out="runs"):
    return _write(tmp_path, yaml.safe_dump({"base_config": str(CONFIGS / "small.yaml"), "planners": planners,
                                            "seeds": seeds, "out_root": out}), "sweep.yaml")


def test_sweep_runs_grid_and_summarises(tmp_path):
    spec = _sweep_file(tmp_path, ["coverage", "image"], [0, 1])
    assert main(["sweep", "--config", str(spec)]) == 0
    root = tmp_path / "runs"
    curves = sorted(p.relative_to(root).as_posix() for p in root.glob("*/*/learning_curve.csv"))
    assert curves == [f"{k}/seed_{s}/learning_curve.csv" for k in ("coverage", "image") for s in (0, 1)]
    with open(root / "sweep_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["planner"] for r in rows} == {"coverage", "image"}
    assert all(r["num_runs"] == "2" for r in rows)
    assert (root / "sweep_comparison.png").stat().st_size > 0
    assert (root / "sweep_failures.txt").read_text() == ""


def test_sweep_config_errors(tmp_path):
    assert main(["sweep", "--config", str(_sweep_file(tmp_path, [], [0]))]) == 2
    assert main(["sweep", "--config", str(_sweep_file(tmp_path, ["spiral"], [0]))]) == 2
    assert main(["sweep", "--config", str(_sweep_file(tmp_path, ["image", "image"], [0]))]) == 2
    assert main(["sweep", "--config", str(_sweep_file(tmp_path, ["image"], [-1]))]) == 2
    assert main(["sweep", "--config", str(_sweep_file(tmp_path, ["image"], [0])), "--jobs", "0"]) == 2


def test_sweep_paths_resolve_against_the_spec(tmp_path):
    (tmp_path / "sub").mkdir()
    spec = _write(tmp_path / "sub", "base_config: ../base.yaml\nplanners: [image]\nseeds: [0]\n", "s.yaml")
    with pytest.raises(ConfigError, match="no output root"):
        load_sweep(spec)
    s = load_sweep(spec, out_root=tmp_path / "o")
    assert s.base_config == tmp_path / "sub" / ".." / "base.yaml"
    assert s.out_root == tmp_path / "o"


def _curve(points):
    c = LearningCurve()
    for i, (n, acc, miou) in enumerate(points):
        c.append(CurveRow(i, n, acc, miou, 0.0, 0.0))
    return c


def test_aggregation_interpolates_without_extrapolating():
    a = _curve([(0, 0.2, 0.1), (10, 0.6, 0.5), (20, 0.8, 0.7)])
    b = _curve([(0, 0.4, 0.3), (16, 0.8, 0.7)])
    c = _curve([(0, 0.5, 0.5), (40, 0.9, 0.9)])
    grid = common_grid({"x": [a, b], "y": [c]}, points=5)
    np.testing.assert_allclose(grid, [0, 10, 20, 30, 40])
    rows = aggregate({"x": [a, b], "y": [c]}, grid)
    x_rows = [r for r in rows if r["planner"] == "x"]
    # b stops at 16 images, so x only reports grid points up to 16
    assert [r["num_labeled_images"] for r in x_rows] == [0.0, 10.0]
    assert x_rows[1]["accuracy_mean"] == pytest.approx((0.6 + 0.65) / 2)
    assert x_rows[1]["accuracy_std"] == pytest.approx(np.std([0.6, 0.65]))
    assert x_rows[1]["miou_mean"] == pytest.approx((0.5 + 0.55) / 2)
    y_rows = [r for r in rows if r["planner"] == "y"]
    assert len(y_rows) == 5 and y_rows[2]["miou_mean"] == pytest.approx(0.7) and y_rows[2]["miou_std"] == 0.0
