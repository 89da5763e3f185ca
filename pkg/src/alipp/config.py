"""Experiment configuration: YAML schema, defaults and validation.

Only ``seed``, ``planner.kind``, ``mission.num_missions`` and
``mission.budget_s`` are required; everything else has a default. Errors
carry the YAML line they refer to.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .cmaes import default_popsize
from .planning import PLANNER_KINDS, CmaesConfig, MotionModel, PlannerConfig, flight_time_for_distance
from .terrain import MIN_SIDE_CELLS, CameraConfig, TerrainError, footprint_shape, pixel_cell_ratio


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("\n".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class TerrainParams:
    seed: int = 7
    width_cells: int = 256
    height_cells: int = 256
    num_classes: int = 4
    blob_scale: float = 12.0
    feature_dim: int = 3
    resolution_m: float = 1.0
    class_bias_std: float = 1.0
    min_separation: float = 0.3
    test_rows: int = 48
    margin_rows: int = 16


@dataclass(frozen=True)
class ModelParams:
    hidden: int = 32
    window: int = 3
    dropout: float = 0.5
    mc_samples: int = 20
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 0.5
    patience: int = 8
    val_fraction: float = 0.1
    ece_bins: int = 10


@dataclass(frozen=True)
class MappingParams:
    prior_var: float = 1.0
    u_prior: float = 1.0
    r_min: float = 1e-4
    persist_across_missions: bool = False


@dataclass(frozen=True)
class MissionParams:
    num_missions: int = 5
    budget_s: float = 240.0
    start: tuple = (24.5, 24.5, 30.0)
    seed_images: int = 5


@dataclass(frozen=True)
class OutputParams:
    maps: bool = True
    raw_grids: bool = False
    model: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    terrain: TerrainParams = field(default_factory=TerrainParams)
    camera: CameraConfig = field(default_factory=lambda: CameraConfig(16, 16, 1.0, 30.0, 0.3))
    model: ModelParams = field(default_factory=ModelParams)
    mapping: MappingParams = field(default_factory=MappingParams)
    motion: MotionModel = field(default_factory=MotionModel)
    planner: PlannerConfig = field(
        default_factory=lambda: PlannerConfig(step_m=48.0, edge_px=2, sample_dist_m=16.0))
    mission: MissionParams = field(default_factory=MissionParams)
    outputs: OutputParams = field(default_factory=OutputParams)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


REQUIRED = (("seed",), ("planner", "kind"), ("mission", "num_missions"), ("mission", "budget_s"))
SECTIONS = {
    "terrain": TerrainParams, "camera": CameraConfig, "model": ModelParams, "mapping": MappingParams,
    "motion": MotionModel, "planner": PlannerConfig, "mission": MissionParams, "outputs": OutputParams,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# -- YAML with line numbers ----------------------------------------------------

def _line_index(node, prefix=(), out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            out[path] = key.start_mark.line + 1
            _line_index(value, path, out)
    return out


class _Lines:
    def __init__(self, index: dict, source: str):
        self.index = index
        self.source = source

    def at(self, path: tuple) -> str:
        while path:
            if path in self.index:
                return f"{self.source}:{self.index[path]}"
            path = path[:-1]
        return f"{self.source}:1"


def _coerce(value, default, hint):
    """Convert a YAML scalar to the type of the dataclass default or hint."""
    if value is None:
        if default is None or "None" in str(hint):
            return None
        raise TypeError("must not be null")
    kind = type(default) if default is not None else None
    if kind is None:
        hint = str(hint)
        kind = int if hint.startswith("int") else float if hint.startswith("float") else None
    if kind is bool:
        if not isinstance(value, bool):
            raise TypeError("must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("must be a number")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise TypeError("must be a string")
        return value
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            raise TypeError("must be a list")
        return tuple(float(v) for v in value)
    return value


def _build(cls, data, path: tuple, lines: _Lines, errors: list, default_obj=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{lines.at(path)}: {'.'.join(path)}: expected a mapping")
        return default_obj if default_obj is not None else cls()
    base = default_obj if default_obj is not None else None
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            errors.append(f"{lines.at(path + (key,))}: unknown key {'.'.join(path + (key,))}")
    for name, f in known.items():
        if base is not None:
            default = getattr(base, name)
        elif f.default is not dataclasses.MISSING:
            default = f.default
        else:
            default = f.default_factory()
        if name not in data:
            kwargs[name] = default
            continue
        value = data[name]
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path + (name,), lines, errors, default)
            continue
        try:
            kwargs[name] = _coerce(value, default, f.type)
        except (TypeError, ValueError) as exc:
            errors.append(f"{lines.at(path + (name,))}: {'.'.join(path + (name,))} {exc}")
            kwargs[name] = default
    try:
        return cls(**kwargs)
    except (ValueError, TerrainError) as exc:
        errors.append(f"{lines.at(path)}: {'.'.join(path) or 'config'}: {exc}")
        return default_obj if default_obj is not None else cls()


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError([f"{where}: YAML syntax error: {exc}"]) from None
    lines = _Lines(_line_index(root) if root is not None else {}, source)
    if not isinstance(data, dict):
        raise ConfigError([f"{source}:1: config must be a mapping"])
    errors = []
    for path in REQUIRED:
        node = data
        for key in path:
            node = node.get(key) if isinstance(node, dict) else None
            if node is None:
                break
        if node is None:
            errors.append(f"{lines.at(path)}: missing required key {'.'.join(path)}")
    for key in data:
        if key != "seed" and key not in SECTIONS:
            errors.append(f"{lines.at((key,))}: unknown key {key}")
    sections = {}
    for name, cls in SECTIONS.items():
        default = getattr(ExperimentConfig(), name)
        sections[name] = _build(cls, data.get(name), (name,), lines, errors, default)
    seed = data.get("seed", 0)
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        errors.append(f"{lines.at(('seed',))}: seed must be a non-negative integer")
        seed = 0
    cfg = ExperimentConfig(seed=seed or 0, **sections)
    errors.extend(f"{lines.at(path)}: {msg}" for path, msg in check(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


# -- cross-field checks ---------------------------------------------------------

def check(cfg: ExperimentConfig) -> list[tuple[tuple, str]]:
    """All semantic violations as ``(key path, message)`` pairs."""
    bad = []
    t, cam, m, mp, pl, ms = cfg.terrain, cfg.camera, cfg.model, cfg.mapping, cfg.planner, cfg.mission
    if t.num_classes < 2:
        bad.append((("terrain", "num_classes"), "terrain.num_classes must be >= 2"))
    if t.width_cells < MIN_SIDE_CELLS or t.height_cells < MIN_SIDE_CELLS:
        bad.append((("terrain",), f"terrain sides must be >= {MIN_SIDE_CELLS} cells"))
    if not t.blob_scale > 0:
        bad.append((("terrain", "blob_scale"), "terrain.blob_scale must be > 0"))
    if not t.resolution_m > 0:
        bad.append((("terrain", "resolution_m"), "terrain.resolution_m must be > 0"))
    if not 0.0 < mp.prior_var <= 1.0:
        bad.append((("mapping", "prior_var"), f"mapping.prior_var (epsilon) must be in (0, 1], got {mp.prior_var}"))
    if not 0.0 <= mp.u_prior <= 1.0:
        bad.append((("mapping", "u_prior"), "mapping.u_prior must be in [0, 1]"))
    if not mp.r_min > 0:
        bad.append((("mapping", "r_min"), "mapping.r_min must be > 0"))
    if not 0.0 <= m.dropout < 1.0:
        bad.append((("model", "dropout"), f"model.dropout (p) must be in [0, 1), got {m.dropout}"))
    if m.mc_samples < 1:
        bad.append((("model", "mc_samples"), "model.mc_samples must be >= 1"))
    if m.window < 1 or m.window % 2 == 0:
        bad.append((("model", "window"), "model.window must be a positive odd integer"))
    if m.ece_bins < 2:
        bad.append((("model", "ece_bins"), "model.ece_bins must be >= 2"))
    if m.batch_size < 1 or m.epochs < 0 or m.hidden < 1:
        bad.append((("model",), "model.batch_size and model.hidden must be >= 1, model.epochs >= 0"))
    if not 0.0 <= m.val_fraction < 1.0:
        bad.append((("model", "val_fraction"), "model.val_fraction must be in [0, 1)"))
    if ms.num_missions < 0:
        bad.append((("mission", "num_missions"), "mission.num_missions must be >= 0"))
    if ms.seed_images < 1:
        bad.append((("mission", "seed_images"), "mission.seed_images must be >= 1"))
    if len(ms.start) != 3:
        bad.append((("mission", "start"), "mission.start must be [x, y, z]"))
    if pl.kind not in PLANNER_KINDS:
        bad.append((("planner", "kind"), f"planner.kind must be one of {PLANNER_KINDS}"))
    if pl.horizon < 1:
        bad.append((("planner", "horizon"), "planner.horizon must be >= 1"))
    if not pl.step_m > 0 or not pl.sample_dist_m > 0:
        bad.append((("planner",), "planner.step_m and planner.sample_dist_m must be > 0"))
    if pl.edge_px < 1 or pl.edge_px > max(1, min(cam.width_px, cam.height_px) // 2):
        bad.append((("planner", "edge_px"), "planner.edge_px must be in [1, min(W, H) / 2]"))
    if pl.cmaes.max_evals < 0 or pl.cmaes.patience < 1:
        bad.append((("planner", "cmaes"), "planner.cmaes.max_evals must be >= 0 and patience >= 1"))
    if pl.cmaes.popsize is not None and pl.cmaes.popsize < 2:
        bad.append((("planner", "cmaes", "popsize"), "planner.cmaes.popsize must be >= 2"))
    if bad:
        return bad

    try:
        pixel_cell_ratio(cam, t.resolution_m)
        fp_rows, fp_cols = footprint_shape(cam, t.resolution_m)
    except TerrainError as exc:
        return [(("camera", "gsd_m"), str(exc))]
    mission_rows = t.height_cells - t.test_rows - t.margin_rows
    if fp_cols > t.width_cells or fp_rows > t.height_cells:
        bad.append((("camera",), f"camera footprint {fp_rows}x{fp_cols} cells exceeds the terrain"))
    for name, rows in (("test_rows", t.test_rows), ("margin_rows", t.margin_rows)):
        if rows < fp_rows:
            bad.append((("terrain", name), f"terrain.{name}={rows} is smaller than the footprint ({fp_rows} cells)"))
    if mission_rows < fp_rows:
        bad.append((("terrain",), f"mission area of {mission_rows} rows is smaller than the footprint"))
    if bad:
        return bad
    side = min(cam.footprint_m)
    one_leg = flight_time_for_distance(side, cfg.motion)
    if ms.budget_s <= one_leg:
        bad.append((("mission", "budget_s"),
                    f"mission.budget_s={ms.budget_s} does not exceed one footprint leg ({one_leg:.3f} s)"))
    res = t.resolution_m
    x, y = ms.start[0], ms.start[1]
    x_lo, x_hi = (fp_cols // 2 + 0.5) * res, (t.width_cells - fp_cols + fp_cols // 2 + 0.5) * res
    y_lo, y_hi = (fp_rows // 2 + 0.5) * res, (mission_rows - fp_rows + fp_rows // 2 + 0.5) * res
    col = math.ceil(x / res) - 1
    row = math.ceil(y / res) - 1
    if not (0 <= col - fp_cols // 2 and col - fp_cols // 2 + fp_cols <= t.width_cells
            and 0 <= row - fp_rows // 2 and row - fp_rows // 2 + fp_rows <= mission_rows):
        bad.append((("mission", "start"),
                    f"mission.start puts the footprint outside the mission area "
                    f"(x in [{x_lo}, {x_hi}], y in [{y_lo}, {y_hi}])"))
    pop = pl.cmaes.popsize or default_popsize(2 * pl.horizon)
    if 0 < pl.cmaes.max_evals < pop:
        bad.append((("planner", "cmaes", "max_evals"),
                    f"planner.cmaes.max_evals must be 0 or >= the population size {pop}"))
    return bad
