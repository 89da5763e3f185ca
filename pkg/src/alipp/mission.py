"""Data-collection missions and the full active-learning experiment."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import export
from .config import ExperimentConfig, dump_config
from .mapping import BeliefMaps, project_prediction
from .model import (ModelState, TrainSet, evaluate, init_model, make_checkpoint, predict_mc, reset_to_checkpoint,
                    save_model, train, weight_decay_for, weights_digest)
from .planning import Budget, PlanContext, Planner, PlanningError, Workspace, flight_time, next_measurement
from .terrain import CameraConfig, Footprint, Pose, TerrainRaster, capture_image, generate_synthetic_terrain

log = logging.getLogger(__name__)

CURVE_FIELDS = ("mission_index", "num_labeled_images", "accuracy", "miou", "ece", "spent_budget_s")
MAX_CAPTURES = 100_000


class MissionError(RuntimeError):
    pass


class ExperimentError(RuntimeError):
    pass


def derive_seed(root: int, *keys: int) -> int:
    """Independent 63-bit seed for the stream named by ``keys``."""
    ss = np.random.SeedSequence(entropy=root, spawn_key=tuple(keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


# stream names for derive_seed
MODEL_INIT, SEED_TRAIN, SEED_CAPTURE, TEST_CAPTURE, MISSION, EVAL = range(6)
CAPTURE, PREDICT, PLAN, TRAIN = range(4)


# -- terrain split -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TerrainSplit:
    """Mission area (bottom rows), seed margin, and held-out test strip (top rows)."""

    full: TerrainRaster
    mission: TerrainRaster
    margin: TerrainRaster
    test: TerrainRaster
    margin_row0: int
    test_row0: int

    def to_global(self, fp: Footprint, area: str) -> Footprint:
        shift = {"mission": 0, "margin": self.margin_row0, "test": self.test_row0}[area]
        return Footprint(fp.row0 + shift, fp.col0, fp.n_rows, fp.n_cols)


def split_terrain(raster: TerrainRaster, test_rows: int, margin_rows: int) -> TerrainSplit:
    h, w = raster.height_cells, raster.width_cells
    test_row0 = h - test_rows
    margin_row0 = test_row0 - margin_rows
    return TerrainSplit(
        full=raster,
        mission=raster.crop(0, 0, margin_row0, w),
        margin=raster.crop(margin_row0, 0, margin_rows, w),
        test=raster.crop(test_row0, 0, test_rows, w),
        margin_row0=margin_row0,
        test_row0=test_row0,
    )


def grid_poses(raster: TerrainRaster, camera: CameraConfig) -> list[Pose]:
    """Non-overlapping footprint tiling of a raster, row by row."""
    ws = Workspace.from_raster(raster, camera)
    return [ws.pose(xy) for xy in ws.candidate_grid()]


def seed_poses(margin: TerrainRaster, camera: CameraConfig, count: int) -> list[Pose]:
    """``count`` poses spread evenly along the margin strip."""
    ws = Workspace.from_raster(margin, camera)
    x_lo, x_hi, y_lo, y_hi = ws.bounds
    xs = np.linspace(x_lo, x_hi, count) if count > 1 else np.array([(x_lo + x_hi) / 2])
    y = (y_lo + y_hi) / 2
    return [ws.pose((x, y)) for x in xs]


# -- one mission -----------------------------------------------------------------

@dataclass
class MissionRecord:
    images: list = field(default_factory=list)
    poses: list = field(default_factory=list)
    leg_costs: list = field(default_factory=list)
    spent_s: float = 0.0


def run_mission(planner: Planner, model: ModelState, maps: BeliefMaps, budget: Budget, raster: TerrainRaster,
                camera: CameraConfig, start: Pose, rng_seed: int, mc_samples: int = 20,
                mission_index: int = 0, r_min: float = 1e-4) -> MissionRecord:
    """Capture, predict, fuse and replan until the budget cannot pay for the next leg.

    The first capture happens at ``start`` and costs nothing. ``maps`` is
    updated in place.
    """
    rec = MissionRecord()
    rng = np.random.default_rng(derive_seed(rng_seed, PLAN))
    planner.start_mission(mission_index, start, budget)
    pose = start
    step = 0
    while True:
        try:
            img = capture_image(raster, camera, pose, derive_seed(rng_seed, CAPTURE, step))
            out = predict_mc(model, img.features, mc_samples, derive_seed(rng_seed, PREDICT, step))
            maps.fuse(project_prediction(out, img.footprint, r_min))
            rec.images.append(img)
            rec.poses.append(pose)
            if step >= MAX_CAPTURES:
                break
            nxt = next_measurement(planner, PlanContext(maps, pose, out, budget, rng))
        except (PlanningError, ValueError) as exc:
            raise MissionError(f"mission {mission_index}, step {step}, pose "
                               f"({pose.x_m:.3f}, {pose.y_m:.3f}): {exc}") from exc
        if nxt is None:
            break
        cost = flight_time(pose, nxt, planner.motion)
        budget.charge(cost)
        rec.leg_costs.append(cost)
        pose = nxt
        step += 1
    rec.spent_s = budget.spent_s
    return rec


def oracle_label(images, train_set: TrainSet | None = None) -> TrainSet:
    """Label every image with its ground truth, appending to ``train_set`` (duplicates are kept)."""
    train_set = TrainSet([], []) if train_set is None else train_set
    images = list(images)
    train_set.extend(images, [img.gt_labels.copy() for img in images])
    return train_set


# -- learning curve ----------------------------------------------------------------

@dataclass(frozen=True)
class CurveRow:
    mission_index: int
    num_labeled_images: int
    accuracy: float
    miou: float
    ece: float
    spent_budget_s: float

    def cells(self) -> list:
        return [self.mission_index, self.num_labeled_images, repr(self.accuracy), repr(self.miou),
                repr(self.ece), repr(self.spent_budget_s)]


@dataclass
class LearningCurve:
    rows: list = field(default_factory=list)

    def append(self, row: CurveRow) -> None:
        if self.rows and row.num_labeled_images <= self.rows[-1].num_labeled_images:
            raise ExperimentError("labelled image count must increase across missions")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CURVE_FIELDS)
            for row in self.rows:
                writer.writerow(row.cells())


def read_curve(path) -> LearningCurve:
    with open(path, newline="") as fh:
        rows = [CurveRow(int(r["mission_index"]), int(r["num_labeled_images"]), float(r["accuracy"]),
                         float(r["miou"]), float(r["ece"]), float(r["spent_budget_s"])) for r in csv.DictReader(fh)]
    return LearningCurve(rows)


# -- experiment --------------------------------------------------------------------

@dataclass
class ExperimentResult:
    curve: LearningCurve
    missions: list
    checkpoint_digest: str
    retrain_start_digests: list
    test_footprints: list
    mission_footprints: list


def _write_maps(out: Path, k: int, maps: BeliefMaps, rec: MissionRecord, res: float, raw: bool) -> None:
    unexplored = ~maps.explored()
    path_xy = [(p.x_m, p.y_m) for p in rec.poses]
    export.save_png(out / f"semantic_map_{k}.png", export.label_rgb(maps.semantic_labels(), unexplored),
                    path_xy, res)
    export.save_png(out / f"uncertainty_map_{k}.png", export.heat_rgb(maps.uncertainty, unexplored), path_xy, res)
    if raw:
        grid = np.concatenate([maps.mean, maps.var, maps.uncertainty[..., None], maps.hits[..., None]], axis=-1)
        export.write_raster(out / f"maps_{k}.raster",
                            TerrainRaster(maps.semantic_labels(), grid, res, maps.num_classes))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Seed pretraining, then ``num_missions`` collect/label/retrain/evaluate rounds.

    Mission ``k`` flies with the model retrained after mission ``k - 1``. The
    retraining after each mission starts from the seed checkpoint and uses
    every image labelled so far. Row 0 of the curve is the checkpoint itself.
    With ``out_dir`` the resolved config, seed log, curve CSV (flushed after
    each row), paths and map renders are written there.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config_resolved.yaml").write_text(dump_config(cfg))
    t, cam, mp, ms, mapc = cfg.terrain, cfg.camera, cfg.model, cfg.mission, cfg.mapping
    seeds = {"seed": cfg.seed, "terrain_seed": t.seed}
    curve = LearningCurve()
    result = ExperimentResult(curve, [], "", [], [], [])

    def flush():
        if out is not None:
            curve.write_csv(out / "learning_curve.csv")
            (out / "seeds.json").write_text(json.dumps(seeds, indent=2, sort_keys=True) + "\n")

    try:
        raster = generate_synthetic_terrain(t.seed, t.width_cells, t.height_cells, t.num_classes, t.blob_scale,
                                            t.feature_dim, t.resolution_m, t.class_bias_std, t.min_separation)
        split = split_terrain(raster, t.test_rows, t.margin_rows)
        seeds["test_capture"] = derive_seed(cfg.seed, TEST_CAPTURE)
        test_images = [capture_image(split.test, cam, p, derive_seed(cfg.seed, TEST_CAPTURE, i))
                       for i, p in enumerate(grid_poses(split.test, cam))]
        result.test_footprints = [split.to_global(img.footprint, "test") for img in test_images]
        seed_images = [capture_image(split.margin, cam, p, derive_seed(cfg.seed, SEED_CAPTURE, i))
                       for i, p in enumerate(seed_poses(split.margin, cam, ms.seed_images))]

        seeds["model_init"] = derive_seed(cfg.seed, MODEL_INIT)
        seeds["seed_train"] = derive_seed(cfg.seed, SEED_TRAIN)
        model = init_model(t.feature_dim, t.num_classes, mp.hidden, mp.window, mp.dropout, seeds["model_init"])
        train_kw = dict(epochs=mp.epochs, batch_size=mp.batch_size, learning_rate=mp.learning_rate,
                        patience=mp.patience, val_fraction=mp.val_fraction)
        model = train(model, oracle_label(seed_images), weight_decay=weight_decay_for(mp.dropout, len(seed_images)),
                      rng_seed=seeds["seed_train"], **train_kw)
        model = make_checkpoint(model)
        result.checkpoint_digest = weights_digest(model.checkpoint)
        if out is not None and cfg.outputs.model:
            save_model(out / "checkpoint.bin", model)

        seeds["eval"] = derive_seed(cfg.seed, EVAL)
        metrics = evaluate(model, test_images, mp.mc_samples, mp.ece_bins, derive_seed(cfg.seed, EVAL, 0))
        curve.append(CurveRow(0, 0, metrics["accuracy"], metrics["miou"], metrics["ece"], 0.0))
        flush()

        ws = Workspace.from_raster(split.mission, cam)
        planner = Planner(cfg.planner, ws, cfg.motion)
        start = Pose(*ms.start)
        n_rows, n_cols = split.mission.height_cells, split.mission.width_cells
        maps = None
        data = TrainSet([], [])
        for k in range(1, ms.num_missions + 1):
            if maps is None or not mapc.persist_across_missions:
                maps = BeliefMaps.fresh(n_rows, n_cols, t.num_classes, mapc.prior_var, mapc.u_prior)
            mission_seed = derive_seed(cfg.seed, MISSION, k)
            seeds[f"mission_{k}"] = mission_seed
            budget = Budget(ms.budget_s)
            rec = run_mission(planner, model, maps, budget, split.mission, cam, start, mission_seed,
                              mp.mc_samples, k - 1, mapc.r_min)
            result.missions.append(rec)
            result.mission_footprints.extend(img.footprint for img in rec.images)
            oracle_label(rec.images, data)

            model = reset_to_checkpoint(model)
            result.retrain_start_digests.append(weights_digest(model.weights))
            model = train(model, data, weight_decay=weight_decay_for(mp.dropout, len(data)),
                          rng_seed=derive_seed(mission_seed, TRAIN), **train_kw)
            metrics = evaluate(model, test_images, mp.mc_samples, mp.ece_bins, derive_seed(cfg.seed, EVAL, k))
            curve.append(CurveRow(k, len(data), metrics["accuracy"], metrics["miou"], metrics["ece"], rec.spent_s))
            log.info("mission %d: %d images, %.1f s, miou %.4f", k, len(rec.images), rec.spent_s, metrics["miou"])
            if out is not None:
                export.write_path_csv(out / f"path_mission_{k}.csv", rec.poses, [0.0] + rec.leg_costs)
                if cfg.outputs.maps:
                    _write_maps(out, k, maps, rec, t.resolution_m, cfg.outputs.raw_grids)
            flush()
    except Exception as exc:
        flush()
        if isinstance(exc, ExperimentError):
            raise
        raise ExperimentError(f"{type(exc).__name__}: {exc}") from exc
    if out is not None and cfg.outputs.model:
        save_model(out / "final_model.bin", model)
    return result
