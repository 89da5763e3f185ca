"""Flight-time cost model and next-measurement planners.

Positions are world ``(x, y)`` in meters at a fixed altitude. Every pose a
planner returns keeps the camera footprint inside the mission terrain.
Footprint scoring uses ``(hits + 1)`` per cell in denominators, so unvisited
terrain scores finitely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cmaes import optimize
from .mapping import BeliefMaps, SummedMaps
from .model import PredictiveOutput
from .terrain import CameraConfig, Footprint, Pose, TerrainRaster, footprint_shape, pose_bounds

PLANNER_KINDS = ("coverage", "image", "frontier", "fixed_horizon")
EDGE_ORDER = ("N", "E", "S", "W")
EDGE_DIRECTIONS = {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}


class PlanningError(RuntimeError):
    pass


class BudgetError(ValueError):
    pass


# -- cost model --------------------------------------------------------------

@dataclass(frozen=True)
class MotionModel:
    accel: float = 2.0
    max_speed: float = 2.0

    def __post_init__(self):
        if not (self.accel > 0 and self.max_speed > 0):
            raise ValueError("accel and max_speed must be > 0")


def flight_time_for_distance(d, motion: MotionModel):
    """Rest-to-rest time over distance ``d``: trapezoidal profile, or triangular if max speed is never reached."""
    d = np.asarray(d, dtype=np.float64)
    a, v = motion.accel, motion.max_speed
    t = np.where(d >= v * v / a, d / v + v / a, 2.0 * np.sqrt(np.maximum(d, 0.0) / a))
    return t if t.ndim else float(t)


def flight_time(a: Pose, b: Pose, motion: MotionModel) -> float:
    return flight_time_for_distance(a.distance(b), motion)


def path_cost(poses, motion: MotionModel) -> float:
    return float(sum(flight_time(p, q, motion) for p, q in zip(poses[:-1], poses[1:])))


@dataclass(frozen=True)
class Path:
    poses: tuple
    cost_s: float

    def __len__(self) -> int:
        return len(self.poses)

    def xy(self) -> np.ndarray:
        return np.array([[p.x_m, p.y_m] for p in self.poses]).reshape(-1, 2)

    @classmethod
    def from_poses(cls, poses, motion: MotionModel, start: Pose | None = None) -> "Path":
        poses = tuple(poses)
        chain = ((start,) if start is not None else ()) + poses
        return cls(poses, path_cost(chain, motion))


@dataclass
class Budget:
    total_s: float
    spent_s: float = 0.0

    @property
    def remaining_s(self) -> float:
        return self.total_s - self.spent_s

    def affords(self, cost_s: float) -> bool:
        return self.spent_s + cost_s <= self.total_s

    def charge(self, cost_s: float) -> None:
        if not self.affords(cost_s):
            raise BudgetError(f"charging {cost_s:.3f} s overruns the {self.total_s} s budget "
                              f"({self.spent_s:.3f} s spent)")
        self.spent_s += cost_s


# -- workspace geometry ------------------------------------------------------

@dataclass(frozen=True)
class Workspace:
    """Mission terrain extent plus camera footprint, in grid and world terms."""

    n_rows: int
    n_cols: int
    resolution_m: float
    camera: CameraConfig

    @classmethod
    def from_raster(cls, raster: TerrainRaster, camera: CameraConfig) -> "Workspace":
        return cls(raster.height_cells, raster.width_cells, raster.resolution_m, camera)

    @property
    def altitude(self) -> float:
        return self.camera.altitude_m

    @property
    def fp_shape(self) -> tuple[int, int]:
        return footprint_shape(self.camera, self.resolution_m)

    @property
    def footprint_side_m(self) -> float:
        return min(self.camera.footprint_m)

    @property
    def min_leg_m(self) -> float:
        return 0.1 * self.footprint_side_m

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return pose_bounds(self.camera, _Extent(self.n_rows, self.n_cols, self.resolution_m))

    def clamp_xy(self, xy: np.ndarray) -> np.ndarray:
        x_lo, x_hi, y_lo, y_hi = self.bounds
        xy = np.array(xy, dtype=np.float64)
        xy[..., 0] = np.clip(xy[..., 0], x_lo, x_hi)
        xy[..., 1] = np.clip(xy[..., 1], y_lo, y_hi)
        return xy

    def origins(self, xy: np.ndarray) -> np.ndarray:
        """Top-left footprint cell ``(row0, col0)`` for each ``(x, y)``."""
        xy = np.asarray(xy, dtype=np.float64)
        n_rows, n_cols = self.fp_shape
        col = np.ceil(xy[..., 0] / self.resolution_m).astype(np.int64) - 1
        row = np.ceil(xy[..., 1] / self.resolution_m).astype(np.int64) - 1
        return np.stack([row - n_rows // 2, col - n_cols // 2], axis=-1)

    def footprint(self, pose: Pose) -> Footprint:
        r, c = self.origins(np.array([pose.x_m, pose.y_m]))
        n_rows, n_cols = self.fp_shape
        fp = Footprint(int(r), int(c), n_rows, n_cols)
        if not fp.inside(self.n_rows, self.n_cols):
            raise PlanningError(f"pose ({pose.x_m}, {pose.y_m}) puts the footprint out of bounds")
        return fp

    def in_bounds(self, pose: Pose) -> bool:
        try:
            self.footprint(pose)
        except PlanningError:
            return False
        return True

    def pose(self, xy) -> Pose:
        return Pose(float(xy[0]), float(xy[1]), self.altitude)

    def candidate_grid(self, spacing_m: float | None = None) -> np.ndarray:
        """Uniform (K, 2) grid of in-bounds positions; spacing defaults to one footprint side."""
        spacing = self.footprint_side_m if spacing_m is None else spacing_m
        x_lo, x_hi, y_lo, y_hi = self.bounds
        xs = _axis_stops(x_lo, x_hi, spacing)
        ys = _axis_stops(y_lo, y_hi, spacing)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class _Extent:
    height_cells: int
    width_cells: int
    resolution_m: float


def _axis_stops(lo: float, hi: float, spacing: float, offset: float = 0.0) -> np.ndarray:
    """Positions ``lo + offset + i * spacing`` up to ``hi``, with both ends added if missing.

    The end stops keep the sweep gap-free when the offset shifts the tracks.
    """
    stops = np.arange(lo + offset, hi + 1e-9, spacing)
    if stops.size == 0 or stops[0] > lo + 1e-9:
        stops = np.insert(stops, 0, lo)
    if stops[-1] < hi - 1e-9:
        stops = np.append(stops, hi)
    return stops


# -- coverage baseline -------------------------------------------------------

GOLDEN = (math.sqrt(5) - 1) / 2


def lawnmower_waypoints(mission_index: int, ws: Workspace, spacing_m: float | None = None) -> np.ndarray:
    """Boustrophedon sweep with orientation, lateral offset and start track rotated per mission.

    Even missions fly tracks parallel to x, odd ones parallel to y. Pairs of
    missions shift the tracks by half a spacing in alternation and start the
    sweep at a golden-ratio-rotated track, so successive missions image
    different terrain even when the budget cuts the sweep short.
    """
    spacing = ws.footprint_side_m if spacing_m is None else spacing_m
    x_lo, x_hi, y_lo, y_hi = ws.bounds
    along_x = mission_index % 2 == 0
    rnd = mission_index // 2
    offset = spacing / 2 if rnd % 2 else 0.0
    cross_lo, cross_hi = (y_lo, y_hi) if along_x else (x_lo, x_hi)
    a_lo, a_hi = (x_lo, x_hi) if along_x else (y_lo, y_hi)
    tracks = _axis_stops(cross_lo, cross_hi, spacing, offset)
    if tracks.size == 0:
        tracks = np.array([cross_lo])
    stops = _axis_stops(a_lo, a_hi, spacing)
    start = int(((rnd * GOLDEN) % 1.0) * tracks.size)
    points = []
    for i, k in enumerate(np.roll(np.arange(tracks.size), -start)):
        seq = stops if i % 2 == 0 else stops[::-1]
        for s in seq:
            points.append((s, tracks[k]) if along_x else (tracks[k], s))
    return np.array(points)


def plan_coverage(mission_index: int, ws: Workspace, motion: MotionModel, budget_s: float,
                  start: Pose | None = None, spacing_m: float | None = None) -> Path:
    """Lawnmower waypoints truncated so the path cost from ``start`` stays within ``budget_s``."""
    if min(ws.fp_shape) > min(ws.n_rows, ws.n_cols):
        raise PlanningError("footprint larger than the terrain")
    poses, cost = [], 0.0
    prev = start
    for x, y in lawnmower_waypoints(mission_index, ws, spacing_m):
        p = ws.pose((x, y))
        if prev is not None:
            if p.distance(prev) < 1e-9:
                continue
            leg = flight_time(prev, p, motion)
            if cost + leg > budget_s:
                break
            cost += leg
        poses.append(p)
        prev = p
    return Path(tuple(poses), cost)


# -- image-based -------------------------------------------------------------

def _edge_cells(lo_px: int, hi_px: int, n_px: int, n_cells: int) -> slice:
    return slice(lo_px * n_cells // n_px, -(-hi_px * n_cells // n_px))


def edge_scores(last_output: PredictiveOutput, maps: BeliefMaps, fp: Footprint, edge_px: int) -> dict:
    """Per image edge: summed MI over the strip divided by summed (hits + 1) over its cells."""
    h_px, w_px = last_output.mi.shape
    e = int(edge_px)
    if not 1 <= e <= max(1, min(h_px, w_px) // 2):
        raise PlanningError(f"edge width {edge_px} px must be in [1, {min(h_px, w_px) // 2}]")
    hits = maps.hits[fp.slices] + 1.0
    strips = {
        "N": ((slice(h_px - e, h_px), slice(None)), (_edge_cells(h_px - e, h_px, h_px, fp.n_rows), slice(None))),
        "E": ((slice(None), slice(w_px - e, w_px)), (slice(None), _edge_cells(w_px - e, w_px, w_px, fp.n_cols))),
        "S": ((slice(0, e), slice(None)), (_edge_cells(0, e, h_px, fp.n_rows), slice(None))),
        "W": ((slice(None), slice(0, e)), (slice(None), _edge_cells(0, e, w_px, fp.n_cols))),
    }
    return {k: float(last_output.mi[px].sum() / hits[cells].sum()) for k, (px, cells) in strips.items()}


def plan_image_based(last_output: PredictiveOutput | None, maps: BeliefMaps, pose: Pose, ws: Workspace,
                     step_m: float, edge_px: int, rng=None) -> Pose:
    """Step ``step_m`` toward the image edge with the most uncertainty per hit.

    Edges whose clamped move would be shorter than the minimum leg are skipped.
    Without a previous prediction a uniformly random heading is taken.
    """
    here = np.array([pose.x_m, pose.y_m])
    if last_output is None:
        rng = np.random.default_rng(rng)
        for _ in range(64):
            ang = rng.uniform(0.0, 2 * math.pi)
            nxt = ws.clamp_xy(here + step_m * np.array([math.cos(ang), math.sin(ang)]))
            if np.linalg.norm(nxt - here) >= ws.min_leg_m:
                return ws.pose(nxt)
        raise PlanningError("no feasible random heading")
    scores = edge_scores(last_output, maps, ws.footprint(pose), edge_px)
    best, best_score = None, -math.inf
    for edge in EDGE_ORDER:
        nxt = ws.clamp_xy(here + step_m * np.array(EDGE_DIRECTIONS[edge]))
        if np.linalg.norm(nxt - here) < ws.min_leg_m:
            continue
        if scores[edge] > best_score:
            best, best_score = nxt, scores[edge]
    if best is None:
        raise PlanningError("every edge direction is blocked by the terrain boundary")
    return ws.pose(best)


# -- frontier-based ----------------------------------------------------------

def frontier_candidates(maps: BeliefMaps, ws: Workspace, sample_dist_m: float) -> np.ndarray:
    """Frontier cell centres thinned in row-major order to be ``sample_dist_m`` apart, then clamped."""
    cells = maps.frontier_cells()
    if cells.size == 0:
        return np.zeros((0, 2))
    xy = (cells[:, ::-1] + 0.5) * ws.resolution_m
    kept = [xy[0]]
    for p in xy[1:]:
        if np.min(np.linalg.norm(np.asarray(kept) - p, axis=1)) >= sample_dist_m:
            kept.append(p)
    return ws.clamp_xy(np.asarray(kept))


def frontier_scores(maps: BeliefMaps, ws: Workspace, candidates: np.ndarray) -> np.ndarray:
    n_rows, n_cols = ws.fp_shape
    u, h = SummedMaps(maps).sums(ws.origins(candidates), n_rows, n_cols)
    return u / (h + n_rows * n_cols)


def random_pose(ws: Workspace, pose: Pose, rng) -> Pose:
    rng = np.random.default_rng(rng)
    x_lo, x_hi, y_lo, y_hi = ws.bounds
    here = np.array([pose.x_m, pose.y_m])
    for _ in range(256):
        xy = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])
        if np.linalg.norm(xy - here) >= ws.min_leg_m:
            return ws.pose(xy)
    raise PlanningError("could not sample a random pose away from the current one")


def plan_frontier(maps: BeliefMaps, pose: Pose, ws: Workspace, motion: MotionModel, sample_dist_m: float,
                  rng=None, remaining_s: float = math.inf) -> Pose:
    """Frontier candidate with the highest uncertainty per (hits + 1); random pose if none exists."""
    cands = frontier_candidates(maps, ws, sample_dist_m)
    if cands.size:
        here = np.array([pose.x_m, pose.y_m])
        dist = np.linalg.norm(cands - here, axis=1)
        ok = (dist >= ws.min_leg_m) & (flight_time_for_distance(dist, motion) <= remaining_s)
        cands = cands[ok]
    if cands.size == 0:
        return random_pose(ws, pose, rng)
    return ws.pose(cands[int(np.argmax(frontier_scores(maps, ws, cands)))])


# -- fixed-horizon -----------------------------------------------------------

def greedy_grid_search(maps: BeliefMaps | SummedMaps, pose: Pose, horizon: int, candidates: np.ndarray,
                       ws: Workspace, motion: MotionModel, remaining_s: float = math.inf) -> Path:
    """Sequential argmax of uncertainty / (forward-simulated hits * leg time) over grid candidates.

    Candidates closer than the minimum leg to the previous step are excluded;
    the first step is also restricted to legs the remaining budget affords.
    """
    if horizon < 1:
        raise PlanningError("horizon must be >= 1")
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    if candidates.shape[0] == 0:
        raise PlanningError("empty candidate grid")
    summed = maps if isinstance(maps, SummedMaps) else SummedMaps(maps)
    n_rows, n_cols = ws.fp_shape
    origins = ws.origins(candidates)
    unc, _ = summed.sums(origins, n_rows, n_cols)
    planned = np.zeros((0, 2), dtype=np.int64)
    prev = np.array([pose.x_m, pose.y_m])
    chosen = []
    for step in range(horizon):
        dist = np.linalg.norm(candidates - prev, axis=1)
        cost = flight_time_for_distance(dist, motion)
        ok = dist >= ws.min_leg_m
        if step == 0:
            ok &= cost <= remaining_s
        if not ok.any():
            break
        hits = kernels.simulated_hits(summed.sat_h, origins, planned, n_rows, n_cols)
        score = np.where(ok, unc / (hits * np.where(ok, cost, 1.0)), -np.inf)
        k = int(np.argmax(score))
        chosen.append(k)
        planned = np.vstack([planned, origins[k:k + 1]])
        prev = candidates[k]
    if not chosen:
        raise PlanningError("no reachable candidate")
    return Path.from_poses([ws.pose(candidates[k]) for k in chosen], motion, start=pose)


@dataclass(frozen=True)
class CmaesConfig:
    sigma0_m: float | None = None  # defaults to one footprint side
    popsize: int | None = None
    max_evals: int = 400
    patience: int = 20


class PathObjective:
    """Path score (summed uncertainty over hit-weighted leg time) of candidate paths, clamping coordinates into the workspace.

    Paths with a leg shorter than the minimum leg, or whose first leg exceeds
    the remaining budget, score 0.
    """

    def __init__(self, maps: BeliefMaps | SummedMaps, pose: Pose, ws: Workspace, motion: MotionModel,
                 remaining_s: float = math.inf):
        self.summed = maps if isinstance(maps, SummedMaps) else SummedMaps(maps)
        self.start = np.array([pose.x_m, pose.y_m])
        self.ws = ws
        self.motion = motion
        self.remaining_s = remaining_s

    def paths(self, flat: np.ndarray) -> np.ndarray:
        flat = np.atleast_2d(np.asarray(flat, dtype=np.float64))
        return self.ws.clamp_xy(flat.reshape(flat.shape[0], -1, 2))

    def __call__(self, flat: np.ndarray) -> np.ndarray:
        xy = self.paths(flat)
        chain = np.concatenate([np.broadcast_to(self.start, (xy.shape[0], 1, 2)), xy], axis=1)
        dist = np.linalg.norm(np.diff(chain, axis=1), axis=2)
        legs = flight_time_for_distance(dist, self.motion)
        n_rows, n_cols = self.ws.fp_shape
        origins = np.ascontiguousarray(self.ws.origins(xy))
        value = kernels.path_objective(self.summed.sat_u, self.summed.sat_h, origins,
                                       np.ascontiguousarray(legs), n_rows, n_cols)
        bad = (dist < self.ws.min_leg_m).any(axis=1) | (legs[:, 0] > self.remaining_s)
        return np.where(bad, 0.0, value)


def refine_path_cmaes(maps: BeliefMaps | SummedMaps, pose: Pose, greedy_path: Path, ws: Workspace,
                      motion: MotionModel, config: CmaesConfig = CmaesConfig(), seed=None,
                      remaining_s: float = math.inf) -> Path:
    """Continuous refinement of a greedy path; never returns a lower-scoring path than the seed."""
    objective = PathObjective(maps, pose, ws, motion, remaining_s)
    x0 = greedy_path.xy().ravel()
    if config.max_evals <= 0:
        return greedy_path
    sigma0 = ws.footprint_side_m if config.sigma0_m is None else config.sigma0_m
    try:
        res = optimize(objective, x0, sigma0, config.max_evals, seed=seed, popsize=config.popsize,
                       patience=config.patience, maximize=True, vectorized=True,
                       initial_f=float(objective(x0)[0]))
    except ValueError:
        # budget below one generation
        return greedy_path
    xy = objective.paths(res.best_x)[0]
    return Path.from_poses([ws.pose(p) for p in xy], motion, start=pose)


# -- dispatch ----------------------------------------------------------------

@dataclass
class PlanContext:
    maps: BeliefMaps
    pose: Pose
    last_output: PredictiveOutput | None
    budget: Budget
    rng: np.random.Generator


@dataclass
class PlannerConfig:
    kind: str = "fixed_horizon"
    horizon: int = 5
    step_m: float = 50.0
    edge_px: int = 10
    sample_dist_m: float = 15.0
    grid_spacing_m: float | None = None
    coverage_spacing_m: float | None = None
    execute_full_horizon: bool = False
    cmaes: CmaesConfig = field(default_factory=CmaesConfig)

    def __post_init__(self):
        if self.kind not in PLANNER_KINDS:
            raise PlanningError(f"unknown planner kind {self.kind!r}; expected one of {PLANNER_KINDS}")


class Planner:
    """Stateful per-mission wrapper around the planning functions."""

    def __init__(self, config: PlannerConfig, ws: Workspace, motion: MotionModel):
        self.config = config
        self.ws = ws
        self.motion = motion
        self._queue: list[Pose] = []
        self._grid = ws.candidate_grid(config.grid_spacing_m)

    @property
    def kind(self) -> str:
        return self.config.kind

    def start_mission(self, mission_index: int, start: Pose, budget: Budget) -> None:
        self._queue = []
        if self.kind == "coverage":
            path = plan_coverage(mission_index, self.ws, self.motion, budget.remaining_s, start,
                                 self.config.coverage_spacing_m)
            self._queue = [p for p in path.poses if p.distance(start) >= 1e-9]

    def propose(self, ctx: PlanContext) -> Pose | None:
        cfg = self.config
        if self.kind == "coverage":
            return self._queue.pop(0) if self._queue else None
        if self.kind == "image":
            return plan_image_based(ctx.last_output, ctx.maps, ctx.pose, self.ws, cfg.step_m, cfg.edge_px, ctx.rng)
        if self.kind == "frontier":
            return plan_frontier(ctx.maps, ctx.pose, self.ws, self.motion, cfg.sample_dist_m, ctx.rng,
                                 ctx.budget.remaining_s)
        if cfg.execute_full_horizon and self._queue:
            return self._queue.pop(0)
        summed = SummedMaps(ctx.maps)
        try:
            greedy = greedy_grid_search(summed, ctx.pose, cfg.horizon, self._grid, self.ws, self.motion,
                                        ctx.budget.remaining_s)
        except PlanningError:
            return None
        seed = int(ctx.rng.integers(2 ** 63))
        refined = refine_path_cmaes(summed, ctx.pose, greedy, self.ws, self.motion, cfg.cmaes, seed,
                                    ctx.budget.remaining_s)
        if cfg.execute_full_horizon:
            self._queue = list(refined.poses[1:])
        return refined.poses[0]


def next_measurement(planner: Planner, ctx: PlanContext) -> Pose | None:
    """Next pose to fly to, or None once the mission is complete (budget cannot cover the leg)."""
    if ctx.budget.remaining_s <= 0:
        return None
    nxt = planner.propose(ctx)
    if nxt is None:
        return None
    if not ctx.budget.affords(flight_time(ctx.pose, nxt, planner.motion)):
        return None
    return nxt
