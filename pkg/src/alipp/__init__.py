"""Active-learning informative path planning for UAV-based semantic mapping.

A desk-scale simulator: synthetic terrain, an MC-dropout pixel classifier,
Kalman-fused belief maps, four planners (coverage, image-based, frontier and
fixed-horizon greedy + CMA-ES) and the mission/retraining protocol around them.
"""
from .cmaes import CMAES, optimize
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .mapping import BeliefMaps
from .mission import run_experiment, run_mission
from .model import evaluate, init_model, predict_mc, train
from .planning import MotionModel, Planner, PlannerConfig, flight_time, greedy_grid_search, refine_path_cmaes
from .terrain import CameraConfig, Pose, TerrainRaster, capture_image, generate_synthetic_terrain

__version__ = "0.1.0"
