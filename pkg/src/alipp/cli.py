"""Command-line entry point: ``alipp run | sweep | validate``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .mission import ExperimentError, read_curve, run_experiment
from .planning import PLANNER_KINDS

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
SUMMARY_FIELDS = ("planner", "num_labeled_images", "accuracy_mean", "accuracy_std", "miou_mean", "miou_std",
                  "num_runs")
GRID_POINTS = 50


@dataclass(frozen=True)
class SweepSpec:
    base_config: Path
    planners: tuple
    seeds: tuple
    out_root: Path


def load_sweep(path, out_root=None) -> SweepSpec:
    """Parse a sweep file; relative paths in it resolve against the file's directory."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: YAML syntax error: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}:1: sweep file must be a mapping"])
    errors = []
    unknown = set(data) - {"base_config", "planners", "seeds", "out_root"}
    errors += [f"{path}: unknown key {k}" for k in sorted(unknown)]
    for key in ("base_config", "planners", "seeds"):
        if key not in data:
            errors.append(f"{path}: missing required key {key}")
    planners = data.get("planners") or []
    seeds = data.get("seeds") or []
    if "planners" in data and not planners:
        errors.append(f"{path}: planners must list at least one planner kind")
    if not isinstance(planners, list) or not isinstance(seeds, list):
        errors.append(f"{path}: planners and seeds must be lists")
        planners, seeds = [], []
    for kind in planners:
        if kind not in PLANNER_KINDS:
            errors.append(f"{path}: unknown planner kind {kind!r}; expected one of {', '.join(PLANNER_KINDS)}")
    if len(set(planners)) != len(planners):
        errors.append(f"{path}: planner kinds must be distinct")
    if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds):
        errors.append(f"{path}: seeds must be non-negative integers")
    elif len(set(seeds)) != len(seeds):
        errors.append(f"{path}: seeds must be distinct")
    if "seeds" in data and not seeds:
        errors.append(f"{path}: seeds must list at least one seed")
    root = out_root if out_root is not None else data.get("out_root")
    if root is None:
        errors.append(f"{path}: no output root (set out_root or pass --out)")
    if errors:
        raise ConfigError(errors)
    base = Path(data["base_config"])
    if not base.is_absolute():
        base = path.parent / base
    root = Path(root)
    if out_root is None and not root.is_absolute():
        root = path.parent / root
    return SweepSpec(base, tuple(planners), tuple(seeds), root)


# -- aggregation -------------------------------------------------------------------

def common_grid(curves: dict, points: int = GRID_POINTS) -> np.ndarray:
    """Shared x-grid from 0 to the largest labelled-image count of any run."""
    top = max(float(c.column("num_labeled_images")[-1]) for runs in curves.values() for c in runs)
    return np.linspace(0.0, top, points)


def aggregate(curves: dict, grid: np.ndarray) -> list[dict]:
    """Per-planner mean and population std of the runs' interpolated curves.

    A planner only reports grid points no run of it has to extrapolate to.
    """
    rows = []
    for kind, runs in curves.items():
        if not runs:
            continue
        reach = min(float(c.column("num_labeled_images")[-1]) for c in runs)
        xs = grid[grid <= reach + 1e-9]
        interp = {name: np.array([np.interp(xs, c.column("num_labeled_images"), c.column(name)) for c in runs])
                  for name in ("accuracy", "miou")}
        for i, x in enumerate(xs):
            rows.append({"planner": kind, "num_labeled_images": float(x),
                         "accuracy_mean": float(interp["accuracy"][:, i].mean()),
                         "accuracy_std": float(interp["accuracy"][:, i].std()),
                         "miou_mean": float(interp["miou"][:, i].mean()),
                         "miou_std": float(interp["miou"][:, i].std()),
                         "num_runs": len(runs)})
    return rows


def write_summary(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def plot_summary(path, rows: list[dict]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4), constrained_layout=True)
    kinds = list(dict.fromkeys(r["planner"] for r in rows))
    for ax, metric, label in ((axes[0], "accuracy", "pixel accuracy"), (axes[1], "miou", "mIoU")):
        for kind in kinds:
            sel = [r for r in rows if r["planner"] == kind]
            x = np.array([r["num_labeled_images"] for r in sel])
            m = np.array([r[f"{metric}_mean"] for r in sel])
            s = np.array([r[f"{metric}_std"] for r in sel])
            ax.plot(x, m, label=kind)
            ax.fill_between(x, m - s, m + s, alpha=0.2)
        ax.set_xlabel("labelled images")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[1].legend()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- commands ----------------------------------------------------------------------

def _report_config_error(exc: ConfigError) -> int:
    for line in exc.violations:
        print(f"config error: {line}", file=sys.stderr)
    return EXIT_CONFIG


def _load(path, seed_override=None) -> ExperimentConfig:
    if not Path(path).is_file():
        raise ConfigError([f"{path}: no such file"])
    cfg = load_config(path)
    return cfg if seed_override is None else dataclasses.replace(cfg, seed=seed_override)


def cmd_validate(config_path) -> int:
    try:
        cfg = _load(config_path)
    except ConfigError as exc:
        return _report_config_error(exc)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def cmd_run(config_path, out_dir, seed_override=None) -> int:
    try:
        cfg = _load(config_path, seed_override)
    except ConfigError as exc:
        return _report_config_error(exc)
    try:
        run_experiment(cfg, out_dir)
    except ExperimentError as exc:
        print(f"run failed: {exc} (partial outputs in {out_dir})", file=sys.stderr)
        return EXIT_RUNTIME
    print(Path(out_dir) / "learning_curve.csv")
    return EXIT_OK


def _sweep_job(cfg: ExperimentConfig, out_dir: str):
    try:
        run_experiment(cfg, out_dir)
        return None
    except ExperimentError as exc:
        return str(exc)


def cmd_sweep(sweep_path, out_root=None, jobs: int = 1, seed_override=None) -> int:
    try:
        spec = load_sweep(sweep_path, out_root)
        base = _load(spec.base_config)
    except ConfigError as exc:
        return _report_config_error(exc)
    seeds = (seed_override,) if seed_override is not None else spec.seeds
    tasks = []
    for kind in spec.planners:
        for seed in seeds:
            cfg = dataclasses.replace(base, seed=seed, planner=dataclasses.replace(base.planner, kind=kind))
            tasks.append((kind, seed, cfg, str(spec.out_root / kind / f"seed_{seed}")))
    spec.out_root.mkdir(parents=True, exist_ok=True)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_job, cfg, out) for _, _, cfg, out in tasks]
            failures = [f.result() for f in futures]
    else:
        failures = [_sweep_job(cfg, out) for _, _, cfg, out in tasks]

    curves = {kind: [] for kind in spec.planners}
    failed = []
    for (kind, seed, _, out), err in zip(tasks, failures):
        if err is not None:
            failed.append(f"{kind} seed {seed}: {err}")
            continue
        curves[kind].append(read_curve(Path(out) / "learning_curve.csv"))
    (spec.out_root / "sweep_failures.txt").write_text("".join(f"{line}\n" for line in failed))
    if any(curves.values()):
        rows = aggregate(curves, common_grid({k: v for k, v in curves.items() if v}))
        write_summary(spec.out_root / "sweep_summary.csv", rows)
        plot_summary(spec.out_root / "sweep_comparison.png", rows)
    for line in failed:
        print(f"run failed: {line}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alipp", description="Active-learning informative path planning simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log mission progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed-override", type=int)

    p = sub.add_parser("sweep", help="run a planner x seed grid and summarise it")
    p.add_argument("--config", required=True, help="sweep file (YAML)")
    p.add_argument("--out", help="output root (overrides out_root in the sweep file)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed-override", type=int, help="run only this seed")

    p = sub.add_parser("validate", help="check a config and print it fully resolved")
    p.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "validate":
        return cmd_validate(args.config)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed_override)
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return cmd_sweep(args.config, args.out, args.jobs, args.seed_override)


if __name__ == "__main__":
    sys.exit(main())
