"""Time the numba and numpy variants of every hot kernel on planner-sized inputs.

    python3 benchmarks/bench_kernels.py            # kernel table
    python3 benchmarks/bench_kernels.py --e2e      # also a small experiment per backend

Both variants are checked for agreement before timing. The end-to-end mode runs
``alipp run`` twice in subprocesses, once with ALIPP_DISABLE_NUMBA=1.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile
import timeit
from pathlib import Path

import numpy as np

from alipp import kernels as K


def make_inputs(rng, side=192, fp=16, n_cand=900, n_paths=32, horizon=5):
    hits = rng.integers(0, 3, size=(side, side)).astype(np.float64)
    unc = rng.random((side, side))
    sat_h, sat_u = K.summed_area_table(hits), K.summed_area_table(unc)
    top = side - fp + 1
    cands = rng.integers(0, top, size=(n_cand, 2)).astype(np.int64)
    planned = rng.integers(0, top, size=(horizon - 1, 2)).astype(np.int64)
    origins = rng.integers(0, top, size=(n_paths, horizon, 2)).astype(np.int64)
    legs = rng.uniform(5.0, 40.0, size=(n_paths, horizon))
    block = (fp, fp, 4)
    kal = (rng.random(block), rng.uniform(0.1, 1.0, block), rng.random(block), rng.uniform(1e-4, 0.2, block))
    return dict(hits=hits, sat_h=sat_h, sat_u=sat_u, cands=cands, planned=planned, origins=origins,
                legs=legs, fp=fp, kal=kal)


def cases(x):
    fp = x["fp"]
    return {
        "box_sums": (lambda f: f(x["sat_u"], x["cands"], fp, fp), "box_sums"),
        "simulated_hits": (lambda f: f(x["sat_h"], x["cands"], x["planned"], fp, fp), "simulated_hits"),
        "path_objective": (lambda f: f(x["sat_u"], x["sat_h"], x["origins"], x["legs"], fp, fp), "path_objective"),
        "frontier_mask": (lambda f: f(x["hits"]), "frontier_mask"),
        "kalman_update": (lambda f: f(*[a.copy() for a in x["kal"][:2]], *x["kal"][2:]), "kalman_update"),
    }


def bench(repeat: int, number: int) -> None:
    x = make_inputs(np.random.default_rng(0))
    print(f"{'kernel':<16}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, (call, attr) in cases(x).items():
        fast, slow = getattr(K, f"{attr}_loops"), getattr(K, f"{attr}_numpy")
        if name != "kalman_update":
            np.testing.assert_allclose(call(fast), call(slow), rtol=1e-12, atol=1e-9)
        else:
            call(fast)  # compile
        t_fast = min(timeit.repeat(lambda: call(fast), repeat=repeat, number=number)) / number * 1e6
        t_slow = min(timeit.repeat(lambda: call(slow), repeat=repeat, number=number)) / number * 1e6
        print(f"{name:<16}{t_fast:>12.1f}{t_slow:>12.1f}{t_slow / t_fast:>10.2f}")


def bench_e2e(config: Path) -> None:
    for label, env in (("numba", {}), ("numpy", {"ALIPP_DISABLE_NUMBA": "1"})):
        with tempfile.TemporaryDirectory() as out:
            cmd = [sys.executable, "-m", "alipp.cli", "run", "--config", str(config), "--out", out]
            t0 = timeit.default_timer()
            subprocess.run(cmd, check=True, env={**os.environ, **env}, stdout=subprocess.DEVNULL)
            print(f"experiment [{label}]: {timeit.default_timer() - t0:.2f} s (includes import and JIT load)")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    ap.add_argument("--e2e", action="store_true")
    ap.add_argument("--config", type=Path, default=Path(__file__).resolve().parent.parent / "configs" / "small.yaml")
    args = ap.parse_args()
    print(f"active backend: {K.BACKEND}")
    bench(args.repeat, args.number)
    if args.e2e:
        bench_e2e(args.config)


if __name__ == "__main__":
    main()
