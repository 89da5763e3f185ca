"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with numba and a vectorised
numpy form. The module-level names resolve to one of the two according to
:data:`alipp._accel.USE_NUMBA`; both variants stay importable (``*_loops`` and
``*_numpy``) so tests and the benchmark can compare them.

Footprints handed to these kernels are same-sized rectangles identified by
their top-left cell ``(row, col)``.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


def summed_area_table(grid: np.ndarray) -> np.ndarray:
    """Zero-padded 2-D prefix sum; ``sat[i, j] == grid[:i, :j].sum()``."""
    sat = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(grid, axis=0, dtype=np.float64), axis=1, out=sat[1:, 1:])
    return sat


# -- box sums ---------------------------------------------------------------

def _box_sums_loops(sat, origins, n_rows, n_cols):
    out = np.empty(origins.shape[0], dtype=np.float64)
    for k in range(origins.shape[0]):
        r = origins[k, 0]
        c = origins[k, 1]
        out[k] = (sat[r + n_rows, c + n_cols] - sat[r, c + n_cols]
                  - sat[r + n_rows, c] + sat[r, c])
    return out


def _box_sums_numpy(sat, origins, n_rows, n_cols):
    r = origins[:, 0]
    c = origins[:, 1]
    return (sat[r + n_rows, c + n_cols] - sat[r, c + n_cols]
            - sat[r + n_rows, c] + sat[r, c])


# -- forward-simulated hits -------------------------------------------------

def _simulated_hits_loops(sat_h, candidates, planned, n_rows, n_cols):
    # sum over the candidate footprint of (hits + 1), with every planned
    # footprint already stamped onto the hit map
    area = n_rows * n_cols
    out = np.empty(candidates.shape[0], dtype=np.float64)
    for k in range(candidates.shape[0]):
        r = candidates[k, 0]
        c = candidates[k, 1]
        total = (sat_h[r + n_rows, c + n_cols] - sat_h[r, c + n_cols]
                 - sat_h[r + n_rows, c] + sat_h[r, c]) + area
        for m in range(planned.shape[0]):
            dr = n_rows - abs(r - planned[m, 0])
            dc = n_cols - abs(c - planned[m, 1])
            if dr > 0 and dc > 0:
                total += dr * dc
        out[k] = total
    return out


def _simulated_hits_numpy(sat_h, candidates, planned, n_rows, n_cols):
    base = _box_sums_numpy(sat_h, candidates, n_rows, n_cols) + n_rows * n_cols
    if planned.shape[0] == 0:
        return base
    dr = np.clip(n_rows - np.abs(candidates[:, None, 0] - planned[None, :, 0]), 0, None)
    dc = np.clip(n_cols - np.abs(candidates[:, None, 1] - planned[None, :, 1]), 0, None)
    return base + (dr * dc).sum(axis=1)


# -- path objective ---------------------------------------------------------

def _path_objective_loops(sat_u, sat_h, origins, legs, n_rows, n_cols):
    n_paths = origins.shape[0]
    horizon = origins.shape[1]
    area = n_rows * n_cols
    out = np.empty(n_paths, dtype=np.float64)
    for p in range(n_paths):
        num = 0.0
        den = 0.0
        for n in range(horizon):
            r = origins[p, n, 0]
            c = origins[p, n, 1]
            num += (sat_u[r + n_rows, c + n_cols] - sat_u[r, c + n_cols]
                    - sat_u[r + n_rows, c] + sat_u[r, c])
            hits = (sat_h[r + n_rows, c + n_cols] - sat_h[r, c + n_cols]
                    - sat_h[r + n_rows, c] + sat_h[r, c]) + area
            for m in range(n):
                dr = n_rows - abs(r - origins[p, m, 0])
                dc = n_cols - abs(c - origins[p, m, 1])
                if dr > 0 and dc > 0:
                    hits += dr * dc
            den += hits * legs[p, n]
        out[p] = num / den if den > 0.0 else 0.0
    return out


def _path_objective_numpy(sat_u, sat_h, origins, legs, n_rows, n_cols):
    n_paths, horizon, _ = origins.shape
    flat = origins.reshape(-1, 2)
    unc = _box_sums_numpy(sat_u, flat, n_rows, n_cols).reshape(n_paths, horizon)
    hits = _box_sums_numpy(sat_h, flat, n_rows, n_cols).reshape(n_paths, horizon)
    hits = hits + n_rows * n_cols
    dr = np.clip(n_rows - np.abs(origins[:, :, None, 0] - origins[:, None, :, 0]), 0, None)
    dc = np.clip(n_cols - np.abs(origins[:, :, None, 1] - origins[:, None, :, 1]), 0, None)
    earlier = np.tril(np.ones((horizon, horizon), dtype=bool), k=-1)
    hits = hits + np.where(earlier[None], dr * dc, 0).sum(axis=2)
    num = unc.sum(axis=1)
    den = (hits * legs).sum(axis=1)
    safe = np.where(den > 0.0, den, 1.0)
    return np.where(den > 0.0, num / safe, 0.0)


# -- frontier ---------------------------------------------------------------

def _frontier_mask_loops(hits):
    h, w = hits.shape
    out = np.zeros((h, w), dtype=np.bool_)
    for i in range(h):
        for j in range(w):
            if hits[i, j] <= 0:
                continue
            if ((i > 0 and hits[i - 1, j] == 0) or (i < h - 1 and hits[i + 1, j] == 0)
                    or (j > 0 and hits[i, j - 1] == 0) or (j < w - 1 and hits[i, j + 1] == 0)):
                out[i, j] = True
    return out


def _frontier_mask_numpy(hits):
    unknown = hits == 0
    near = np.zeros_like(unknown)
    near[1:, :] |= unknown[:-1, :]
    near[:-1, :] |= unknown[1:, :]
    near[:, 1:] |= unknown[:, :-1]
    near[:, :-1] |= unknown[:, 1:]
    return (hits > 0) & near


# -- scalar Kalman update ---------------------------------------------------

def _kalman_update_loops(mean, var, meas, noise):
    # in place over (rows, cols, classes) blocks; views of the maps are fine
    for i in range(mean.shape[0]):
        for j in range(mean.shape[1]):
            for k in range(mean.shape[2]):
                gain = var[i, j, k] / (var[i, j, k] + noise[i, j, k])
                mean[i, j, k] += gain * (meas[i, j, k] - mean[i, j, k])
                var[i, j, k] *= 1.0 - gain


def _kalman_update_numpy(mean, var, meas, noise):
    gain = var / (var + noise)
    mean += gain * (meas - mean)
    var *= 1.0 - gain


box_sums_loops = njit(_box_sums_loops)
simulated_hits_loops = njit(_simulated_hits_loops)
path_objective_loops = njit(_path_objective_loops)
frontier_mask_loops = njit(_frontier_mask_loops)
kalman_update_loops = njit(_kalman_update_loops)

box_sums_numpy = _box_sums_numpy
simulated_hits_numpy = _simulated_hits_numpy
path_objective_numpy = _path_objective_numpy
frontier_mask_numpy = _frontier_mask_numpy
kalman_update_numpy = _kalman_update_numpy

if USE_NUMBA:
    box_sums = box_sums_loops
    simulated_hits = simulated_hits_loops
    path_objective = path_objective_loops
    frontier_mask = frontier_mask_loops
    kalman_update = kalman_update_loops
else:
    box_sums = box_sums_numpy
    simulated_hits = simulated_hits_numpy
    path_objective = path_objective_numpy
    frontier_mask = frontier_mask_numpy
    kalman_update = kalman_update_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
