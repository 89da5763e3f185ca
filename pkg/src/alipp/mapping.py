"""Global terrain belief: per-class Kalman layers, uncertainty layer, hit map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import PredictiveOutput
from .terrain import Footprint

R_MIN = 1e-4


class MappingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Measurement:
    footprint: Footprint
    probs: np.ndarray  # (n_rows, n_cols, C)
    mi: np.ndarray  # (n_rows, n_cols)
    noise: np.ndarray  # (n_rows, n_cols, C)


def _to_cells(values: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    """Average pixel blocks onto cells, or repeat pixels that span several cells."""
    h, w = values.shape[:2]
    rest = values.shape[2:]
    if h >= n_rows:
        if h % n_rows or w % n_cols or h // n_rows != w // n_cols:
            raise MappingError(f"{h}x{w} image does not tile a {n_rows}x{n_cols} footprint")
        k = h // n_rows
        return values.reshape(n_rows, k, n_cols, k, *rest).mean(axis=(1, 3))
    if n_rows % h or n_cols % w or n_rows // h != n_cols // w:
        raise MappingError(f"{h}x{w} image does not tile a {n_rows}x{n_cols} footprint")
    k = n_rows // h
    return np.repeat(np.repeat(values, k, axis=0), k, axis=1)


def project_prediction(output: PredictiveOutput, footprint: Footprint, r_min: float = R_MIN) -> Measurement:
    nr, nc = footprint.n_rows, footprint.n_cols
    probs = _to_cells(output.probs, nr, nc)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    mi = _to_cells(output.mi, nr, nc)
    noise = np.maximum(_to_cells(output.mc_variance, nr, nc), r_min)
    return Measurement(footprint, probs, mi, noise)


@dataclass(eq=False)
class BeliefMaps:
    mean: np.ndarray
    var: np.ndarray
    uncertainty: np.ndarray
    hits: np.ndarray
    prior_var: float = 1.0
    u_prior: float = 1.0

    @classmethod
    def fresh(cls, n_rows: int, n_cols: int, num_classes: int, prior_var: float = 1.0,
              u_prior: float = 1.0) -> "BeliefMaps":
        if not 0.0 < prior_var <= 1.0:
            raise MappingError(f"prior variance must be in (0, 1], got {prior_var}")
        if not 0.0 <= u_prior <= 1.0:
            raise MappingError(f"u_prior must be in [0, 1], got {u_prior}")
        return cls(
            mean=np.full((n_rows, n_cols, num_classes), 1.0 / num_classes),
            var=np.full((n_rows, n_cols, num_classes), float(prior_var)),
            uncertainty=np.full((n_rows, n_cols), float(u_prior)),
            hits=np.zeros((n_rows, n_cols), dtype=np.int64),
            prior_var=prior_var,
            u_prior=u_prior,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.hits.shape

    @property
    def num_classes(self) -> int:
        return self.mean.shape[2]

    def copy(self) -> "BeliefMaps":
        return BeliefMaps(self.mean.copy(), self.var.copy(), self.uncertainty.copy(), self.hits.copy(),
                          self.prior_var, self.u_prior)

    def _check(self, fp: Footprint) -> None:
        if not fp.inside(*self.shape):
            raise MappingError(f"footprint {fp} outside the {self.shape[0]}x{self.shape[1]} map")

    def fuse_semantic(self, m: Measurement) -> None:
        """Per cell and class scalar Kalman update of the mean/variance layers."""
        self._check(m.footprint)
        if not (m.noise > 0).all():
            raise MappingError("measurement noise must be strictly positive")
        rows, cols = m.footprint.slices
        kernels.kalman_update(self.mean[rows, cols], self.var[rows, cols],
                              np.ascontiguousarray(m.probs, dtype=np.float64),
                              np.ascontiguousarray(m.noise, dtype=np.float64))

    def update_uncertainty(self, m: Measurement) -> None:
        """Overwrite uncertainty with the latest estimate and count the hit."""
        self._check(m.footprint)
        rows, cols = m.footprint.slices
        self.uncertainty[rows, cols] = m.mi
        self.hits[rows, cols] += 1

    def fuse(self, m: Measurement) -> None:
        self.fuse_semantic(m)
        self.update_uncertainty(m)

    def effective_uncertainty(self) -> np.ndarray:
        """Uncertainty with unobserved cells at the exploration prior."""
        return np.where(self.hits > 0, self.uncertainty, self.u_prior)

    def region_sums(self, fp: Footprint) -> tuple[float, float]:
        """(sum of uncertainty, sum of hits) over a footprint."""
        self._check(fp)
        rows, cols = fp.slices
        return float(self.effective_uncertainty()[rows, cols].sum()), float(self.hits[rows, cols].sum())

    def frontier_mask(self) -> np.ndarray:
        return kernels.frontier_mask(self.hits)

    def frontier_cells(self) -> np.ndarray:
        """(K, 2) row/col indices of observed cells 4-adjacent to an unobserved one, row-major order."""
        return np.argwhere(self.frontier_mask())

    def semantic_labels(self) -> np.ndarray:
        return self.mean.argmax(axis=-1)

    def explored(self) -> np.ndarray:
        return self.hits > 0


class SummedMaps:
    """Prefix sums of a frozen map snapshot for constant-time footprint queries."""

    def __init__(self, maps: BeliefMaps):
        self.sat_u = kernels.summed_area_table(maps.effective_uncertainty())
        self.sat_h = kernels.summed_area_table(maps.hits)
        self.shape = maps.shape

    def sums(self, origins: np.ndarray, n_rows: int, n_cols: int) -> tuple[np.ndarray, np.ndarray]:
        origins = np.ascontiguousarray(origins, dtype=np.int64).reshape(-1, 2)
        return (kernels.box_sums(self.sat_u, origins, n_rows, n_cols),
                kernels.box_sums(self.sat_h, origins, n_rows, n_cols))
