"""Ground-truth world, nadir camera and world/grid conversions.

Grid arrays are indexed ``[row, col]`` with rows running along +y and columns
along +x. A world coordinate ``v`` falls into cell ``ceil(v / res) - 1``, so a
pose lying exactly on a cell boundary belongs to the lower-index cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MIN_SIDE_CELLS = 16
MIN_CLASS_FRACTION = 0.01


class TerrainError(ValueError):
    pass


class CaptureError(TerrainError):
    """Footprint leaves the terrain. ``suggestion`` is the nearest valid pose."""

    def __init__(self, message: str, suggestion: "Pose | None" = None):
        super().__init__(message)
        self.suggestion = suggestion


@dataclass(frozen=True, eq=False)
class TerrainRaster:
    labels: np.ndarray
    appearance: np.ndarray
    resolution_m: float
    num_classes: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        appearance = np.ascontiguousarray(self.appearance, dtype=np.float64)
        if labels.ndim != 2:
            raise TerrainError("labels must be a 2-D grid")
        if appearance.ndim != 3 or appearance.shape[:2] != labels.shape:
            raise TerrainError("appearance must be (rows, cols, D) matching labels")
        if not self.resolution_m > 0:
            raise TerrainError(f"resolution_m must be > 0, got {self.resolution_m}")
        if self.num_classes < 1:
            raise TerrainError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise TerrainError(f"labels outside [0, {self.num_classes})")
        labels.flags.writeable = False
        appearance.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "appearance", appearance)

    @property
    def height_cells(self) -> int:
        return self.labels.shape[0]

    @property
    def width_cells(self) -> int:
        return self.labels.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.appearance.shape[2]

    @property
    def extent_m(self) -> tuple[float, float]:
        """(width, height) in meters."""
        return self.width_cells * self.resolution_m, self.height_cells * self.resolution_m

    def crop(self, row0: int, col0: int, n_rows: int, n_cols: int) -> "TerrainRaster":
        """Sub-raster whose cell (0, 0) is cell (row0, col0) of this one."""
        if row0 < 0 or col0 < 0 or row0 + n_rows > self.height_cells or col0 + n_cols > self.width_cells:
            raise TerrainError("crop rectangle outside the raster")
        return TerrainRaster(
            labels=self.labels[row0:row0 + n_rows, col0:col0 + n_cols],
            appearance=self.appearance[row0:row0 + n_rows, col0:col0 + n_cols],
            resolution_m=self.resolution_m,
            num_classes=self.num_classes,
        )

    def class_fractions(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_classes) / self.labels.size


@dataclass(frozen=True)
class CameraConfig:
    width_px: int = 100
    height_px: int = 100
    gsd_m: float = 0.15
    altitude_m: float = 30.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise TerrainError("image dimensions must be positive")
        if not self.gsd_m > 0:
            raise TerrainError("gsd_m must be > 0")
        if not self.altitude_m > 0:
            raise TerrainError("altitude_m must be > 0")
        if self.noise_sigma < 0:
            raise TerrainError("noise_sigma must be >= 0")

    @property
    def footprint_m(self) -> tuple[float, float]:
        """(width, height) of the ground footprint in meters."""
        return self.width_px * self.gsd_m, self.height_px * self.gsd_m


@dataclass(frozen=True)
class Pose:
    x_m: float
    y_m: float
    z_m: float = 30.0

    def xy(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m])

    def distance(self, other: "Pose") -> float:
        return math.dist((self.x_m, self.y_m, self.z_m), (other.x_m, other.y_m, other.z_m))


@dataclass(frozen=True)
class Footprint:
    """Axis-aligned cell rectangle ``[row0, row0 + n_rows) x [col0, col0 + n_cols)``."""

    row0: int
    col0: int
    n_rows: int
    n_cols: int

    @property
    def row1(self) -> int:
        return self.row0 + self.n_rows

    @property
    def col1(self) -> int:
        return self.col0 + self.n_cols

    @property
    def area(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.row0, self.row1), slice(self.col0, self.col1)

    def inside(self, n_rows: int, n_cols: int) -> bool:
        return self.row0 >= 0 and self.col0 >= 0 and self.row1 <= n_rows and self.col1 <= n_cols

    def intersection_area(self, other: "Footprint") -> int:
        dr = min(self.row1, other.row1) - max(self.row0, other.row0)
        dc = min(self.col1, other.col1) - max(self.col0, other.col0)
        return max(dr, 0) * max(dc, 0)


@dataclass(frozen=True, eq=False)
class ImageSample:
    pose: Pose
    features: np.ndarray  # (height_px, width_px, D)
    gt_labels: np.ndarray  # (height_px, width_px)
    footprint: Footprint

    @property
    def shape(self) -> tuple[int, int]:
        return self.gt_labels.shape


def cell_index(coord_m: float, resolution_m: float) -> int:
    return int(math.ceil(coord_m / resolution_m)) - 1


def _integer_ratio(a: float, b: float) -> int | None:
    q = a / b
    k = round(q)
    if k >= 1 and abs(q - k) <= 1e-9 * max(1.0, q):
        return k
    return None


def pixel_cell_ratio(camera: CameraConfig, resolution_m: float) -> tuple[int, int]:
    """``(cells_per_pixel, pixels_per_cell)`` along one axis; one of them is 1."""
    cells = _integer_ratio(camera.gsd_m, resolution_m)
    if cells is not None:
        return cells, 1
    pixels = _integer_ratio(resolution_m, camera.gsd_m)
    if pixels is not None:
        return 1, pixels
    raise TerrainError(
        f"gsd_m={camera.gsd_m} and resolution_m={resolution_m} are not integer multiples of each other"
    )


def footprint_shape(camera: CameraConfig, resolution_m: float) -> tuple[int, int]:
    """(n_rows, n_cols) of the footprint in cells."""
    pixel_cell_ratio(camera, resolution_m)
    width_m, height_m = camera.footprint_m
    return int(round(height_m / resolution_m)), int(round(width_m / resolution_m))


def pose_bounds(camera: CameraConfig, raster: TerrainRaster) -> tuple[float, float, float, float]:
    """``(x_lo, x_hi, y_lo, y_hi)``: cell-centre range keeping the footprint inside."""
    n_rows, n_cols = footprint_shape(camera, raster.resolution_m)
    if n_rows > raster.height_cells or n_cols > raster.width_cells:
        raise TerrainError("camera footprint is larger than the terrain")
    res = raster.resolution_m
    col_lo, col_hi = n_cols // 2, raster.width_cells - n_cols + n_cols // 2
    row_lo, row_hi = n_rows // 2, raster.height_cells - n_rows + n_rows // 2
    return (col_lo + 0.5) * res, (col_hi + 0.5) * res, (row_lo + 0.5) * res, (row_hi + 0.5) * res


def clamp_pose(pose: Pose, camera: CameraConfig, raster: TerrainRaster) -> Pose:
    x_lo, x_hi, y_lo, y_hi = pose_bounds(camera, raster)
    return Pose(min(max(pose.x_m, x_lo), x_hi), min(max(pose.y_m, y_lo), y_hi), pose.z_m)


def footprint_cells(camera: CameraConfig, pose: Pose, raster: TerrainRaster) -> Footprint:
    n_rows, n_cols = footprint_shape(camera, raster.resolution_m)
    row = cell_index(pose.y_m, raster.resolution_m)
    col = cell_index(pose.x_m, raster.resolution_m)
    fp = Footprint(row - n_rows // 2, col - n_cols // 2, n_rows, n_cols)
    if not fp.inside(raster.height_cells, raster.width_cells):
        suggestion = None
        if n_rows <= raster.height_cells and n_cols <= raster.width_cells:
            suggestion = clamp_pose(pose, camera, raster)
        raise CaptureError(
            f"footprint rows [{fp.row0}, {fp.row1}) cols [{fp.col0}, {fp.col1}) at "
            f"({pose.x_m:.3f}, {pose.y_m:.3f}) leaves the {raster.height_cells}x{raster.width_cells} grid",
            suggestion,
        )
    return fp


def pixel_cell_indices(camera: CameraConfig, footprint: Footprint, resolution_m: float):
    """Footprint-relative cell row/col index for every image row/col."""
    cells, pixels = pixel_cell_ratio(camera, resolution_m)
    rows = np.arange(camera.height_px)
    cols = np.arange(camera.width_px)
    if pixels > 1:
        return rows // pixels, cols // pixels
    # a pixel spanning several cells samples the one under its centre
    return rows * cells + cells // 2, cols * cells + cells // 2


def capture_image(raster: TerrainRaster, camera: CameraConfig, pose: Pose, rng_seed=None) -> ImageSample:
    """Simulate a nadir capture; noise is drawn from ``rng_seed`` only."""
    fp = footprint_cells(camera, pose, raster)
    rows, cols = pixel_cell_indices(camera, fp, raster.resolution_m)
    rr = fp.row0 + rows[:, None]
    cc = fp.col0 + cols[None, :]
    features = raster.appearance[rr, cc].copy()
    if camera.noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        features += rng.normal(0.0, camera.noise_sigma, size=features.shape)
    return ImageSample(pose=pose, features=features, gt_labels=raster.labels[rr, cc].copy(), footprint=fp)


def _class_prototypes(rng: np.random.Generator, num_classes: int, feature_dim: int,
                      min_separation: float) -> np.ndarray:
    for _ in range(10_000):
        protos = rng.uniform(0.0, 1.0, size=(num_classes, feature_dim))
        d = np.linalg.norm(protos[:, None] - protos[None], axis=-1)
        if num_classes == 1 or d[np.triu_indices(num_classes, 1)].min() >= min_separation:
            return protos
    raise TerrainError(
        f"could not place {num_classes} prototypes {min_separation} apart in [0, 1]^{feature_dim}"
    )


def generate_synthetic_terrain(seed: int, width_cells: int, height_cells: int, num_classes: int,
                               blob_scale: float, feature_dim: int = 3, resolution_m: float = 0.15,
                               class_bias_std: float = 0.0, min_separation: float = 0.3) -> TerrainRaster:
    """Blob-shaped class regions from smoothed noise fields.

    Each class owns a Gaussian-smoothed white-noise field; a cell takes the
    class with the largest field value. ``class_bias_std`` offsets the fields
    per class to make class frequencies unequal. Classes under 1% coverage
    get their offset raised until they reach it. Appearance is the class
    prototype, so the raster is class-separable; sensor noise is added at
    capture time, not here.
    """
    if num_classes < 2:
        raise TerrainError(f"num_classes must be >= 2, got {num_classes}")
    if not blob_scale > 0:
        raise TerrainError(f"blob_scale must be > 0, got {blob_scale}")
    if width_cells < MIN_SIDE_CELLS or height_cells < MIN_SIDE_CELLS:
        raise TerrainError(f"terrain sides must be >= {MIN_SIDE_CELLS} cells")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((num_classes, height_cells, width_cells))
    fields = ndimage.gaussian_filter(noise, sigma=(0, blob_scale, blob_scale), mode="reflect")
    fields /= fields.std(axis=(1, 2), keepdims=True)
    bias = rng.normal(0.0, class_bias_std, size=num_classes) if class_bias_std > 0 else np.zeros(num_classes)
    for _ in range(1000):
        labels = np.argmax(fields + bias[:, None, None], axis=0)
        frac = np.bincount(labels.ravel(), minlength=num_classes) / labels.size
        short = frac < MIN_CLASS_FRACTION
        if not short.any():
            break
        bias[short] += 0.05
    else:  # pragma: no cover - the bias sweep always terminates in practice
        raise TerrainError("could not give every class 1% coverage")
    protos = _class_prototypes(rng, num_classes, feature_dim, min_separation)
    return TerrainRaster(labels=labels, appearance=protos[labels], resolution_m=resolution_m,
                         num_classes=num_classes)
