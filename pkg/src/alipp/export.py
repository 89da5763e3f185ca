"""Raster text files, PNG renders and path CSVs.

Raster file layout (plain text, whitespace separated)::

    ALIPP-RASTER 1
    <width> <height> <num_classes> <feature_dim> <resolution_m>
    <height lines of width integer labels, row 0 first>
    <height lines of width*feature_dim floats, cell-major within a row>

Floats are written with 17 significant digits so a read-back is bit-exact.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .terrain import TerrainRaster

MAGIC = "ALIPP-RASTER"
VERSION = 1

# fixed legend, indexed by class id; wraps for larger C
CLASS_COLORS = np.array([
    (255, 255, 255),  # impervious-surface white
    (0, 0, 255),
    (0, 255, 255),
    (0, 160, 0),
    (255, 255, 0),
    (255, 0, 0),
    (160, 90, 40),
    (200, 0, 200),
], dtype=np.uint8)
UNEXPLORED = (128, 128, 128)
PATH_COLOR = (255, 140, 0)


class RasterFormatError(ValueError):
    pass


def write_raster(path, raster: TerrainRaster) -> None:
    h, w, d = raster.appearance.shape
    with open(path, "w") as fh:
        fh.write(f"{MAGIC} {VERSION}\n")
        fh.write(f"{w} {h} {raster.num_classes} {d} {raster.resolution_m!r}\n")
        np.savetxt(fh, raster.labels, fmt="%d")
        np.savetxt(fh, raster.appearance.reshape(h, w * d), fmt="%.17g")


def read_raster(path) -> TerrainRaster:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2 or head[0] != MAGIC:
            raise RasterFormatError(f"{path}: not a raster file")
        if int(head[1]) != VERSION:
            raise RasterFormatError(f"{path}: unsupported version {head[1]}")
        dims = fh.readline().split()
        if len(dims) != 5:
            raise RasterFormatError(f"{path}: malformed dimension line")
        w, h, c, d = (int(v) for v in dims[:4])
        res = float(dims[4])
        body = fh.read().split()
    if len(body) != h * w + h * w * d:
        raise RasterFormatError(f"{path}: expected {h * w * (1 + d)} values, found {len(body)}")
    labels = np.array(body[:h * w], dtype=np.int64).reshape(h, w)
    appearance = np.array(body[h * w:], dtype=np.float64).reshape(h, w, d)
    return TerrainRaster(labels=labels, appearance=appearance, resolution_m=res, num_classes=c)


def label_rgb(labels: np.ndarray, unexplored: np.ndarray | None = None) -> np.ndarray:
    rgb = CLASS_COLORS[np.asarray(labels) % len(CLASS_COLORS)]
    if unexplored is not None:
        rgb = rgb.copy()
        rgb[unexplored] = UNEXPLORED
    return rgb


def heat_rgb(values: np.ndarray, unexplored: np.ndarray | None = None) -> np.ndarray:
    """Black-red-yellow ramp over [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.clip(2 * v, 0, 1), np.clip(2 * v - 1, 0, 1), np.zeros_like(v)], axis=-1)
    rgb = (rgb * 255).round().astype(np.uint8)
    if unexplored is not None:
        rgb[unexplored] = UNEXPLORED
    return rgb


def _draw_path(img: Image.Image, path_xy, resolution_m: float, scale: int) -> None:
    if not path_xy:
        return
    draw = ImageDraw.Draw(img)
    # world y runs along rows; the image is drawn with row 0 on top
    pts = [(x / resolution_m * scale, y / resolution_m * scale) for x, y in path_xy]
    if len(pts) > 1:
        draw.line(pts, fill=PATH_COLOR, width=max(1, scale))
    r = 2 * scale
    for px, py in pts:
        draw.line([(px - r, py - r), (px + r, py + r)], fill=PATH_COLOR, width=max(1, scale // 2))
        draw.line([(px - r, py + r), (px + r, py - r)], fill=PATH_COLOR, width=max(1, scale // 2))


def save_png(path, rgb: np.ndarray, path_xy=None, resolution_m: float = 1.0, scale: int = 2) -> None:
    img = Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB")
    if scale > 1:
        img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    if path_xy is not None:
        _draw_path(img, path_xy, resolution_m, scale)
    img.save(path)


def save_labels_png(path, raster: TerrainRaster, scale: int = 1) -> None:
    save_png(path, label_rgb(raster.labels), scale=scale)


PATH_FIELDS = ("t", "x", "y", "z", "leg_cost")


def write_path_csv(path, poses, leg_costs) -> None:
    """One row per capture; ``leg_cost`` is the flight time into that pose (0 for the first)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATH_FIELDS)
        for t, (pose, cost) in enumerate(zip(poses, leg_costs)):
            writer.writerow([t, repr(float(pose.x_m)), repr(float(pose.y_m)), repr(float(pose.z_m)),
                             repr(float(cost))])


def read_path_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return [{k: (int(v) if k == "t" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
