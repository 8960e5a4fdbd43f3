"""Raster data model and spatial primitives.

All grids live in planar, grid-local km coordinates. Cell (i, j) of a field
has its center at (origin_x + j * cell_size, origin_y + i * cell_size), so
row index i runs along +y and column index j along +x. Arrays are row-major.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .errors import (
    EmptyField,
    GapFillRequired,
    PatchOutOfBounds,
    UnsupportedUpscale,
)


class Channel(str, Enum):
    XCO2 = "XCO2"        # ppm
    NO2 = "NO2"          # mol/m^2
    WIND_U = "WIND_U"    # m/s
    WIND_V = "WIND_V"    # m/s


@dataclass(frozen=True)
class GeoPoint:
    """Grid-local planar coordinates of a point source, in km."""

    x_km: float
    y_km: float

    def __post_init__(self):
        if not (np.isfinite(self.x_km) and np.isfinite(self.y_km)):
            raise ValueError("GeoPoint coordinates must be finite")


@dataclass(frozen=True)
class GridField:
    """Georeferenced 2D raster with a validity mask.

    values and valid_mask share one shape (ny, nx), both dims >= 2. Every
    valid cell must hold a finite value; invalid cells may hold anything.
    """

    values: np.ndarray
    valid_mask: np.ndarray
    cell_size_km: float
    origin_xy_km: tuple[float, float]
    timestamp: dt.date
    channel_id: Channel

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.valid_mask, dtype=bool)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid_mask", mask)
        object.__setattr__(self, "origin_xy_km", tuple(float(c) for c in self.origin_xy_km))
        object.__setattr__(self, "channel_id", Channel(self.channel_id))
        if values.ndim != 2 or values.shape != mask.shape:
            raise ValueError(f"values {values.shape} and valid_mask {mask.shape} must be equal 2D shapes")
        if min(values.shape) < 2:
            raise ValueError("both grid dimensions must be >= 2")
        if not self.cell_size_km > 0:
            raise ValueError("cell_size_km must be positive")
        if not np.isfinite(values[mask]).all():
            raise ValueError("valid cells must hold finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def complete(self) -> bool:
        return bool(self.valid_mask.all())

    def x_coords_km(self) -> np.ndarray:
        """Cell-center x coordinates, one per column."""
        return self.origin_xy_km[0] + np.arange(self.shape[1]) * self.cell_size_km

    def y_coords_km(self) -> np.ndarray:
        """Cell-center y coordinates, one per row."""
        return self.origin_xy_km[1] + np.arange(self.shape[0]) * self.cell_size_km

    def cell_containing(self, point: GeoPoint) -> tuple[int, int]:
        """(row, col) of the cell whose footprint contains the point."""
        h = self.cell_size_km
        i = int(np.floor((point.y_km - self.origin_xy_km[1]) / h + 0.5))
        j = int(np.floor((point.x_km - self.origin_xy_km[0]) / h + 0.5))
        return i, j


def bilinear_resample(field: GridField, target_cell_size_km: float) -> GridField:
    """Resample a complete field to a finer cell size over the same extent.

    Output values are bilinear interpolations of the four surrounding input
    cell centers; points in the outer half-cell margin clamp to the nearest
    edge. Reproduces affine functions exactly away from the clamped margin.
    """
    if not field.complete:
        raise GapFillRequired("bilinear_resample requires a fully valid field")
    if not target_cell_size_km > 0:
        raise ValueError("target_cell_size_km must be positive")
    if target_cell_size_km > field.cell_size_km:
        raise UnsupportedUpscale(
            f"target {target_cell_size_km} km is coarser than source {field.cell_size_km} km"
        )

    ny, nx = field.shape
    h, ht = field.cell_size_km, float(target_cell_size_km)
    ny_out = int(round(ny * h / ht))
    nx_out = int(round(nx * h / ht))
    # extent is preserved: first output center sits half an output cell in
    # from the input extent edge
    oy = field.origin_xy_km[1] - h / 2 + ht / 2
    ox = field.origin_xy_km[0] - h / 2 + ht / 2

    # fractional input indices of the output cell centers
    fi = (oy + np.arange(ny_out) * ht - field.origin_xy_km[1]) / h
    fj = (ox + np.arange(nx_out) * ht - field.origin_xy_km[0]) / h
    coords = np.meshgrid(fi, fj, indexing="ij")
    out = map_coordinates(field.values, coords, order=1, mode="nearest")

    return GridField(
        values=out,
        valid_mask=np.ones_like(out, dtype=bool),
        cell_size_km=ht,
        origin_xy_km=(ox, oy),
        timestamp=field.timestamp,
        channel_id=field.channel_id,
    )


def idw_fill(field: GridField, power: float = 2.0, max_neighbors: int = 12) -> GridField:
    """Fill invalid cells by inverse-distance weighting of nearby valid cells.

    Each invalid cell gets sum(w_i v_i) / sum(w_i) over its max_neighbors
    nearest valid cells, w_i = d_i**-power with center-to-center distances
    in km. Valid cells pass through unchanged.
    """
    n_valid = int(field.valid_mask.sum())
    if n_valid == 0:
        raise EmptyField("idw_fill requires at least one valid cell")
    if field.complete:
        return field

    h = field.cell_size_km
    vi, vj = np.nonzero(field.valid_mask)
    hi, hj = np.nonzero(~field.valid_mask)
    tree = cKDTree(np.column_stack([vi * h, vj * h]))
    k = min(max_neighbors, n_valid)
    dist, idx = tree.query(np.column_stack([hi * h, hj * h]), k=k)
    dist = dist.reshape(len(hi), k)
    idx = idx.reshape(len(hi), k)

    vals = field.values[vi[idx], vj[idx]]
    w = dist ** (-power)  # holes are never at zero distance from a valid cell
    filled = (w * vals).sum(axis=1) / w.sum(axis=1)

    out = field.values.copy()
    out[hi, hj] = filled
    return replace(field, values=out, valid_mask=np.ones_like(field.valid_mask))


def extract_patch(field: GridField, center: GeoPoint, size: int = 64) -> np.ndarray:
    """Cut the size x size sub-block centered on the cell containing `center`.

    The centroid cell lands at patch index (size // 2, size // 2). Windows
    crossing the field boundary are rejected, never padded.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    ny, nx = field.shape
    ci, cj = field.cell_containing(center)
    i0 = ci - size // 2
    j0 = cj - size // 2
    if i0 < 0 or j0 < 0 or i0 + size > ny or j0 + size > nx:
        raise PatchOutOfBounds(
            f"{size}x{size} window at cell ({ci}, {cj}) exceeds field shape ({ny}, {nx})"
        )
    return field.values[i0:i0 + size, j0:j0 + size].copy()


# on-disk format: <stem>.f32 raw little-endian float32, row-major, plus a
# JSON sidecar <stem>.json; an optional uint8 mask file accompanies fields
# with invalid cells

def save_field(field: GridField, stem: str | Path) -> Path:
    """Write `<stem>.f32` + `<stem>.json` (+ `<stem>.mask.u8` if masked)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    field.values.astype("<f4").tofile(stem.with_suffix(".f32"))
    meta = {
        "shape": list(field.shape),
        "cell_size_km": field.cell_size_km,
        "origin_xy_km": list(field.origin_xy_km),
        "timestamp": field.timestamp.isoformat(),
        "channel_id": field.channel_id.value,
    }
    if not field.complete:
        mask_name = stem.name + ".mask.u8"
        field.valid_mask.astype(np.uint8).tofile(stem.parent / mask_name)
        meta["mask_file"] = mask_name
    with open(stem.with_suffix(".json"), "w") as f:
        json.dump(meta, f, indent=2)
    return stem.with_suffix(".json")


def load_field(stem: str | Path) -> GridField:
    """Read a field written by save_field. `stem` may include .json or .f32."""
    stem = Path(stem)
    if stem.suffix in (".json", ".f32"):
        stem = stem.with_suffix("")
    with open(stem.with_suffix(".json")) as f:
        meta = json.load(f)
    ny, nx = meta["shape"]
    values = np.fromfile(stem.with_suffix(".f32"), dtype="<f4").reshape(ny, nx)
    if meta.get("mask_file"):
        mask = np.fromfile(stem.parent / meta["mask_file"], dtype=np.uint8).reshape(ny, nx).astype(bool)
    else:
        mask = np.ones((ny, nx), dtype=bool)
    return GridField(
        values=values,
        valid_mask=mask,
        cell_size_km=float(meta["cell_size_km"]),
        origin_xy_km=tuple(meta["origin_xy_km"]),
        timestamp=dt.date.fromisoformat(meta["timestamp"]),
        channel_id=Channel(meta["channel_id"]),
    )
