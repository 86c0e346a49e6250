"""Metric rectangular grid over a bounding box, and dissolving adjacent cells into zones."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Tuple

import numpy as np

from .core import BBox, GpsPoint

METERS_PER_DEG_LAT = 111_320.0


class CellId(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class GridSpec:
    """Equirectangular tessellation anchored at the bbox south-west corner.

    Longitude degrees are scaled by the cosine of the bbox mid-latitude.
    """

    bbox: BBox
    cell_side_m: float

    def __post_init__(self) -> None:
        if not self.cell_side_m > 0:
            raise ValueError("cell_side_m must be > 0")
        lat0, lon0, lat1, lon1 = self.bbox
        if not (lat0 < lat1 and lon0 < lon1):
            raise ValueError("bbox must be (lat_min, lon_min, lat_max, lon_max)")

    @property
    def origin(self) -> Tuple[float, float]:
        return self.bbox[0], self.bbox[1]

    @property
    def meters_per_degree_lat(self) -> float:
        return METERS_PER_DEG_LAT

    @property
    def meters_per_degree_lon(self) -> float:
        mid = (self.bbox[0] + self.bbox[2]) / 2.0
        return METERS_PER_DEG_LAT * math.cos(math.radians(mid))

    @property
    def n_rows(self) -> int:
        span = (self.bbox[2] - self.bbox[0]) * self.meters_per_degree_lat
        return max(1, math.ceil(span / self.cell_side_m))

    @property
    def n_cols(self) -> int:
        span = (self.bbox[3] - self.bbox[1]) * self.meters_per_degree_lon
        return max(1, math.ceil(span / self.cell_side_m))

    def contains(self, lat: float, lon: float) -> bool:
        lat0, lon0, lat1, lon1 = self.bbox
        return lat0 <= lat <= lat1 and lon0 <= lon <= lon1

    def cell_of_latlon(self, lat: float, lon: float) -> CellId:
        if not self.contains(lat, lon):
            raise ValueError(f"point ({lat}, {lon}) outside grid bbox {self.bbox}")
        row = math.floor((lat - self.bbox[0]) * self.meters_per_degree_lat / self.cell_side_m)
        col = math.floor((lon - self.bbox[1]) * self.meters_per_degree_lon / self.cell_side_m)
        return CellId(min(row, self.n_rows - 1), min(col, self.n_cols - 1))

    def cells_of(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        """Vectorized lookup; returns an (n, 2) int array of (row, col)."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        lat0, lon0, lat1, lon1 = self.bbox
        inside = (lat >= lat0) & (lat <= lat1) & (lon >= lon0) & (lon <= lon1)
        if not np.all(inside):
            raise ValueError(f"{int(np.sum(~inside))} point(s) outside grid bbox {self.bbox}")
        rows = np.floor((lat - lat0) * self.meters_per_degree_lat / self.cell_side_m).astype(np.int64)
        cols = np.floor((lon - lon0) * self.meters_per_degree_lon / self.cell_side_m).astype(np.int64)
        return np.stack([np.minimum(rows, self.n_rows - 1), np.minimum(cols, self.n_cols - 1)], axis=-1)

    def cell_center(self, cell: CellId) -> Tuple[float, float]:
        lat = self.bbox[0] + (cell.row + 0.5) * self.cell_side_m / self.meters_per_degree_lat
        lon = self.bbox[1] + (cell.col + 0.5) * self.cell_side_m / self.meters_per_degree_lon
        return lat, lon


def cell_of(spec: GridSpec, p: GpsPoint) -> CellId:
    """Grid cell containing ``p``; points on the max edge clamp to the last row/column."""
    return spec.cell_of_latlon(p.lat, p.lon)


@dataclass(frozen=True)
class Zone:
    """A connected, non-empty group of cells (8-neighborhood)."""

    cells: FrozenSet[CellId]

    def __post_init__(self) -> None:
        if not self.cells:
            raise ValueError("zone must contain at least one cell")
        object.__setattr__(self, "cells", frozenset(CellId(*c) for c in self.cells))

    @property
    def anchor(self) -> CellId:
        """Lexicographically smallest cell, used for deterministic ordering."""
        return min(self.cells)

    def __contains__(self, cell: object) -> bool:
        return cell in self.cells


def neighbors8(cell: CellId) -> List[CellId]:
    r, c = cell
    return [CellId(r + dr, c + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]


def dissolve_cells(cells: Iterable[CellId]) -> List[Zone]:
    """Partition cells into maximal 8-connected components.

    Zones are returned sorted by their anchor cell.
    """
    remaining = {CellId(*c) for c in cells}
    zones: List[Zone] = []
    for seed in sorted(remaining):
        if seed not in remaining:
            continue
        remaining.discard(seed)
        component = {seed}
        stack = [seed]
        while stack:
            for nb in neighbors8(stack.pop()):
                if nb in remaining:
                    remaining.discard(nb)
                    component.add(nb)
                    stack.append(nb)
        zones.append(Zone(frozenset(component)))
    return zones


def zone_index(zones: Iterable[Zone]) -> Dict[CellId, int]:
    """Cell -> position of the zone containing it."""
    return {cell: i for i, z in enumerate(zones) for cell in z.cells}
