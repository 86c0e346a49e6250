"""Truncation of trip ends with per-trip random radii."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .core import Trip, TripDataset, derived_rng, haversine_np


@dataclass(frozen=True)
class TruncationSpec:
    radius_min: float = 100.0
    radius_max: float = 300.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.radius_min <= self.radius_max:
            raise ValueError("need 0 < radius_min <= radius_max")


@dataclass(frozen=True)
class DropRecord:
    trip_id: str
    r_start_m: float
    r_end_m: float
    dropped: bool


def truncate_trip(t: Trip, r_start: float, r_end: float) -> Optional[Trip]:
    """Cut the points within ``r_start`` of the original start and ``r_end`` of the original end.

    Returns None when fewer than two points survive.
    """
    if r_start <= 0 or r_end <= 0:
        raise ValueError("radii must be > 0")
    d_start = haversine_np(t.lat[0], t.lon[0], t.lat, t.lon)
    d_end = haversine_np(t.lat[-1], t.lon[-1], t.lat, t.lon)
    n = len(t)
    far_from_start = np.flatnonzero(d_start >= r_start)
    far_from_end = np.flatnonzero(d_end >= r_end)
    if far_from_start.size == 0 or far_from_end.size == 0:
        return None
    first = int(far_from_start[0])
    last = int(far_from_end[-1])
    if last - first + 1 < 2:
        return None
    if first == 0 and last == n - 1:
        return t
    return t.slice(first, last + 1)


def truncate_dataset(ds: TripDataset, spec: TruncationSpec) -> Tuple[TripDataset, List[DropRecord]]:
    trips = []
    records = []
    for trip in ds:
        rng = derived_rng(spec.rng_seed, trip.trip_id)
        r_start, r_end = rng.uniform(spec.radius_min, spec.radius_max, size=2)
        out = truncate_trip(trip, float(r_start), float(r_end))
        records.append(DropRecord(trip.trip_id, float(r_start), float(r_end), out is None))
        if out is not None:
            trips.append(out)
    kept = {t.trip_id for t in trips}
    gt = None
    if ds.ground_truth is not None:
        gt = {k: v for k, v in ds.ground_truth.items() if k in kept}
    return TripDataset.from_trips(trips, gt), records


def write_drop_report(records: Iterable[DropRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "r_start_m", "r_end_m", "dropped"])
        for r in records:
            w.writerow([r.trip_id, repr(r.r_start_m), repr(r.r_end_m), int(r.dropped)])
