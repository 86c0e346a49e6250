"""Core data model: GPS points, trips, datasets, cluster assignments and attack parameters."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# (lat_min, lon_min, lat_max, lon_max)
BBox = Tuple[float, float, float, float]

BERLIN_BBOX: BBox = (52.100, 12.562, 52.803, 14.129)
BEIJING_BBOX: BBox = (39.600, 116.080, 40.270, 116.690)

CITY_PRESETS: Dict[str, Tuple[BBox, str]] = {
    "berlin": (BERLIN_BBOX, "Europe/Berlin"),
    "beijing": (BEIJING_BBOX, "Asia/Shanghai"),
}

_MIN_TS = datetime(1970, 1, 1, tzinfo=timezone.utc).timestamp()
_MAX_TS = datetime(2100, 12, 31, 23, 59, 59, tzinfo=timezone.utc).timestamp()


@dataclass(frozen=True)
class GpsPoint:
    """A single WGS84 fix. ``timestamp`` is seconds since the Unix epoch (UTC)."""

    lat: float
    lon: float
    timestamp: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if not (math.isfinite(self.timestamp) and _MIN_TS <= self.timestamp <= _MAX_TS):
            raise ValueError(f"timestamp out of range: {self.timestamp}")

    @property
    def time(self) -> datetime:
        return datetime.fromtimestamp(self.timestamp, tz=timezone.utc)


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trip:
    """Temporally ordered sequence of at least two GPS fixes.

    Coordinates and timestamps are kept as read-only numpy columns; use
    :attr:`points` for a list of :class:`GpsPoint`.
    """

    trip_id: str
    lat: np.ndarray
    lon: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "lat", _frozen(self.lat))
        object.__setattr__(self, "lon", _frozen(self.lon))
        object.__setattr__(self, "t", _frozen(self.t))
        n = self.lat.size
        if self.lon.size != n or self.t.size != n:
            raise ValueError(f"trip {self.trip_id}: column lengths differ")
        if n < 2:
            raise ValueError(f"trip {self.trip_id}: needs at least 2 points, got {n}")
        if np.any(np.abs(self.lat) > 90) or np.any(np.abs(self.lon) > 180):
            raise ValueError(f"trip {self.trip_id}: coordinate out of range")
        if not np.all(np.isfinite(self.t)):
            raise ValueError(f"trip {self.trip_id}: non-finite timestamp")
        if np.any(np.diff(self.t) < 0):
            raise ValueError(f"trip {self.trip_id}: timestamps must be non-decreasing")

    @classmethod
    def from_points(cls, trip_id: str, points: Sequence[GpsPoint]) -> "Trip":
        return cls(
            trip_id,
            [p.lat for p in points],
            [p.lon for p in points],
            [p.timestamp for p in points],
        )

    def __len__(self) -> int:
        return int(self.lat.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trip):
            return NotImplemented
        return (
            self.trip_id == other.trip_id
            and np.array_equal(self.lat, other.lat)
            and np.array_equal(self.lon, other.lon)
            and np.array_equal(self.t, other.t)
        )

    def __hash__(self) -> int:
        return hash(self.trip_id)

    @property
    def points(self) -> List[GpsPoint]:
        return [GpsPoint(float(a), float(b), float(c)) for a, b, c in zip(self.lat, self.lon, self.t)]

    @property
    def start_point(self) -> GpsPoint:
        return GpsPoint(float(self.lat[0]), float(self.lon[0]), float(self.t[0]))

    @property
    def end_point(self) -> GpsPoint:
        return GpsPoint(float(self.lat[-1]), float(self.lon[-1]), float(self.t[-1]))

    @property
    def start_time(self) -> float:
        return float(self.t[0])

    @property
    def end_time(self) -> float:
        return float(self.t[-1])

    @property
    def duration_s(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def length_m(self) -> float:
        """Path length: sum of consecutive haversine segments."""
        seg = haversine_np(self.lat[:-1], self.lon[:-1], self.lat[1:], self.lon[1:])
        return float(np.sum(seg))

    def reversed(self) -> "Trip":
        # spatial reversal only; timestamps stay ascending so the result is still a valid Trip
        return Trip(self.trip_id, self.lat[::-1], self.lon[::-1], self.t)

    def slice(self, start: int, stop: int) -> "Trip":
        return Trip(self.trip_id, self.lat[start:stop], self.lon[start:stop], self.t[start:stop])


@dataclass(frozen=True)
class TripDataset:
    """Collection of trips keyed by ``trip_id`` with optional ground-truth user labels."""

    trips: Mapping[str, Trip]
    ground_truth: Optional[Mapping[str, str]] = None

    def __post_init__(self) -> None:
        trips = dict(self.trips)
        for key, trip in trips.items():
            if key != trip.trip_id:
                raise ValueError(f"trip keyed as {key!r} has id {trip.trip_id!r}")
        object.__setattr__(self, "trips", trips)
        if self.ground_truth is not None:
            gt = dict(self.ground_truth)
            if set(gt) != set(trips):
                raise ValueError("ground truth keys must equal the trip id set")
            object.__setattr__(self, "ground_truth", gt)

    @classmethod
    def from_trips(cls, trips: Iterable[Trip], ground_truth: Optional[Mapping[str, str]] = None) -> "TripDataset":
        table: Dict[str, Trip] = {}
        for trip in trips:
            if trip.trip_id in table:
                raise ValueError(f"duplicate trip id {trip.trip_id!r}")
            table[trip.trip_id] = trip
        return cls(table, ground_truth)

    def __len__(self) -> int:
        return len(self.trips)

    def __iter__(self) -> Iterator[Trip]:
        for tid in self.trip_ids:
            yield self.trips[tid]

    @property
    def trip_ids(self) -> List[str]:
        return sorted(self.trips)

    @property
    def has_labels(self) -> bool:
        return self.ground_truth is not None

    def subset(self, trip_ids: Iterable[str]) -> "TripDataset":
        keep = set(trip_ids)
        trips = {k: v for k, v in self.trips.items() if k in keep}
        gt = None
        if self.ground_truth is not None:
            gt = {k: v for k, v in self.ground_truth.items() if k in keep}
        return TripDataset(trips, gt)

    def without_labels(self) -> "TripDataset":
        return TripDataset(self.trips, None)

    def users(self) -> Dict[str, List[str]]:
        """True user label -> sorted trip ids. Requires ground truth."""
        if self.ground_truth is None:
            raise ValueError("dataset has no ground truth")
        out: Dict[str, List[str]] = {}
        for tid in self.trip_ids:
            out.setdefault(self.ground_truth[tid], []).append(tid)
        return out


@dataclass(frozen=True)
class ClusterAssignment:
    """Mapping trip_id -> reconstructed user id."""

    assignment: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "assignment", dict(self.assignment))

    def __len__(self) -> int:
        return len(self.assignment)

    def __getitem__(self, trip_id: str) -> int:
        return self.assignment[trip_id]

    def clusters(self) -> Dict[int, List[str]]:
        out: Dict[int, List[str]] = {}
        for tid in sorted(self.assignment):
            out.setdefault(self.assignment[tid], []).append(tid)
        return out

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def is_total_for(self, ds: TripDataset) -> bool:
        return set(self.assignment) == set(ds.trips)

    def canonical(self) -> "ClusterAssignment":
        """Relabel clusters 0..k-1 in order of their smallest trip id."""
        groups = sorted(self.clusters().values(), key=lambda ids: ids[0])
        return ClusterAssignment({tid: i for i, ids in enumerate(groups) for tid in ids})

    def labels_for(self, trip_ids: Sequence[str]) -> List[int]:
        return [self.assignment[t] for t in trip_ids]


@dataclass(frozen=True)
class AttackParams:
    """Attack configuration. Hour windows are offsets relative to the anchoring event."""

    s_cell: float = 200.0
    h_concat: float = 8.0
    concat_window: Tuple[float, float] = (-4.0, 4.0)
    t_morning: Tuple[float, float] = (6.0, 10.0)
    t_evening: Tuple[float, float] = (18.0, 24.0)
    morning_window: Tuple[float, float] = (-2.0, 2.0)
    evening_window: Tuple[float, float] = (0.0, 4.0)
    lcss_epsilon: float = 200.0
    s_cell_tfidf: float = 500.0
    n_matches: int = 5
    q_match: float = 0.75
    bbox: BBox = BERLIN_BBOX
    timezone: str = "Europe/Berlin"

    def __post_init__(self) -> None:
        for name in ("s_cell", "h_concat", "lcss_epsilon", "s_cell_tfidf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if int(self.n_matches) != self.n_matches or self.n_matches < 1:
            raise ValueError("n_matches must be a positive integer")
        if not 0.0 < self.q_match < 1.0:
            raise ValueError("q_match must lie strictly between 0 and 1")
        for name in ("t_morning", "t_evening"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo < hi <= 24.0:
                raise ValueError(f"{name} must be an increasing interval within [0, 24]")
        for name in ("concat_window", "morning_window", "evening_window"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must satisfy before <= after")
        m0, m1 = self.t_morning
        e0, e1 = self.t_evening
        if m0 < e1 and e0 < m1:
            raise ValueError("t_morning and t_evening must be disjoint")
        lat0, lon0, lat1, lon1 = self.bbox
        if not (lat0 < lat1 and lon0 < lon1):
            raise ValueError("bbox must be (lat_min, lon_min, lat_max, lon_max)")

    @classmethod
    def for_city(cls, city: str, **overrides) -> "AttackParams":
        bbox, tz = CITY_PRESETS[city]
        if city == "beijing":
            overrides.setdefault("n_matches", 100)
        return cls(bbox=bbox, timezone=tz, **overrides)


def trips_overlap_in_time(a: Trip, b: Trip) -> bool:
    """True iff the two trips share an instant; touching endpoints do not count."""
    return a.start_time < b.end_time and b.start_time < a.end_time


def haversine_m(a: GpsPoint, b: GpsPoint) -> float:
    """Great-circle distance in meters between two points."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_np(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine; inputs broadcast against each other."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def point_in_bbox(lat: float, lon: float, bbox: BBox) -> bool:
    lat0, lon0, lat1, lon1 = bbox
    return lat0 <= lat <= lat1 and lon0 <= lon <= lon1


def trip_in_bbox(trip: Trip, bbox: BBox) -> bool:
    lat0, lon0, lat1, lon1 = bbox
    return bool(
        np.all((trip.lat >= lat0) & (trip.lat <= lat1) & (trip.lon >= lon0) & (trip.lon <= lon1))
    )


def derived_rng(seed: int, key: str) -> np.random.Generator:
    """Generator seeded from (seed, key); lets per-trip/per-user streams ignore iteration order."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *words]))
