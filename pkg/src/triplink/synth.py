"""Synthetic commuter datasets with ground truth, for oracle and end-to-end tests.

Every user owns a home plus one to three destinations (the first is "work").
All anchor locations of all users are at least ``home_separation_m`` apart,
and each trip is a straight jittered polyline between two anchors.

Routine days: home -> work leaving in the morning, optionally a work -> X -> work
loop after lunch, and work -> home in the evening. Other days: a late-morning
excursion from home through one or two destinations and back before 18:00.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import List, Tuple
from zoneinfo import ZoneInfo

import numpy as np

from .core import BERLIN_BBOX, BBox, Trip, TripDataset, haversine_np

_M_PER_DEG = 111_320.0


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 20
    days: int = 14
    bbox: BBox = BERLIN_BBOX
    home_separation_m: float = 1000.0
    routine_strength: float = 1.0
    noise_sigma_m: float = 0.0
    points_per_km: float = 20.0
    rng_seed: int = 0
    timezone: str = "Europe/Berlin"
    start_date: str = "2022-10-31"
    max_trip_km: float = 5.0
    speed_kmh: float = 15.0
    midday_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if not self.home_separation_m > 0:
            raise ValueError("home_separation_m must be > 0")
        if not 0.0 <= self.routine_strength <= 1.0:
            raise ValueError("routine_strength must lie in [0, 1]")
        if self.noise_sigma_m < 0:
            raise ValueError("noise_sigma_m must be >= 0")
        if not self.points_per_km > 0 or not self.speed_kmh > 0:
            raise ValueError("points_per_km and speed_kmh must be > 0")
        if self.max_trip_km * 1000 < 2 * max(self.home_separation_m, 500.0):
            raise ValueError("max_trip_km too small for the anchor separation")


def _offset(lat: float, lon: float, north_m: float, east_m: float) -> Tuple[float, float]:
    return lat + north_m / _M_PER_DEG, lon + east_m / (_M_PER_DEG * math.cos(math.radians(lat)))


def _place_anchors(cfg: SynthConfig, rng: np.random.Generator) -> List[List[Tuple[float, float]]]:
    lat0, lon0, lat1, lon1 = cfg.bbox
    margin = cfg.max_trip_km * 1000 / 2
    mid = (lat0 + lat1) / 2
    dlat = margin / _M_PER_DEG
    dlon = margin / (_M_PER_DEG * math.cos(math.radians(mid)))
    if lat1 - lat0 <= 2 * dlat or lon1 - lon0 <= 2 * dlon:
        raise ValueError("bbox too small for the requested trip extent")
    sep = cfg.home_separation_m
    local_min = max(sep, 500.0)
    placed: List[Tuple[float, float]] = []

    def ok(p, min_own=None, own=()):
        if placed:
            d = haversine_np(p[0], p[1], np.array([q[0] for q in placed]), np.array([q[1] for q in placed]))
            if np.any(d < sep):
                return False
        for q in own:
            if haversine_np(p[0], p[1], q[0], q[1]) < min_own:
                return False
        return True

    users = []
    for _ in range(cfg.n_users):
        for _attempt in range(10_000):
            home = (rng.uniform(lat0 + dlat, lat1 - dlat), rng.uniform(lon0 + dlon, lon1 - dlon))
            if ok(home):
                break
        else:
            raise ValueError("bbox too small for the home separation constraint")
        anchors = [home]
        placed.append(home)
        for _ in range(int(rng.integers(1, 4))):
            for _attempt in range(10_000):
                r = rng.uniform(local_min, margin)
                ang = rng.uniform(0, 2 * math.pi)
                p = _offset(home[0], home[1], r * math.cos(ang), r * math.sin(ang))
                if ok(p, local_min, anchors):
                    break
            else:
                raise ValueError("bbox too small for the home separation constraint")
            anchors.append(p)
            placed.append(p)
        users.append(anchors)
    return users


def _polyline(cfg: SynthConfig, rng, a, b, depart: float, bbox: BBox):
    dist = float(haversine_np(a[0], a[1], b[0], b[1]))
    n = max(50, math.ceil(dist / 1000 * cfg.points_per_km) + 1)
    frac = np.linspace(0.0, 1.0, n)
    lat = a[0] + (b[0] - a[0]) * frac
    lon = a[1] + (b[1] - a[1]) * frac
    if cfg.noise_sigma_m > 0:
        lat = lat + rng.normal(0.0, cfg.noise_sigma_m, n) / _M_PER_DEG
        lon = lon + rng.normal(0.0, cfg.noise_sigma_m, n) / (_M_PER_DEG * np.cos(np.radians(lat)))
        lat = np.clip(lat, bbox[0], bbox[2])
        lon = np.clip(lon, bbox[1], bbox[3])
    duration = dist / (cfg.speed_kmh / 3.6)
    t = depart + duration * frac
    return lat, lon, t, depart + duration


def generate(cfg: SynthConfig) -> TripDataset:
    """Generate a labelled dataset. Equal configs give identical datasets."""
    root = np.random.SeedSequence(cfg.rng_seed)
    anchor_seq, *user_seqs = root.spawn(cfg.n_users + 1)
    anchors = _place_anchors(cfg, np.random.default_rng(anchor_seq))
    tz = ZoneInfo(cfg.timezone)
    day0 = date.fromisoformat(cfg.start_date)
    raw: List[Tuple[str, np.ndarray, np.ndarray, np.ndarray]] = []

    for u, (places, seq) in enumerate(zip(anchors, user_seqs)):
        rng = np.random.default_rng(seq)
        label = f"user{u:03d}"
        home, work, extra = places[0], places[1], places[2:]
        for d in range(cfg.days):
            midnight = datetime.combine(day0 + timedelta(days=d), datetime.min.time(), tzinfo=tz)

            def at(hours: float) -> float:
                return (midnight + timedelta(hours=hours)).timestamp()

            legs = []  # (origin, destination, departure timestamp)
            if rng.random() < cfg.routine_strength:
                legs.append((home, work, at(rng.uniform(6.0, 8.5))))
                if extra and rng.random() < cfg.midday_prob:
                    x = extra[int(rng.integers(len(extra)))]
                    legs.append((work, x, at(rng.uniform(13.5, 14.5))))
                    legs.append((x, work, None))
                legs.append((work, home, at(rng.uniform(18.0, 19.5))))
            else:
                dests = places[1:]
                first = dests[int(rng.integers(len(dests)))]
                legs.append((home, first, at(rng.uniform(10.0, 11.0))))
                if len(dests) > 1:
                    others = [p for p in dests if p is not first]
                    legs.append((first, others[int(rng.integers(len(others)))], at(rng.uniform(12.5, 13.5))))
                legs.append((legs[-1][1], home, at(rng.uniform(15.0, 16.5))))

            last_arrival = -math.inf
            for origin, dest, depart in legs:
                if depart is None:
                    depart = last_arrival + rng.uniform(60.0, 90.0) * 60
                depart = max(depart, last_arrival + 30 * 60)
                lat, lon, t, last_arrival = _polyline(cfg, rng, origin, dest, depart, cfg.bbox)
                raw.append((label, lat, lon, t))

    order = np.random.default_rng(anchor_seq.spawn(1)[0]).permutation(len(raw))
    trips, labels = [], {}
    for k, idx in enumerate(order):
        label, lat, lon, t = raw[idx]
        tid = f"trip{k:05d}"
        trips.append(Trip(tid, lat, lon, t))
        labels[tid] = label
    return TripDataset.from_trips(trips, labels)
