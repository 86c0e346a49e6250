"""Readers, writers and the preprocessing filter chain for trip datasets."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
from zoneinfo import ZoneInfo

from .core import BBox, ClusterAssignment, Trip, TripDataset, trip_in_bbox

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

PLT_HEADER_LINES = 6
TRIPS_CSV_HEADER = ["trip_id", "user_id", "lat", "lon", "timestamp"]


@dataclass
class ReadReport:
    """Diagnostics gathered while parsing input files."""

    n_files: int = 0
    n_trips: int = 0
    n_malformed_lines: int = 0
    n_skipped_files: int = 0
    n_rejected_trips: int = 0
    messages: List[str] = field(default_factory=list)

    def note(self, msg: str) -> None:
        log.warning(msg)
        self.messages.append(msg)


@dataclass
class PreprocessReport:
    n_input_trips: int = 0
    n_removed_short: int = 0
    n_removed_sparse: int = 0
    n_removed_long_quantile: int = 0
    n_removed_bbox: int = 0
    n_output_trips: int = 0
    n_output_users: Optional[int] = None

    def as_dict(self) -> Dict[str, Optional[int]]:
        return asdict(self)


def _parse_plt(path: Path, trip_id: str, tz: ZoneInfo) -> Tuple[Optional[Trip], int]:
    lat, lon, ts = [], [], []
    bad = 0
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh):
            if lineno < PLT_HEADER_LINES:
                continue
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                if len(parts) != 7:
                    raise ValueError(line)
                la, lo = float(parts[0]), float(parts[1])
                if not (-90 <= la <= 90 and -180 <= lo <= 180):
                    raise ValueError(line)
                when = datetime.strptime(f"{parts[5]} {parts[6]}", "%Y-%m-%d %H:%M:%S").replace(tzinfo=tz)
            except ValueError:
                bad += 1
                continue
            lat.append(la)
            lon.append(lo)
            ts.append(when.timestamp())
    if len(lat) < 2:
        return None, bad
    try:
        return Trip(trip_id, lat, lon, ts), bad
    except ValueError:
        return None, bad


def read_geolife(
    root: PathLike, tz: str = "UTC", report: Optional[ReadReport] = None, n_jobs: int = 1
) -> TripDataset:
    """Read a GeoLife tree laid out as ``<user>/Trajectory/*.plt``.

    Trip ids are ``<user>/<file stem>``; the user directory name becomes the
    ground-truth label. GeoLife stores wall-clock times in GMT, so ``tz``
    defaults to UTC.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"GeoLife directory not found: {root}")
    report = report if report is not None else ReadReport()
    zone = ZoneInfo(tz)
    jobs = []
    for user_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        traj = user_dir / "Trajectory"
        if not traj.is_dir():
            continue
        for plt in sorted(traj.glob("*.plt")):
            jobs.append((user_dir.name, plt))

    def work(job):
        user, plt = job
        return user, plt, _parse_plt(plt, f"{user}/{plt.stem}", zone)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    trips, labels = [], {}
    for user, plt, (trip, bad) in results:
        report.n_files += 1
        report.n_malformed_lines += bad
        if trip is None:
            report.n_skipped_files += 1
            continue
        trips.append(trip)
        labels[trip.trip_id] = user
    report.n_trips = len(trips)
    return TripDataset.from_trips(trips, labels)


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp without UTC offset: {text!r}")
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    spec = "seconds" if dt.microsecond == 0 else "microseconds"
    return dt.isoformat(timespec=spec)


def read_trips_csv(path: PathLike, report: Optional[ReadReport] = None) -> TripDataset:
    """Read the ``trip_id,user_id,lat,lon,timestamp`` interchange format.

    Rows of one trip must be contiguous and time-sorted. A trip with
    out-of-order timestamps (or fewer than two rows) is rejected and noted in
    ``report``; a trip id reappearing after another trip's block is fatal.
    """
    report = report if report is not None else ReadReport()
    report.n_files += 1
    blocks: List[Tuple[str, List[List[str]]]] = []
    seen = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRIPS_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRIPS_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            tid = row[0].strip()
            if blocks and blocks[-1][0] == tid:
                blocks[-1][1].append(row)
                continue
            if tid in seen:
                raise ValueError(f"{path}:{lineno}: trip id {tid!r} appears in non-contiguous blocks")
            seen.add(tid)
            blocks.append((tid, [row]))

    trips, labels = [], {}
    any_label = any_blank = False
    for tid, rows in blocks:
        users = {r[1].strip() for r in rows}
        if len(users) != 1:
            raise ValueError(f"{path}: trip {tid!r} has conflicting user ids {sorted(users)}")
        user = users.pop()
        try:
            lat = [float(r[2]) for r in rows]
            lon = [float(r[3]) for r in rows]
            ts = [_parse_timestamp(r[4]) for r in rows]
        except ValueError as exc:
            raise ValueError(f"{path}: trip {tid!r}: {exc}") from exc
        if any(b < a for a, b in zip(ts, ts[1:])):
            report.n_rejected_trips += 1
            report.note(f"{path}: trip {tid!r} rejected: timestamps not sorted")
            continue
        if len(rows) < 2:
            report.n_rejected_trips += 1
            report.note(f"{path}: trip {tid!r} rejected: fewer than 2 points")
            continue
        trips.append(Trip(tid, lat, lon, ts))
        if user:
            any_label = True
            labels[tid] = user
        else:
            any_blank = True
    if any_label and any_blank:
        raise ValueError(f"{path}: user_id must be given for all trips or for none")
    report.n_trips = len(trips)
    return TripDataset.from_trips(trips, labels if any_label else None)


def write_trips_csv(ds: TripDataset, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIPS_CSV_HEADER)
        for trip in ds:
            user = ds.ground_truth[trip.trip_id] if ds.ground_truth is not None else ""
            for la, lo, t in zip(trip.lat, trip.lon, trip.t):
                w.writerow([trip.trip_id, user, repr(float(la)), repr(float(lo)), format_timestamp(float(t))])


def write_assignment_csv(assignment: ClusterAssignment, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trip_id", "user_id"])
        for tid in sorted(assignment.assignment):
            w.writerow([tid, assignment.assignment[tid]])


def read_assignment_csv(path: PathLike) -> ClusterAssignment:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["trip_id", "user_id"]:
            raise ValueError(f"{path}: expected header trip_id,user_id")
        out = {}
        for row in reader:
            if row["trip_id"] in out:
                raise ValueError(f"{path}: duplicate trip id {row['trip_id']!r}")
            out[row["trip_id"]] = int(row["user_id"])
    return ClusterAssignment(out)


def filter_year(ds: TripDataset, year: int, tz: str = "UTC") -> TripDataset:
    """Keep trips whose start falls in ``year`` (local to ``tz``)."""
    zone = ZoneInfo(tz)
    keep = [t.trip_id for t in ds if datetime.fromtimestamp(t.start_time, zone).year == year]
    return ds.subset(keep)


def preprocess(
    ds: TripDataset,
    bbox: BBox,
    min_length_m: float = 200.0,
    min_points: int = 50,
    long_trim_quantile: float = 0.05,
) -> Tuple[TripDataset, PreprocessReport]:
    """Apply the cleaning chain: short/sparse filter, longest-trip trim, bbox containment.

    Step 1 counts a trip as ``short`` first if it is both short and sparse.
    Step 2 drops ``floor(q * n)`` of the longest remaining trips (ties broken by
    trip id). Step 3 drops trips with any point outside ``bbox``.
    """
    if not 0.0 <= long_trim_quantile < 1.0:
        raise ValueError("long_trim_quantile must lie in [0, 1)")
    rep = PreprocessReport(n_input_trips=len(ds))
    lengths = {t.trip_id: t.length_m for t in ds}
    survivors = []
    for trip in ds:
        if lengths[trip.trip_id] < min_length_m:
            rep.n_removed_short += 1
        elif len(trip) < min_points:
            rep.n_removed_sparse += 1
        else:
            survivors.append(trip.trip_id)

    n_trim = math.floor(long_trim_quantile * len(survivors))
    by_length = sorted(survivors, key=lambda tid: (-lengths[tid], tid))
    trimmed = set(by_length[:n_trim])
    rep.n_removed_long_quantile = n_trim
    survivors = [tid for tid in survivors if tid not in trimmed]

    kept = []
    for tid in survivors:
        if trip_in_bbox(ds.trips[tid], bbox):
            kept.append(tid)
        else:
            rep.n_removed_bbox += 1
    out = ds.subset(kept)
    rep.n_output_trips = len(out)
    if out.ground_truth is not None:
        rep.n_output_users = len(set(out.ground_truth.values()))
    return out, rep
