"""User-id reconstruction: trip concatenation, home-location assignment and pipeline orchestration."""

from __future__ import annotations

import logging
import math
from bisect import bisect_left, bisect_right
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple
from zoneinfo import ZoneInfo

import numpy as np

from .core import AttackParams, ClusterAssignment, Trip, TripDataset
from .grid import CellId, GridSpec, Zone, dissolve_cells, zone_index
from .lcss import directionless_lcss

log = logging.getLogger(__name__)

HOUR = 3600.0


@dataclass(frozen=True)
class ConcatLink:
    earlier_trip_id: str
    later_trip_id: str
    shared_cell: CellId
    gap: float  # hours


@dataclass(frozen=True)
class HomeLocation:
    zone: Zone
    assigned_trip_ids: FrozenSet[str] = frozenset()
    uniquely_assigned_trip_ids: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "assigned_trip_ids", frozenset(self.assigned_trip_ids))
        object.__setattr__(self, "uniquely_assigned_trip_ids", frozenset(self.uniquely_assigned_trip_ids))
        if not self.uniquely_assigned_trip_ids <= self.assigned_trip_ids:
            raise ValueError("uniquely assigned trips must be a subset of assigned trips")


@dataclass
class _Endpoints:
    """Start/end cells and times of every trip, plus per-cell sorted event lists."""

    start_cell: Dict[str, CellId]
    end_cell: Dict[str, CellId]
    starts: Dict[CellId, Tuple[List[float], List[str]]] = field(default_factory=dict)
    ends: Dict[CellId, Tuple[List[float], List[str]]] = field(default_factory=dict)


def _endpoints(ds: TripDataset, grid: GridSpec) -> _Endpoints:
    ids = ds.trip_ids
    if not ids:
        return _Endpoints({}, {})
    sp = grid.cells_of([ds.trips[i].lat[0] for i in ids], [ds.trips[i].lon[0] for i in ids])
    ep = grid.cells_of([ds.trips[i].lat[-1] for i in ids], [ds.trips[i].lon[-1] for i in ids])
    start_cell = {tid: CellId(int(r), int(c)) for tid, (r, c) in zip(ids, sp)}
    end_cell = {tid: CellId(int(r), int(c)) for tid, (r, c) in zip(ids, ep)}

    def index(cells: Dict[str, CellId], when) -> Dict[CellId, Tuple[List[float], List[str]]]:
        raw: Dict[CellId, List[Tuple[float, str]]] = defaultdict(list)
        for tid, cell in cells.items():
            raw[cell].append((when(ds.trips[tid]), tid))
        out = {}
        for cell, events in raw.items():
            events.sort()
            out[cell] = ([e[0] for e in events], [e[1] for e in events])
        return out

    ep_obj = _Endpoints(start_cell, end_cell)
    ep_obj.starts = index(start_cell, lambda t: t.start_time)
    ep_obj.ends = index(end_cell, lambda t: t.end_time)
    return ep_obj


def _count_in(times: List[float], lo: float, hi: float) -> int:
    """Number of sorted ``times`` inside the closed interval [lo, hi]."""
    return bisect_right(times, hi) - bisect_left(times, lo)


def concatenate_trips(ds: TripDataset, params: AttackParams, grid: Optional[GridSpec] = None) -> List[ConcatLink]:
    """Link trips that look like the continuation of one another.

    A trip A ending in cell c at time t links to B when B is the only trip
    starting in c within (t, t + h_concat] and no other trip arrives in c
    within the concatenation window around t. If several trips would link to
    the same B, all of those links are dropped as ambiguous.
    """
    grid = grid or GridSpec(params.bbox, params.s_cell)
    ep = _endpoints(ds, grid)
    before, after = params.concat_window
    proposed: List[ConcatLink] = []
    for tid in ds.trip_ids:
        trip = ds.trips[tid]
        cell, t = ep.end_cell[tid], trip.end_time
        start_times, start_ids = ep.starts.get(cell, ([], []))
        lo = bisect_right(start_times, t)
        hi = bisect_right(start_times, t + params.h_concat * HOUR)
        candidates = [s for s in start_ids[lo:hi] if s != tid]
        if len(candidates) != 1:
            continue
        end_times, _ = ep.ends[cell]
        others = _count_in(end_times, t + before * HOUR, t + after * HOUR) - 1  # minus A itself
        if others > 0:
            continue
        later = candidates[0]
        gap = (ds.trips[later].start_time - t) / HOUR
        proposed.append(ConcatLink(tid, later, cell, gap))

    incoming: Dict[str, int] = defaultdict(int)
    for link in proposed:
        incoming[link.later_trip_id] += 1
    return [link for link in proposed if incoming[link.later_trip_id] == 1]


def concat_units(ds: TripDataset, links: Iterable[ConcatLink]) -> List[List[str]]:
    """Group trips into chains following links; unlinked trips form singleton units.

    Each unit lists its trips in travel order; units are sorted by first trip id.
    """
    nxt: Dict[str, str] = {}
    has_prev = set()
    for link in links:
        nxt[link.earlier_trip_id] = link.later_trip_id
        has_prev.add(link.later_trip_id)
    units = []
    for tid in ds.trip_ids:
        if tid in has_prev:
            continue
        chain = [tid]
        while chain[-1] in nxt:
            chain.append(nxt[chain[-1]])
        units.append(chain)
    return sorted(units, key=lambda u: u[0])


def _local_hours(ts: float, tz: ZoneInfo) -> float:
    dt = datetime.fromtimestamp(ts, tz)
    return dt.hour + dt.minute / 60.0 + (dt.second + dt.microsecond / 1e6) / 3600.0


def _in_daily_window(hours: float, window: Tuple[float, float]) -> bool:
    lo, hi = window
    return lo <= hours < hi


def find_hl_candidates(
    ds: TripDataset, params: AttackParams, grid: Optional[GridSpec] = None
) -> List[HomeLocation]:
    """Cells with a lone morning departure or a lone evening arrival, dissolved into zones."""
    grid = grid or GridSpec(params.bbox, params.s_cell)
    ep = _endpoints(ds, grid)
    tz = ZoneInfo(params.timezone)
    mb, ma = params.morning_window
    eb, ea = params.evening_window
    cells = set()
    for tid in ds.trip_ids:
        trip = ds.trips[tid]
        t0 = trip.start_time
        c0 = ep.start_cell[tid]
        if c0 not in cells and _in_daily_window(_local_hours(t0, tz), params.t_morning):
            if _count_in(ep.starts[c0][0], t0 + mb * HOUR, t0 + ma * HOUR) == 1:
                cells.add(c0)
        t1 = trip.end_time
        c1 = ep.end_cell[tid]
        if c1 not in cells and _in_daily_window(_local_hours(t1, tz), params.t_evening):
            if _count_in(ep.ends[c1][0], t1 + eb * HOUR, t1 + ea * HOUR) == 1:
                cells.add(c1)
    return [HomeLocation(zone) for zone in dissolve_cells(cells)]


def non_simultaneous_subset(trips: Iterable[Trip]) -> Tuple[List[Trip], List[Trip]]:
    """Maximum set of pairwise non-overlapping trips (earliest-end greedy) and the rest."""
    ordered = sorted(trips, key=lambda t: (t.end_time, t.start_time, t.trip_id))
    kept, evicted = [], []
    last_end = -math.inf
    for trip in ordered:
        if trip.start_time >= last_end:
            kept.append(trip)
            last_end = trip.end_time
        else:
            evicted.append(trip)
    key = lambda t: t.trip_id  # noqa: E731
    return sorted(kept, key=key), sorted(evicted, key=key)


def compare_hl_scores(
    scores_a: Sequence[float],
    scores_b: Sequence[float],
    n_unique_a: int,
    n_unique_b: int,
    anchor_a: CellId,
    anchor_b: CellId,
) -> int:
    """Return 0 if HL a wins the double match, 1 if HL b wins.

    Sorted scores are compared rank by rank (a missing rank counts as -inf),
    then the number of uniquely assigned trips, then the zone anchor cell.
    """
    sa = sorted(scores_a, reverse=True)
    sb = sorted(scores_b, reverse=True)
    for k in range(max(len(sa), len(sb))):
        va = sa[k] if k < len(sa) else -math.inf
        vb = sb[k] if k < len(sb) else -math.inf
        if va > vb:
            return 0
        if vb > va:
            return 1
    if n_unique_a != n_unique_b:
        return 0 if n_unique_a > n_unique_b else 1
    return 0 if anchor_a <= anchor_b else 1


def _score_hl(unit: Trip, hl: HomeLocation, trips: Mapping[str, Trip], epsilon: float, pool=None) -> List[float]:
    others = [trips[t] for t in sorted(hl.uniquely_assigned_trip_ids)]
    if pool is None:
        return [directionless_lcss(unit, o, epsilon) for o in others]
    return list(pool.map(lambda o: directionless_lcss(unit, o, epsilon), others))


def resolve_double_match(
    unit: Trip,
    hl1: HomeLocation,
    hl2: HomeLocation,
    trips: Mapping[str, Trip],
    params: AttackParams,
    pool: Optional[ThreadPoolExecutor] = None,
) -> HomeLocation:
    """Pick the HL whose uniquely assigned trips resemble ``unit`` most (see :func:`compare_hl_scores`)."""
    s1 = _score_hl(unit, hl1, trips, params.lcss_epsilon, pool)
    s2 = _score_hl(unit, hl2, trips, params.lcss_epsilon, pool)
    winner = compare_hl_scores(
        s1, s2, len(hl1.uniquely_assigned_trip_ids), len(hl2.uniquely_assigned_trip_ids),
        hl1.zone.anchor, hl2.zone.anchor,
    )
    return hl1 if winner == 0 else hl2


def _unit_trip(unit: Sequence[str], trips: Mapping[str, Trip]) -> Trip:
    if len(unit) == 1:
        return trips[unit[0]]
    parts = [trips[t] for t in unit]
    return Trip(
        unit[0],
        np.concatenate([p.lat for p in parts]),
        np.concatenate([p.lon for p in parts]),
        np.concatenate([p.t for p in parts]),
    )


def match_units_to_hls(
    ds: TripDataset,
    links: Iterable[ConcatLink],
    hls: Sequence[HomeLocation],
    params: AttackParams,
    grid: Optional[GridSpec] = None,
    n_jobs: int = 1,
) -> Tuple[List[HomeLocation], List[List[str]]]:
    """Assign concatenation units to HLs before the simultaneity check.

    Returns the HLs with their assigned trips and the units that touched no HL.
    """
    grid = grid or GridSpec(params.bbox, params.s_cell)
    ep = _endpoints(ds, grid)
    where = zone_index(hl.zone for hl in hls)
    assigned = [set() for _ in hls]
    unique = [set() for _ in hls]
    unmatched: List[List[str]] = []
    doubles: List[Tuple[List[str], Tuple[int, int]]] = []
    for unit in concat_units(ds, links):
        hits = {where[c] for c in (ep.start_cell[unit[0]], ep.end_cell[unit[-1]]) if c in where}
        if not hits:
            unmatched.append(unit)
        elif len(hits) == 1:
            (i,) = hits
            assigned[i].update(unit)
            unique[i].update(unit)
        else:
            doubles.append((unit, tuple(sorted(hits))))

    snapshot = [HomeLocation(hl.zone, unique[i], unique[i]) for i, hl in enumerate(hls)]
    pool = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        for unit, (i, j) in doubles:
            chosen = resolve_double_match(_unit_trip(unit, ds.trips), snapshot[i], snapshot[j], ds.trips, params, pool)
            assigned[i if chosen is snapshot[i] else j].update(unit)
    finally:
        if pool is not None:
            pool.shutdown()
    filled = [HomeLocation(hl.zone, assigned[i], unique[i]) for i, hl in enumerate(hls)]
    return filled, unmatched


def assign_trips_to_hls(
    ds: TripDataset,
    links: Iterable[ConcatLink],
    hls: Sequence[HomeLocation],
    params: AttackParams,
    grid: Optional[GridSpec] = None,
    n_jobs: int = 1,
) -> ClusterAssignment:
    filled, unmatched = match_units_to_hls(ds, links, hls, params, grid, n_jobs)
    groups: List[List[str]] = [list(u) for u in unmatched]
    for hl in filled:
        if not hl.assigned_trip_ids:
            continue
        kept, evicted = non_simultaneous_subset(ds.trips[t] for t in hl.assigned_trip_ids)
        groups.append([t.trip_id for t in kept])
        groups.extend([t.trip_id] for t in evicted)
    return _from_groups(groups)


def _from_groups(groups: Iterable[Iterable[str]]) -> ClusterAssignment:
    return ClusterAssignment({tid: i for i, g in enumerate(groups) for tid in g}).canonical()


def concatenation_assignment(ds: TripDataset, links: Iterable[ConcatLink]) -> ClusterAssignment:
    return _from_groups(concat_units(ds, links))


def run_attack(
    ds: TripDataset, params: AttackParams, n_jobs: int = 1, audit: Optional[list] = None
) -> Tuple[ClusterAssignment, List[ClusterAssignment]]:
    """Run concatenation, HL assignment and TF-IDF refinement.

    Returns the final assignment and the snapshot after each of the three stages.
    Refinement merges are appended to ``audit`` when given.
    """
    from .refine import refine_clusters

    ds = ds.without_labels()
    grid = GridSpec(params.bbox, params.s_cell)
    links = concatenate_trips(ds, params, grid)
    stage1 = concatenation_assignment(ds, links)
    log.info("concatenation: %d links, %d clusters", len(links), stage1.n_clusters)
    hls = find_hl_candidates(ds, params, grid)
    stage2 = assign_trips_to_hls(ds, links, hls, params, grid, n_jobs)
    log.info("home locations: %d zones, %d clusters", len(hls), stage2.n_clusters)
    stage3 = refine_clusters(stage2, ds, params, audit=audit)
    log.info("refinement: %d clusters", stage3.n_clusters)
    return stage3, [stage1, stage2, stage3]
