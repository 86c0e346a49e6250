import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import local_ts
from oracles import max_independent_intervals
from triplink.attack import (
    HomeLocation,
    compare_hl_scores,
    concat_units,
    concatenate_trips,
    find_hl_candidates,
    match_units_to_hls,
    assign_trips_to_hls,
    non_simultaneous_subset,
    resolve_double_match,
    run_attack,
)
from triplink.core import AttackParams, Trip, TripDataset, trips_overlap_in_time
from triplink.grid import CellId, GridSpec, Zone

PARAMS = AttackParams()
GRID = GridSpec(PARAMS.bbox, PARAMS.s_cell)
H = 3600.0


def cell_trip(tid, c0, c1, t0, t1, n=2):
    a = GRID.cell_center(CellId(*c0))
    b = GRID.cell_center(CellId(*c1))
    f = np.linspace(0, 1, n)
    return Trip(tid, a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, np.linspace(t0, t1, n))


def ds_of(*trips):
    return TripDataset.from_trips(trips)


C, D, E, F = (100, 100), (100, 120), (120, 100), (140, 140)

# --- concatenation -----------------------------------------------------------


def test_unique_candidate_links():
    a = cell_trip("A", D, C, local_ts(9.5), local_ts(10))
    b = cell_trip("B", C, E, local_ts(12), local_ts(12.5))
    links = concatenate_trips(ds_of(a, b), PARAMS)
    assert [(l.earlier_trip_id, l.later_trip_id) for l in links] == [("A", "B")]
    assert links[0].shared_cell == CellId(*C)
    assert links[0].gap == pytest.approx(2.0)


def test_departure_after_h_concat_not_linked():
    a = cell_trip("A", D, C, local_ts(9.5), local_ts(10))
    b = cell_trip("B", C, E, local_ts(19), local_ts(19.5))
    assert concatenate_trips(ds_of(a, b), PARAMS) == []


def test_two_departures_not_linked():
    a = cell_trip("A", D, C, local_ts(9.5), local_ts(10))
    b = cell_trip("B", C, E, local_ts(12), local_ts(12.5))
    b2 = cell_trip("B2", C, F, local_ts(13), local_ts(13.5))
    assert all(l.earlier_trip_id != "A" for l in concatenate_trips(ds_of(a, b, b2), PARAMS))


def test_other_arrival_in_window_blocks_link():
    a = cell_trip("A", D, C, local_ts(9.5), local_ts(10))
    other = cell_trip("X", F, C, local_ts(13), local_ts(13.9))
    b = cell_trip("B", C, E, local_ts(12), local_ts(12.5))
    assert all(l.earlier_trip_id != "A" for l in concatenate_trips(ds_of(a, other, b), PARAMS))


def test_chains_form_transitively():
    a = cell_trip("A", D, C, local_ts(9.5), local_ts(10))
    b = cell_trip("B", C, E, local_ts(12), local_ts(12.5))
    c = cell_trip("C", E, F, local_ts(17), local_ts(17.5))
    ds = ds_of(a, b, c)
    links = concatenate_trips(ds, PARAMS)
    assert concat_units(ds, links) == [["A", "B", "C"]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_links_have_valid_gaps(seed):
    rng = np.random.default_rng(seed)
    cells = [C, D, E, F]
    trips = []
    for k in range(20):
        t0 = local_ts(0) + rng.uniform(0, 72) * H
        i, j = rng.choice(4, 2, replace=False)
        trips.append(cell_trip(f"t{k:02d}", cells[i], cells[j], t0, t0 + rng.uniform(0.2, 1) * H))
    ds = ds_of(*trips)
    links = concatenate_trips(ds, PARAMS)
    outgoing = [l.earlier_trip_id for l in links]
    incoming = [l.later_trip_id for l in links]
    assert len(set(outgoing)) == len(outgoing) and len(set(incoming)) == len(incoming)
    for l in links:
        assert 0 < l.gap <= PARAMS.h_concat
        assert not trips_overlap_in_time(ds.trips[l.earlier_trip_id], ds.trips[l.later_trip_id])


# --- home location candidates -----------------------------------------------


def hl_cells(ds):
    return {c for hl in find_hl_candidates(ds, PARAMS) for c in hl.zone.cells}


def test_lone_morning_start_is_candidate():
    t = cell_trip("A", C, D, local_ts(7.5), local_ts(8))
    assert hl_cells(ds_of(t)) == {CellId(*C)}


def test_two_morning_starts_excluded():
    a = cell_trip("A", C, D, local_ts(7.5), local_ts(8))
    b = cell_trip("B", C, E, local_ts(8.5), local_ts(9))
    assert CellId(*C) not in hl_cells(ds_of(a, b))


def test_late_morning_start_never_counts():
    t = cell_trip("A", C, D, local_ts(11), local_ts(11.5))
    assert hl_cells(ds_of(t)) == set()


def test_evening_end_window_is_forward_only():
    a = cell_trip("A", D, C, local_ts(18), local_ts(19))
    b = cell_trip("B", E, C, local_ts(16), local_ts(17))  # ends before, outside [t, t+4h]
    assert CellId(*C) in hl_cells(ds_of(a, b))
    a = cell_trip("A", D, C, local_ts(21.5), local_ts(22))
    late = cell_trip("L", E, C, local_ts(0, day=2), local_ts(0.5, day=2))  # after midnight
    assert CellId(*C) not in hl_cells(ds_of(a, late))


def test_adjacent_candidate_cells_dissolve():
    a = cell_trip("A", (100, 100), D, local_ts(7), local_ts(7.5))
    b = cell_trip("B", (101, 101), E, local_ts(7), local_ts(7.5))
    hls = find_hl_candidates(ds_of(a, b), PARAMS)
    assert [hl.zone.cells for hl in hls] == [frozenset({CellId(100, 100), CellId(101, 101)})]


# --- double-match comparison --------------------------------------------------


A0, A1 = CellId(0, 0), CellId(9, 9)


def test_compare_rank_one():
    assert compare_hl_scores([0.9], [0.7], 1, 1, A0, A1) == 0


def test_compare_falls_through_to_rank_two():
    assert compare_hl_scores([0.8, 0.5], [0.8, 0.6], 2, 2, A0, A1) == 1


def test_compare_empty_lists_use_unique_count():
    assert compare_hl_scores([], [], 3, 1, A1, A0) == 0
    assert compare_hl_scores([], [], 1, 3, A0, A1) == 1


def test_compare_final_tie_uses_anchor():
    assert compare_hl_scores([0.5], [0.5], 1, 1, A1, A0) == 1
    assert compare_hl_scores([0.5], [0.5], 1, 1, A0, A1) == 0


def test_compare_present_beats_missing():
    assert compare_hl_scores([0.8], [0.8, 0.1], 1, 2, A0, A1) == 1


def test_resolve_double_match_picks_similar_history():
    home1, home2 = (100, 100), (100, 130)
    prior1 = cell_trip("p1", home1, home2, local_ts(7), local_ts(8), n=20)
    prior2 = cell_trip("p2", (130, 130), home2, local_ts(7), local_ts(8), n=20)
    unit = cell_trip("u", home2, home1, local_ts(12), local_ts(13), n=20)
    hl1 = HomeLocation(Zone(frozenset({CellId(*home1)})), {"p1"}, {"p1"})
    hl2 = HomeLocation(Zone(frozenset({CellId(*home2)})), {"p2"}, {"p2"})
    trips = {t.trip_id: t for t in (prior1, prior2, unit)}
    assert resolve_double_match(unit, hl1, hl2, trips, PARAMS) is hl1


# --- assignment -----------------------------------------------------------------


def test_assignment_examples():
    home = (100, 100)
    morning = cell_trip("m", home, D, local_ts(7), local_ts(7.5))  # makes `home` an HL
    single = cell_trip("s", home, F, local_ts(12, day=2), local_ts(12.5, day=2))
    loner = cell_trip("z", (150, 150), (160, 160), local_ts(12), local_ts(13))
    chain_a = cell_trip("ca", home, (170, 170), local_ts(14, day=3), local_ts(14.5, day=3))
    chain_b = cell_trip("cb", (170, 170), (180, 180), local_ts(16, day=3), local_ts(16.5, day=3))
    ds = ds_of(morning, single, loner, chain_a, chain_b)
    links = concatenate_trips(ds, PARAMS)
    assert [(l.earlier_trip_id, l.later_trip_id) for l in links] == [("ca", "cb")]
    hls = find_hl_candidates(ds, PARAMS)
    assert [hl.zone.cells for hl in hls] == [frozenset({CellId(*home)})]
    out = assign_trips_to_hls(ds, links, hls, PARAMS)
    assert out["m"] == out["s"] == out["ca"] == out["cb"]
    assert out["z"] != out["m"]
    filled, unmatched = match_units_to_hls(ds, links, hls, PARAMS)
    assert unmatched == [["z"]]
    assert filled[0].uniquely_assigned_trip_ids == {"m", "s", "ca", "cb"}


def test_simultaneous_trips_split_off():
    home = (100, 100)
    a = cell_trip("a", home, D, local_ts(7), local_ts(8))
    b = cell_trip("b", home, E, local_ts(7.5, day=2), local_ts(8.5, day=2))
    c = cell_trip("c", F, home, local_ts(8, day=2), local_ts(9, day=2))  # overlaps b
    ds = ds_of(a, b, c)
    out = run_attack(ds, PARAMS)[1][1]
    for tid in ds.trip_ids:
        for other in ds.trip_ids:
            if tid < other and out[tid] == out[other]:
                assert not trips_overlap_in_time(ds.trips[tid], ds.trips[other])


# --- interval scheduling ---------------------------------------------------------


def intervals_ds(spans):
    return [cell_trip(f"i{k:02d}", C, D, s * H, e * H) for k, (s, e) in enumerate(spans)]


def test_interval_example():
    kept, evicted = non_simultaneous_subset(intervals_ds([(0, 2), (1, 3), (2, 4)]))
    assert [(t.start_time / H, t.end_time / H) for t in kept] == [(0, 2), (2, 4)]
    assert [(t.start_time / H, t.end_time / H) for t in evicted] == [(1, 3)]


def test_disjoint_all_kept_and_clique_keeps_one():
    kept, evicted = non_simultaneous_subset(intervals_ds([(0, 1), (2, 3), (4, 5)]))
    assert len(kept) == 3 and not evicted
    kept, evicted = non_simultaneous_subset(intervals_ds([(0, 10), (1, 9), (2, 8), (3, 7)]))
    assert len(kept) == 1 and len(evicted) == 3


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(1, 8)), min_size=1, max_size=12))
def test_greedy_is_maximum(raw):
    spans = [(s, s + d) for s, d in raw]
    kept, evicted = non_simultaneous_subset(intervals_ds(spans))
    assert len(kept) == max_independent_intervals(spans)
    assert len(kept) + len(evicted) == len(spans)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert not trips_overlap_in_time(a, b)


# --- orchestration ----------------------------------------------------------------


def test_run_attack_empty():
    final, snaps = run_attack(TripDataset.from_trips([]), PARAMS)
    assert len(final) == 0
    assert len(snaps) == 3 and all(len(s) == 0 for s in snaps)


def test_run_attack_single_trip():
    ds = ds_of(cell_trip("only", C, D, local_ts(7), local_ts(8)))
    final, snaps = run_attack(ds, PARAMS)
    for s in snaps:
        assert s.assignment == {"only": 0}


def test_run_attack_ignores_labels():
    trips = [cell_trip(f"t{k}", C, D, local_ts(7, day=k + 1), local_ts(8, day=k + 1)) for k in range(3)]
    plain = TripDataset.from_trips(trips)
    labelled = TripDataset.from_trips(trips, {"t0": "x", "t1": "y", "t2": "z"})
    assert run_attack(plain, PARAMS)[0] == run_attack(labelled, PARAMS)[0]
