import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import quantile_linear
from toy import GRID, PARAMS, Z, hand_values, hop, three_cluster_case
from triplink.core import AttackParams, ClusterAssignment, TripDataset
from triplink.grid import CellId
from triplink.refine import (
    VisitProfile,
    build_profiles,
    idf,
    locsim,
    merge_profiles,
    merge_threshold,
    refine_clusters,
    similarity_matrix,
    tf,
    tfidf,
    tfidf_values,
)

g1, g2, g3 = CellId(0, 0), CellId(0, 1), CellId(0, 2)


def users_with(n_users, n_visitors, cell=g1):
    return [VisitProfile(k, {cell: 1} if k < n_visitors else {g3: 1}) for k in range(n_users)]


def test_tf_examples():
    u = VisitProfile(0, {g1: 3, g2: 1})
    assert tf(g1, u) == 0.75
    assert tf(g3, u) == 0.0
    assert tf(g1, VisitProfile(1, {g1: 5})) == 1.0


@given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(0, 5)), st.integers(1, 9), min_size=1))
def test_tf_sums_to_one(visits):
    u = VisitProfile(0, {CellId(*k): v for k, v in visits.items()})
    assert sum(tf(g, u) for g in u.visits) == pytest.approx(1.0)


def test_idf_examples():
    assert idf(g1, users_with(10, 4)) == pytest.approx(math.log(2))
    assert idf(g1, users_with(10, 10)) == pytest.approx(math.log(10 / 11))
    assert idf(g1, users_with(10, 10)) < 0
    assert idf(g1, users_with(2, 1)) == 0.0


def test_tfidf_examples():
    users = users_with(10, 4)
    u = VisitProfile(0, {g1: 3, g2: 1})
    users[0] = u
    assert tfidf(g1, u, users) == pytest.approx(0.75 * math.log(2))
    assert round(tfidf(g1, u, users), 4) == 0.5199
    assert tfidf(g3, u, users) == 0.0


def test_tfidf_symmetric_profiles_equal_and_nonpositive():
    users = [VisitProfile(k, {g1: 2, g2: 2}) for k in range(3)]
    vals = tfidf_values({u.user: u for u in users})
    assert np.all(vals == vals[0]) and vals[0] <= 0


def test_locsim_single_cell_mean():
    # two users share one cell; construct tf and idf so the scores are 0.2 and 0.3
    ui = VisitProfile(0, {g1: 1})
    uj = VisitProfile(1, {g1: 1})

    users = [ui, uj] + [VisitProfile(k, {g3: 1}) for k in range(2, 10)]
    expected = (1.0 * math.log(10 / 3)) ** 2
    assert locsim(ui, uj, users) == pytest.approx(expected)


def test_locsim_mean_of_products(monkeypatch):
    import triplink.refine as refine

    ui = VisitProfile(0, {g1: 1})
    uj = VisitProfile(1, {g1: 1, g2: 1})
    fixed = {0: 0.2, 1: 0.3}
    monkeypatch.setattr(refine, "tfidf", lambda g, u, users: fixed[u.user])
    assert refine.locsim(ui, uj, [ui, uj]) == pytest.approx(0.06, abs=1e-15)


def test_locsim_disjoint_and_symmetric():
    ui = VisitProfile(0, {g1: 1, g2: 2})
    uj = VisitProfile(1, {g2: 1, g3: 4})
    uk = VisitProfile(2, {g3: 1})
    users = [ui, uj, uk]
    assert locsim(ui, uk, users) == -math.inf
    assert locsim(ui, uj, users) == locsim(uj, ui, users)
    sim = similarity_matrix({u.user: u for u in users})
    assert (0, 2) not in sim
    assert sim[(0, 1)] == pytest.approx(locsim(ui, uj, users), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.dictionaries(st.integers(0, 6), st.integers(1, 5), min_size=1), min_size=2, max_size=6))
def test_sparse_matrix_matches_scalar_definition(raw):
    profiles = {k: VisitProfile(k, {CellId(0, c): n for c, n in d.items()}) for k, d in enumerate(raw)}
    users = list(profiles.values())
    sim = similarity_matrix(profiles)
    for i in profiles:
        for j in profiles:
            if i < j:
                ref = locsim(profiles[i], profiles[j], users)
                if ref == -math.inf:
                    assert (i, j) not in sim
                else:
                    assert sim[(i, j)] == pytest.approx(ref, abs=1e-12)
    expected = sorted(tfidf(g, u, users) for u in users for g in u.visits)
    assert sorted(tfidf_values(profiles)) == pytest.approx(expected, abs=1e-12)
    theta = merge_threshold(profiles, 0.75)
    assert theta == pytest.approx(quantile_linear(expected, 0.75) ** 2, abs=1e-12)


def test_profiles_count_endpoints():
    ds, assignment = three_cluster_case()
    profiles = build_profiles(assignment, ds, GRID)
    assert profiles[0].visits == {Z: 3, CellId(40, 60): 1}
    for u, tids in assignment.clusters().items():
        assert profiles[u].total == 2 * len(tids)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=14))
def test_profile_additivity(labels):
    ds, _ = three_cluster_case()
    tids = ds.trip_ids[: len(labels)]
    sub = ds.subset(tids)
    assignment = ClusterAssignment(dict(zip(tids, labels)))
    profiles = build_profiles(assignment, sub, GRID)
    present = sorted(profiles)
    if len(present) < 2:
        return
    a, b = present[:2]
    merged = merge_profiles(profiles[a], profiles[b])
    rebuilt = build_profiles(ClusterAssignment({t: (a if l == b else l) for t, l in assignment.assignment.items()}), sub, GRID)
    assert merged.visits == rebuilt[a].visits


def test_hand_case_merges_designed_pair_then_stops():
    ds, assignment = three_cluster_case()
    hv = hand_values()
    audit = []
    out = refine_clusters(assignment, ds, PARAMS, audit=audit)
    assert [(r.iteration, r.user_a, r.user_b) for r in audit] == [(1, 0, 1)]
    assert audit[0].theta == pytest.approx(hv["theta"], abs=1e-12)
    assert audit[0].locsim == pytest.approx(hv["locsim_01"], abs=1e-12)
    profiles = build_profiles(assignment, ds, GRID)
    sim = similarity_matrix(profiles)
    assert sim[(0, 2)] == pytest.approx(hv["locsim_02"], abs=1e-12)
    assert sim[(1, 2)] == pytest.approx(hv["locsim_02"], abs=1e-12)
    merged = build_profiles(out, ds, GRID)
    assert similarity_matrix(merged)[(0, 1)] == pytest.approx(hv["locsim_iter2"], abs=1e-12)
    assert hv["locsim_iter2"] < hv["theta"] < hv["locsim_01"]
    assert hv["locsim_02"] < hv["theta"]
    assert out.n_clusters == 2
    assert out["u0a"] == out["u1b"] != out["u2a"]


def test_disjoint_singletons_untouched():
    trips = [hop(f"t{k}", CellId(10 * k, 10), CellId(10 * k, 11), 1.6e9 + k) for k in range(4)]
    ds = TripDataset.from_trips(trips)
    a = ClusterAssignment({t.trip_id: k for k, t in enumerate(trips)})
    audit = []
    assert refine_clusters(a, ds, PARAMS, audit=audit) == a.canonical()
    assert audit == []


def two_pair_case():
    """Clusters (0,1) share cell P and (2,3) share cell Q; 4 and 5 are bystanders.

    Every cluster also spreads visits over private cells, which keeps the
    threshold low. The bystanders keep |U| large enough that the second pair
    still scores above the threshold after the first merge.
    """
    P, Q = CellId(10, 10), CellId(30, 30)
    fresh = iter(CellId(60 + 2 * (k // 8), 10 + 2 * (k % 8)) for k in range(64))
    trips, labels = [], {}

    def add(tid, c0, c1, u):
        trips.append(hop(tid, c0, c1, 1.6e9 + 3600 * len(trips)))
        labels[tid] = u

    for u in range(4):
        shared = P if u < 2 else Q
        for k in range(3):
            add(f"u{u}s{k}", shared, shared, u)
        for k in range(2):
            add(f"u{u}o{k}", next(fresh), next(fresh), u)
    for u in (4, 5):
        for k in range(5):
            add(f"u{u}b{k}", next(fresh), next(fresh), u)
    return TripDataset.from_trips(trips), ClusterAssignment(labels)


def test_n_matches_batching_is_irrelevant_on_conflict_free_input():
    ds, a = two_pair_case()
    one, five = [], []
    out1 = refine_clusters(a, ds, AttackParams(n_matches=1), audit=one)
    out5 = refine_clusters(a, ds, AttackParams(n_matches=5), audit=five)
    assert out1 == out5
    assert out1.n_clusters == 4
    assert out1["u0s0"] == out1["u1o0"] and out1["u2s0"] == out1["u3o1"]
    assert [r.iteration for r in one] == [1, 2]
    assert [r.iteration for r in five] == [1, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_refinement_only_merges(seed, n_matches):
    rng = np.random.default_rng(seed)
    cells = [CellId(int(r), int(c)) for r, c in rng.integers(0, 6, size=(6, 2)) * 3 + 20]
    trips = [hop(f"t{k:02d}", cells[rng.integers(6)], cells[rng.integers(6)], 1.6e9 + 3600 * k) for k in range(16)]
    ds = TripDataset.from_trips(trips)
    a = ClusterAssignment({t.trip_id: int(rng.integers(0, 8)) for t in trips})
    out = refine_clusters(a, ds, AttackParams(n_matches=n_matches))
    assert out.n_clusters <= a.n_clusters
    for grp in a.clusters().values():
        assert len({out[t] for t in grp}) == 1
