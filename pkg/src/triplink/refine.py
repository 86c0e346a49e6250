"""Iterative merging of preliminary clusters by TF-IDF weighted location co-visits."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .core import AttackParams, ClusterAssignment, TripDataset
from .grid import CellId, GridSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VisitProfile:
    """Raw visit counts of one reconstructed user over the TF-IDF grid."""

    user: int
    visits: Mapping[CellId, int]

    @property
    def total(self) -> int:
        return sum(self.visits.values())


@dataclass(frozen=True)
class MergeRecord:
    iteration: int
    user_a: int
    user_b: int
    locsim: float
    theta: float


def build_profiles(assignment: ClusterAssignment, ds: TripDataset, grid: GridSpec) -> Dict[int, VisitProfile]:
    """Count start and end cells of every trip per reconstructed user."""
    counts: Dict[int, Counter] = {}
    for tid, user in assignment.assignment.items():
        trip = ds.trips[tid]
        c = counts.setdefault(user, Counter())
        c[grid.cell_of_latlon(trip.lat[0], trip.lon[0])] += 1
        c[grid.cell_of_latlon(trip.lat[-1], trip.lon[-1])] += 1
    return {u: VisitProfile(u, dict(c)) for u, c in counts.items()}


def merge_profiles(a: VisitProfile, b: VisitProfile, user: Optional[int] = None) -> VisitProfile:
    merged = Counter(a.visits)
    merged.update(b.visits)
    return VisitProfile(min(a.user, b.user) if user is None else user, dict(merged))


def _as_list(users) -> List[VisitProfile]:
    return list(users.values()) if isinstance(users, Mapping) else list(users)


def tf(g: CellId, u: VisitProfile) -> float:
    """Share of the user's visits that fall in cell ``g`` (0 if never visited)."""
    count = u.visits.get(g, 0)
    if count == 0:
        return 0.0
    return count / u.total


def idf(g: CellId, users) -> float:
    """ln(|U| / (1 + number of users visiting g)); negative when nearly everyone visits g."""
    users = _as_list(users)
    if not users:
        raise ValueError("idf needs at least one user")
    visitors = sum(1 for u in users if g in u.visits)
    return math.log(len(users) / (1 + visitors))


def tfidf(g: CellId, u: VisitProfile, users) -> float:
    return tf(g, u) * idf(g, users)


def locsim(u_i: VisitProfile, u_j: VisitProfile, users) -> float:
    """Mean product of TF-IDF scores over co-visited cells; -inf if the users share no cell."""
    shared = set(u_i.visits) & set(u_j.visits)
    if not shared:
        return -math.inf
    users = _as_list(users)
    total = sum(tfidf(g, u_i, users) * tfidf(g, u_j, users) for g in sorted(shared))
    return total / len(shared)


@dataclass
class _TfidfState:
    users: List[int]
    cells: List[CellId]
    X: sparse.csr_matrix  # users x cells, tfidf
    B: sparse.csr_matrix  # users x cells, visit indicator
    scores: np.ndarray  # tfidf of every (user, visited cell), row-major


def _tfidf_state(profiles: Mapping[int, VisitProfile]) -> _TfidfState:
    users = sorted(profiles)
    cells = sorted({g for p in profiles.values() for g in p.visits})
    col = {g: k for k, g in enumerate(cells)}
    rows, cols, vals = [], [], []
    for r, u in enumerate(users):
        p = profiles[u]
        total = p.total
        for g, n in p.visits.items():
            rows.append(r)
            cols.append(col[g])
            vals.append(n / total)
    shape = (len(users), len(cells))
    rows_a = np.asarray(rows, dtype=np.int64)
    cols_a = np.asarray(cols, dtype=np.int64)
    df = np.bincount(cols_a, minlength=len(cells))
    idf_v = np.log(len(users) / (1.0 + df))
    scores = np.asarray(vals, dtype=float) * idf_v[cols_a]
    X = sparse.csr_matrix((scores, (rows_a, cols_a)), shape=shape)
    B = sparse.csr_matrix((np.ones(len(vals)), (rows_a, cols_a)), shape=shape)
    return _TfidfState(users, cells, X, B, scores)


def tfidf_values(profiles: Mapping[int, VisitProfile]) -> np.ndarray:
    """All tfidf(g, u) for u in U and g in G_u."""
    if not profiles:
        return np.empty(0)
    return _tfidf_state(profiles).scores


def similarity_matrix(profiles: Mapping[int, VisitProfile]) -> Dict[Tuple[int, int], float]:
    """locsim for every co-visiting user pair (i < j)."""
    vals, ui, uj = _ranked_pairs(profiles)
    return {(int(a), int(b)): float(v) for v, a, b in zip(vals, ui, uj)}


def _ranked_pairs(profiles: Mapping[int, VisitProfile]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Co-visiting pairs sorted by locsim descending, ties by (user_a, user_b) ascending."""
    if len(profiles) < 2:
        return np.empty(0), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    st = _tfidf_state(profiles)
    C = sparse.triu(st.B @ st.B.T, k=1).tocoo()
    rows, cols = C.row, C.col
    S = (st.X @ st.X.T).tocsr()
    sums = np.asarray(S[rows, cols]).ravel() if rows.size else np.empty(0)
    vals = sums / C.data
    users = np.asarray(st.users, dtype=np.int64)
    ua, ub = users[rows], users[cols]
    order = np.lexsort((ub, ua, -vals))
    return vals[order], ua[order], ub[order]


def merge_threshold(profiles: Mapping[int, VisitProfile], q_match: float) -> float:
    """Squared ``q_match`` quantile (linear interpolation) of all TF-IDF scores."""
    values = tfidf_values(profiles)
    if values.size == 0:
        return math.inf
    return float(np.quantile(values, q_match)) ** 2


def refine_clusters(
    assignment: ClusterAssignment,
    ds: TripDataset,
    params: AttackParams,
    audit: Optional[List[MergeRecord]] = None,
) -> ClusterAssignment:
    """Merge clusters with rare shared locations until the best match falls below the threshold.

    The threshold is fixed from the first iteration's TF-IDF scores. Each
    iteration realizes up to ``n_matches`` merges at or above it, best first,
    skipping pairs with a member already merged in that iteration.
    """
    grid = GridSpec(params.bbox, params.s_cell_tfidf)
    labels = dict(assignment.assignment)
    profiles = build_profiles(assignment, ds, grid)
    theta = merge_threshold(profiles, params.q_match)
    iteration = 0
    while True:
        vals, ua, ub = _ranked_pairs(profiles)
        if vals.size == 0 or vals[0] < theta:
            break
        iteration += 1
        touched = set()
        realized: Dict[int, int] = {}
        for v, a, b in zip(vals, ua, ub):
            if v < theta or len(realized) >= params.n_matches:
                break
            a, b = int(a), int(b)
            if a in touched or b in touched:
                continue
            touched.update((a, b))
            realized[b] = a
            if audit is not None:
                audit.append(MergeRecord(iteration, a, b, float(v), theta))
        for b, a in realized.items():
            profiles[a] = merge_profiles(profiles[a], profiles.pop(b), user=a)
        for tid, u in labels.items():
            if u in realized:
                labels[tid] = realized[u]
        log.debug("refine iteration %d: %d merges, best %.4g, theta %.4g", iteration, len(realized), vals[0], theta)
    return ClusterAssignment(labels).canonical()


def write_audit_csv(records: Iterable[MergeRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "user_a", "user_b", "locsim", "theta"])
        for r in records:
            w.writerow([r.iteration, r.user_a, r.user_b, repr(r.locsim), repr(r.theta)])
