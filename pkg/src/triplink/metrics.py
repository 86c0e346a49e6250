"""Evaluation: clustering indices, point-knowledge re-identification, mobility characteristics, regression."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Hashable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .core import ClusterAssignment, TripDataset, derived_rng, haversine_np
from .grid import GridSpec

REPORT_SCHEMA_VERSION = 1

Labels = Union[ClusterAssignment, Mapping[str, Hashable], Sequence[Hashable]]


def _aligned(pred: Labels, truth: Labels) -> Tuple[List[Hashable], List[Hashable]]:
    if isinstance(pred, ClusterAssignment):
        pred = pred.assignment
    if isinstance(truth, ClusterAssignment):
        truth = truth.assignment
    if isinstance(pred, Mapping) and isinstance(truth, Mapping):
        if set(pred) != set(truth):
            raise ValueError("prediction and truth cover different trip sets")
        keys = sorted(pred)
        return [pred[k] for k in keys], [truth[k] for k in keys]
    if isinstance(pred, Mapping) or isinstance(truth, Mapping):
        raise TypeError("pass both labelings as mappings or both as sequences")
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise ValueError("labelings differ in length")
    return pred, truth


@dataclass(frozen=True)
class ContingencyTable:
    """Rows are predicted clusters, columns true classes."""

    counts: np.ndarray
    a: np.ndarray  # cluster sizes
    b: np.ndarray  # class sizes
    n: int

    @classmethod
    def from_labels(cls, pred: Labels, truth: Labels) -> "ContingencyTable":
        p, t = _aligned(pred, truth)
        _, pi = np.unique(np.asarray([str(x) for x in p]), return_inverse=True) if p else (None, np.empty(0, int))
        _, ti = np.unique(np.asarray([str(x) for x in t]), return_inverse=True) if t else (None, np.empty(0, int))
        rows = int(pi.max()) + 1 if len(p) else 0
        cols = int(ti.max()) + 1 if len(t) else 0
        counts = np.zeros((rows, cols), dtype=np.int64)
        np.add.at(counts, (pi, ti), 1)
        return cls(counts, counts.sum(axis=1), counts.sum(axis=0), len(p))


def _comb2(x) -> int:
    x = np.asarray(x, dtype=object)
    return int(sum(int(v) * (int(v) - 1) // 2 for v in x.ravel()))


def ari(pred: Labels, truth: Labels) -> float:
    """Adjusted Rand index (Hubert and Arabie)."""
    ct = ContingencyTable.from_labels(pred, truth)
    if ct.n < 2:
        return 1.0
    index = _comb2(ct.counts)
    sa, sb = _comb2(ct.a), _comb2(ct.b)
    total = ct.n * (ct.n - 1) // 2
    expected = sa * sb / total
    max_index = (sa + sb) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def entropy(sizes) -> float:
    sizes = np.asarray(sizes, dtype=float)
    sizes = sizes[sizes > 0]
    n = sizes.sum()
    if n == 0:
        return 0.0
    p = sizes / n
    return float(-np.sum(p * np.log(p)))


def mutual_info(ct: ContingencyTable) -> float:
    nz = ct.counts > 0
    if not np.any(nz):
        return 0.0
    nij = ct.counts[nz].astype(float)
    ai = np.broadcast_to(ct.a[:, None], ct.counts.shape)[nz].astype(float)
    bj = np.broadcast_to(ct.b[None, :], ct.counts.shape)[nz].astype(float)
    n = float(ct.n)
    return float(max(0.0, np.sum(nij / n * np.log(n * nij / (ai * bj)))))


def expected_mutual_info(ct: ContingencyTable) -> float:
    """E[MI] under the hypergeometric model of random partitions with fixed marginals."""
    n = ct.n
    if n == 0:
        return 0.0
    a_sizes = Counter(int(x) for x in ct.a)
    b_sizes = Counter(int(x) for x in ct.b)
    lg_n = gammaln(n + 1)
    emi = 0.0
    for ai, ca in a_sizes.items():
        for bj, cb in b_sizes.items():
            lo, hi = max(1, ai + bj - n), min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1, dtype=float)
            term = nij / n * np.log(n * nij / (ai * bj))
            log_p = (
                gammaln(ai + 1) + gammaln(bj + 1) + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                - lg_n - gammaln(nij + 1) - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                - gammaln(n - ai - bj + nij + 1)
            )
            emi += ca * cb * float(np.sum(term * np.exp(log_p)))
    return emi


def _same_partition(ct: ContingencyTable) -> bool:
    r, c = ct.counts.shape
    return r == c and np.count_nonzero(ct.counts) == r


def ami(pred: Labels, truth: Labels) -> float:
    """Adjusted mutual information with arithmetic-mean normalization, natural log."""
    ct = ContingencyTable.from_labels(pred, truth)
    r, c = ct.counts.shape
    if (r <= 1 and c <= 1) or ct.n == 0:
        return 1.0
    if _same_partition(ct):
        return 1.0
    mi = mutual_info(ct)
    emi = expected_mutual_info(ct)
    norm = (entropy(ct.a) + entropy(ct.b)) / 2.0
    denom = norm - emi
    if abs(denom) < 1e-15:
        return 0.0
    return float((mi - emi) / denom)


def _conditional_entropy(ct: ContingencyTable, given_rows: bool) -> float:
    """H(class | cluster) if ``given_rows`` else H(cluster | class)."""
    nz = ct.counts > 0
    nij = ct.counts[nz].astype(float)
    if given_rows:
        marg = np.broadcast_to(ct.a[:, None], ct.counts.shape)[nz].astype(float)
    else:
        marg = np.broadcast_to(ct.b[None, :], ct.counts.shape)[nz].astype(float)
    return float(-np.sum(nij / ct.n * np.log(nij / marg)))


def homogeneity_completeness(pred: Labels, truth: Labels) -> Tuple[float, float]:
    ct = ContingencyTable.from_labels(pred, truth)
    if ct.n == 0:
        return 1.0, 1.0
    h_truth = entropy(ct.b)
    h_pred = entropy(ct.a)
    h = 1.0 if h_truth == 0 else 1.0 - _conditional_entropy(ct, True) / h_truth
    c = 1.0 if h_pred == 0 else 1.0 - _conditional_entropy(ct, False) / h_pred
    return h, c


def clustering_scores(pred: Labels, truth: Labels) -> Dict[str, float]:
    h, c = homogeneity_completeness(pred, truth)
    return {"ari": ari(pred, truth), "ami": ami(pred, truth), "homogeneity": h, "completeness": c}


# --- re-identification with p known points ---------------------------------


def _ci_halfwidth(x: np.ndarray, level: float = 0.95) -> float:
    if x.size < 2:
        return 0.0
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        return 0.0
    return float(stats.t.ppf(0.5 + level / 2, x.size - 1) * sd / math.sqrt(x.size))


@dataclass(frozen=True)
class ReidResult:
    user: str
    n_trips: int
    precision: np.ndarray
    recall: np.ndarray
    f_score: np.ndarray

    @property
    def mean_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def mean_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def mean_f(self) -> float:
        return float(np.mean(self.f_score))

    @property
    def ci_precision(self) -> float:
        return _ci_halfwidth(self.precision)

    @property
    def ci_recall(self) -> float:
        return _ci_halfwidth(self.recall)

    @property
    def ci_f(self) -> float:
        return _ci_halfwidth(self.f_score)

    def as_row(self) -> Dict[str, object]:
        return {
            "user": self.user,
            "n_trips": self.n_trips,
            "mean_precision": self.mean_precision,
            "ci_precision": self.ci_precision,
            "mean_recall": self.mean_recall,
            "ci_recall": self.ci_recall,
            "mean_f": self.mean_f,
            "ci_f": self.ci_f,
        }


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def reid_from_hits(
    hit_trip_ids, pred: ClusterAssignment, true_trip_ids
) -> Tuple[float, float, float]:
    """Precision, recall and F for one draw.

    Everything in the predicted clusters of the hit trips is retrieved.
    """
    clusters = pred.clusters()
    retrieved = set()
    for cid in {pred[t] for t in hit_trip_ids}:
        retrieved.update(clusters[cid])
    truth = set(true_trip_ids)
    tp = len(retrieved & truth)
    p = tp / len(retrieved)
    r = tp / len(truth)
    return p, r, f_score(p, r)


def reid_evaluate(
    pred: ClusterAssignment,
    ds: TripDataset,
    p: int = 4,
    n_samples: int = 100,
    rng_seed: int = 0,
) -> List[ReidResult]:
    """Simulate an attacker knowing ``p`` random points of each user with at least p + 1 trips."""
    if ds.ground_truth is None:
        raise ValueError("evaluation requires labels")
    if p < 1 or n_samples < 1:
        raise ValueError("p and n_samples must be positive")
    if not set(ds.trips) <= set(pred.assignment):
        raise ValueError("assignment does not cover every trip of the dataset")
    clusters = pred.clusters()
    results = []
    for user, tids in sorted(ds.users().items()):
        if len(tids) < p + 1:
            continue
        owner = np.concatenate([np.full(len(ds.trips[t]), k) for k, t in enumerate(tids)])
        truth = set(tids)
        rng = derived_rng(rng_seed, str(user))
        prec = np.empty(n_samples)
        rec = np.empty(n_samples)
        for s in range(n_samples):
            picks = rng.choice(owner.size, size=min(p, owner.size), replace=False)
            retrieved = set()
            for cid in {pred[tids[k]] for k in np.unique(owner[picks])}:
                retrieved.update(clusters[cid])
            tp = len(retrieved & truth)
            prec[s] = tp / len(retrieved)
            rec[s] = tp / len(truth)
        denom = prec + rec
        f = np.where(denom > 0, 2 * prec * rec / np.where(denom > 0, denom, 1), 0.0)
        results.append(ReidResult(str(user), len(tids), prec, rec, f))
    return results


# --- user mobility characteristics -----------------------------------------


@dataclass(frozen=True)
class UserCharacteristics:
    user: str
    avg_location_entropy: float
    random_entropy: float
    n_trips: int
    radius_of_gyration: float

    def as_row(self) -> Dict[str, object]:
        return {
            "user": self.user,
            "avg_location_entropy": self.avg_location_entropy,
            "random_entropy": self.random_entropy,
            "n_trips": self.n_trips,
            "radius_of_gyration": self.radius_of_gyration,
        }


CHARACTERISTICS = ("avg_location_entropy", "random_entropy", "n_trips", "radius_of_gyration")


def user_characteristics(ds: TripDataset, grid: GridSpec) -> List[UserCharacteristics]:
    """Location entropy, random entropy, trip count and radius of gyration per true user.

    Locations are the grid cells of trip start and end points.
    """
    if ds.ground_truth is None:
        raise ValueError("evaluation requires labels")
    users = ds.users()
    visits: Dict[str, Counter] = {}
    per_cell: Dict[object, Counter] = defaultdict(Counter)
    for user, tids in users.items():
        c = Counter()
        for tid in tids:
            trip = ds.trips[tid]
            for k in (0, -1):
                c[grid.cell_of_latlon(trip.lat[k], trip.lon[k])] += 1
        visits[user] = c
        for cell, n in c.items():
            per_cell[cell][user] += n
    cell_entropy = {cell: entropy(list(cnt.values())) for cell, cnt in per_cell.items()}

    out = []
    for user in sorted(users):
        cells = visits[user]
        lat = np.concatenate([ds.trips[t].lat for t in users[user]])
        lon = np.concatenate([ds.trips[t].lon for t in users[user]])
        d = haversine_np(lat, lon, lat.mean(), lon.mean())
        out.append(
            UserCharacteristics(
                user=str(user),
                avg_location_entropy=float(np.mean([cell_entropy[g] for g in cells])),
                random_entropy=math.log(len(cells)),
                n_trips=len(users[user]),
                radius_of_gyration=float(np.sqrt(np.mean(d ** 2))),
            )
        )
    return out


class Regression(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    p_value: float


def ols_univariate(x, y) -> Regression:
    """Least-squares line with a two-sided t-test on the slope (n - 2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and of equal length")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    if np.all(x == x[0]):
        raise ValueError("degenerate regressor")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    se = math.sqrt(ss_res / (n - 2) / sxx)
    if se == 0.0:
        p = 0.0 if slope != 0 else 1.0
    else:
        p = float(2 * stats.t.sf(abs(slope / se), n - 2))
    return Regression(slope, intercept, r2, p)


def regression_table(
    reid: Sequence[ReidResult], chars: Sequence[UserCharacteristics]
) -> List[Dict[str, object]]:
    """Regress mean F-score on each characteristic across users present in both inputs."""
    f_by_user = {r.user: r.mean_f for r in reid}
    rows = [c for c in chars if c.user in f_by_user]
    out = []
    for name in CHARACTERISTICS:
        x = [getattr(c, name) for c in rows]
        y = [f_by_user[c.user] for c in rows]
        entry: Dict[str, object] = {"characteristic": name, "n_users": len(rows)}
        try:
            entry.update(ols_univariate(x, y)._asdict())
        except ValueError as exc:
            entry["error"] = str(exc)
        out.append(entry)
    return out


def median_f(reid: Sequence[ReidResult]) -> Optional[float]:
    if not reid:
        return None
    return float(np.median([r.mean_f for r in reid]))


def write_reid_csv(reid: Sequence[ReidResult], path) -> None:
    """Per-user means and CI half-widths, sorted by ascending mean F."""
    cols = ["user", "n_trips", "mean_precision", "ci_precision", "mean_recall", "ci_recall", "mean_f", "ci_f"]
    _write_rows(path, cols, [r.as_row() for r in sorted(reid, key=lambda r: (r.mean_f, r.user))])


def write_characteristics_csv(chars: Sequence[UserCharacteristics], reid: Sequence[ReidResult], path) -> None:
    f_by_user = {r.user: r.mean_f for r in reid}
    cols = ["user", *CHARACTERISTICS, "mean_f"]
    rows = []
    for c in chars:
        row = c.as_row()
        row["mean_f"] = f_by_user.get(c.user, "")
        rows.append(row)
    _write_rows(path, cols, rows)


def write_median_f_csv(rows: Sequence[Mapping[str, object]], path) -> None:
    """Rows of (dataset, obfuscated, s_cell, p, median_f) for raw-vs-truncated comparisons."""
    _write_rows(path, ["dataset", "obfuscated", "s_cell", "p", "median_f"], rows)


def _write_rows(path, cols, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
