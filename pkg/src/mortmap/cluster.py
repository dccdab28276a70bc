"""Mahalanobis distances, Ward agglomeration and silhouette-based choice of k."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from os import PathLike
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform

from .errors import InsufficientDataError, SingularityError, ValidationError
from .standardize import RateMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    ridge: float = 0.0
    condition_estimate: float = 1.0


@dataclass(frozen=True)
class DistanceMatrix:
    unit_ids: tuple
    values: np.ndarray
    metric: str = "mahalanobis"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = len(self.unit_ids)
        if v.shape != (n, n):
            raise ValidationError(f"distance matrix shape {v.shape} does not match {n} units")
        if not np.allclose(v, v.T, rtol=0, atol=1e-12):
            raise ValidationError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0) or np.any(v < 0):
            raise ValidationError("distance matrix needs a zero diagonal and non-negative entries")
        if self.metric not in ("mahalanobis", "euclidean"):
            raise ValidationError(f"unknown metric {self.metric!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))

    @property
    def n(self) -> int:
        return len(self.unit_ids)


class Merge(NamedTuple):
    cluster_a: int
    cluster_b: int
    height: float
    size: int


@dataclass(frozen=True)
class ClusterSolution:
    unit_ids: tuple
    merges: tuple
    silhouette_by_k: dict
    chosen_k: int
    assignments: dict = field(default_factory=dict)


def _values(matrix) -> np.ndarray:
    return np.asarray(matrix.values if isinstance(matrix, RateMatrix) else matrix, dtype=float)


def estimate_covariance(matrix, ridge_lambda: float = 1e-8, cond_max: float = 1e12) -> CovarianceEstimate:
    """Pooled sample covariance of the profile columns (n-1 denominator).

    When the condition number exceeds ``cond_max`` a ridge of
    ``ridge_lambda * trace / p`` is added to the diagonal.
    """
    x = _values(matrix)
    if x.ndim != 2:
        raise ValidationError("expected a 2-D units x sites matrix")
    n, p = x.shape
    if n < 2:
        raise InsufficientDataError("covariance needs at least two units")
    if n < p + 2:
        logger.warning("only %d units for %d sites; covariance may be ill-conditioned", n, p)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = float(np.linalg.cond(cov))
    if not np.isfinite(cond):
        cond = np.inf
    ridge = 0.0
    if cond > cond_max:
        ridge = ridge_lambda * float(np.trace(cov)) / p
        cov = cov + ridge * np.eye(p)
        logger.info("covariance condition %.3g > %.3g; added ridge %.3g", cond, cond_max, ridge)
        cond = float(np.linalg.cond(cov))
    singular = cond > cond_max
    if not singular:
        try:
            linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            singular = True
    if singular:
        raise SingularityError(
            "covariance is singular even after regularization; remove collinear or constant site columns")
    return CovarianceEstimate(cov, ridge, cond)


def mahalanobis_matrix(matrix, cov: CovarianceEstimate | np.ndarray, unit_ids: Sequence[str] | None = None,
                       refine: int = 2) -> DistanceMatrix:
    """All pairwise Mahalanobis distances.

    For each pair the system ``Sigma u = x - y`` is solved with the Cholesky
    factor and ``refine`` rounds of iterative refinement, and the distance
    is ``sqrt((x - y) . u)``. Refinement keeps the result accurate when
    ``Sigma`` is poorly conditioned.
    """
    x = _values(matrix)
    if unit_ids is None:
        unit_ids = matrix.unit_ids if isinstance(matrix, RateMatrix) else tuple(str(i) for i in range(len(x)))
    sigma = cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    if sigma.shape != (x.shape[1], x.shape[1]):
        raise ValidationError(f"covariance is {sigma.shape}, profiles have {x.shape[1]} columns")
    try:
        factor = linalg.cho_factor(sigma, lower=True)
    except linalg.LinAlgError:
        raise SingularityError("covariance is not positive definite") from None
    n = len(x)
    d = np.zeros((n, n))
    for i in range(n - 1):
        delta = (x[i] - x[i + 1:]).T
        u = linalg.cho_solve(factor, delta)
        for _ in range(refine):
            u += linalg.cho_solve(factor, delta - sigma @ u)
        row = np.sqrt(np.maximum((delta * u).sum(axis=0), 0.0))
        d[i, i + 1:] = row
        d[i + 1:, i] = row
    return DistanceMatrix(tuple(unit_ids), d, "mahalanobis")


def euclidean_matrix(matrix, unit_ids: Sequence[str] | None = None) -> DistanceMatrix:
    x = _values(matrix)
    if unit_ids is None:
        unit_ids = matrix.unit_ids if isinstance(matrix, RateMatrix) else tuple(str(i) for i in range(len(x)))
    return DistanceMatrix(tuple(unit_ids), squareform(pdist(x)), "euclidean")


def ward_cluster(dist: DistanceMatrix) -> list[Merge]:
    """Ward agglomeration on squared distances (the Ward.D2 convention).

    Singletons are clusters ``0..n-1``; the cluster formed at step ``s`` is
    ``n + s``. Ties go to the lexicographically smallest
    ``(min index, max index)`` pair. Heights are unsquared.
    """
    n = dist.n
    if n < 2:
        raise InsufficientDataError("clustering needs at least two units")
    total = 2 * n - 1
    d2 = np.full((total, total), np.inf)
    d2[:n, :n] = np.asarray(dist.values) ** 2
    size = np.zeros(total, dtype=int)
    size[:n] = 1
    active = np.zeros(total, dtype=bool)
    active[:n] = True
    merges = []
    for step in range(n - 1):
        cand = np.where(np.triu(np.outer(active, active), k=1), d2, np.inf)
        flat = int(np.argmin(cand))  # row-major: smallest i, then smallest j
        a, b = divmod(flat, total)
        new = n + step
        na, nb = size[a], size[b]
        dab = d2[a, b]
        others = np.flatnonzero(active)
        others = others[(others != a) & (others != b)]
        nk = size[others]
        upd = ((na + nk) * d2[a, others] + (nb + nk) * d2[b, others] - nk * dab) / (na + nb + nk)
        d2[new, others] = upd
        d2[others, new] = upd
        active[[a, b]] = False
        active[new] = True
        size[new] = na + nb
        merges.append(Merge(int(a), int(b), float(np.sqrt(max(dab, 0.0))), int(na + nb)))
    return merges


def cut_tree(merges: Sequence[Merge], n: int, k: int) -> np.ndarray:
    """Labels ``1..k`` after applying the first ``n - k`` merges.

    Labels are numbered by the smallest unit index in each cluster.
    """
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} outside 1..{n}")
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step, m in enumerate(merges[: n - k]):
        parent[find(m.cluster_a)] = n + step
        parent[find(m.cluster_b)] = n + step
    roots = [find(i) for i in range(n)]
    label_of = {}
    labels = np.empty(n, dtype=int)
    for i, r in enumerate(roots):
        labels[i] = label_of.setdefault(r, len(label_of) + 1)
    return labels


def silhouette_samples(dist, labels) -> np.ndarray:
    """Per-unit silhouette width; members of singleton clusters score 0."""
    d = np.asarray(dist.values if isinstance(dist, DistanceMatrix) else dist, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    n = len(labels)
    s = np.zeros(n)
    if len(uniq) < 2:
        return s
    masks = {c: labels == c for c in uniq}
    for i in range(n):
        own = masks[labels[i]]
        m = own.sum()
        if m == 1:
            continue
        a = d[i, own].sum() / (m - 1)
        b = min(d[i, masks[c]].mean() for c in uniq if c != labels[i])
        top = max(a, b)
        s[i] = 0.0 if top == 0 else (b - a) / top
    return s


def silhouette_select(dist: DistanceMatrix, merges: Sequence[Merge], k_range=range(2, 11)) -> ClusterSolution:
    """Cut the dendrogram at each k and keep the k with the highest mean silhouette.

    k values outside ``2..n-1`` are skipped; ties go to the smallest k.
    """
    n = dist.n
    ks = sorted({int(k) for k in k_range if 2 <= int(k) <= n - 1})
    if not ks:
        raise ValidationError(f"no admissible k in {list(k_range)} for {n} units (need 2..{n - 1})")
    scores = {}
    for k in ks:
        scores[k] = float(silhouette_samples(dist, cut_tree(merges, n, k)).mean())
    best = max(scores.values())
    chosen = min(k for k, v in scores.items() if v == best)
    labels = cut_tree(merges, n, chosen)
    assignments = {u: int(c) for u, c in zip(dist.unit_ids, labels)}
    return ClusterSolution(dist.unit_ids, tuple(merges), scores, chosen, assignments)


def cluster_units(matrix: RateMatrix, k_range=range(2, 11), ridge_lambda: float = 1e-8,
                  cond_max: float = 1e12):
    """Covariance, Mahalanobis distances, Ward merges and silhouette choice in one call."""
    cov = estimate_covariance(matrix, ridge_lambda, cond_max)
    dist = mahalanobis_matrix(matrix, cov)
    merges = ward_cluster(dist)
    return silhouette_select(dist, merges, k_range), dist, cov


def write_merges_csv(solution: ClusterSolution, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "cluster_a", "cluster_b", "height"])
        for step, m in enumerate(solution.merges, start=1):
            w.writerow([step, m.cluster_a, m.cluster_b, repr(m.height)])


def write_assignments_csv(solution: ClusterSolution, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "cluster"])
        for u in solution.unit_ids:
            w.writerow([u, solution.assignments[u]])


def write_silhouette_csv(solution: ClusterSolution, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean_silhouette"])
        for k in sorted(solution.silhouette_by_k):
            w.writerow([k, repr(solution.silhouette_by_k[k])])


def read_assignments_csv(path: str | PathLike) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return {row["unit_id"]: int(row["cluster"]) for row in reader}
