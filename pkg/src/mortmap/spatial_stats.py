"""Global and local spatial autocorrelation statistics with analytical inference.

All functions take the per-unit values for a single site, ordered like the
``unit_ids`` of the weights object they are paired with.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from os import PathLike
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import (
    DegenerateWeightsError,
    InsufficientDataError,
    IslandError,
    ValidationError,
    ZeroVarianceError,
)
from .weights import SpatialWeights

logger = logging.getLogger(__name__)


class SpatialClass(str, enum.Enum):
    HIGH_HIGH = "High-High"
    LOW_LOW = "Low-Low"
    HIGH_LOW = "High-Low"
    LOW_HIGH = "Low-High"
    HOTSPOT = "Hotspot"
    COLDSPOT = "Coldspot"
    NOT_SIGNIFICANT = "Not Significant"

    def __str__(self):
        return self.value


LISA_CLASSES = (SpatialClass.HIGH_HIGH, SpatialClass.LOW_LOW, SpatialClass.HIGH_LOW,
                SpatialClass.LOW_HIGH, SpatialClass.NOT_SIGNIFICANT)
GISTAR_CLASSES = (SpatialClass.HOTSPOT, SpatialClass.COLDSPOT, SpatialClass.NOT_SIGNIFICANT)


@dataclass(frozen=True)
class GlobalMoranResult:
    site: str
    I: float
    expected_I: float
    variance_I: float
    z: float
    p_two_sided: float
    p_one_sided: float
    n: int


@dataclass(frozen=True)
class LocalStatResult:
    unit_id: str
    site: str
    statistic: float
    z: float
    p_two_sided: float
    label: SpatialClass
    expected: float = math.nan
    variance: float = math.nan
    lag: float = math.nan


def _as_values(values, n: int) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.shape != (n,):
        raise ValidationError(f"expected {n} values, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("values contain NaN or infinity")
    return x


def _check_not_constant(x: np.ndarray) -> None:
    spread = np.ptp(x)
    if spread == 0 or spread <= 1e-12 * max(1.0, float(np.abs(x).max())):
        raise ZeroVarianceError("values are constant; spatial statistics are undefined")


def _prepare(values, W: SpatialWeights, islands: str):
    """Validate inputs; returns (values, dense weights, kept unit indices)."""
    x = _as_values(values, W.n)
    keep = np.arange(W.n)
    isl = W.islands
    if isl:
        if islands == "error":
            raise IslandError(f"units without neighbors: {', '.join(isl)}")
        if islands != "drop":
            raise ValidationError(f"islands must be 'error' or 'drop', not {islands!r}")
        logger.warning("dropping island unit(s): %s", ", ".join(isl))
        keep = np.array([i for i, u in enumerate(W.unit_ids) if u not in set(isl)], dtype=int)
        sub = W.subset([W.unit_ids[i] for i in keep])
        if sub.kind != "binary":
            sub = _restandardize(sub)
        return x[keep], sub.dense(), keep
    return x, W.dense(), keep


def _restandardize(W: SpatialWeights) -> SpatialWeights:
    m = W.matrix.tocsr(copy=True).astype(float)
    sums = np.asarray(m.sum(axis=1)).ravel()
    sums[sums == 0] = 1.0
    m = m.multiply(1.0 / sums[:, None]).tocsr()
    return SpatialWeights(W.unit_ids, m, W.kind)


def _two_sided(z):
    return 2.0 * stats.norm.sf(np.abs(z))


# --------------------------------------------------------------------------- global


def _moran_terms(w: np.ndarray):
    s0 = w.sum()
    s1 = 0.5 * ((w + w.T) ** 2).sum()
    s2 = ((w.sum(axis=1) + w.sum(axis=0)) ** 2).sum()
    return s0, s1, s2


def moran_I(batch: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Moran's I along the last axis of ``batch``."""
    z = batch - batch.mean(axis=-1, keepdims=True)
    num = np.einsum("...i,...i->...", z, z @ w.T)
    den = np.einsum("...i,...i->...", z, z)
    return batch.shape[-1] / w.sum() * num / den


def moran_variance(w: np.ndarray, x: np.ndarray, assumption: str = "randomization") -> float:
    n = len(x)
    s0, s1, s2 = _moran_terms(w)
    ei = -1.0 / (n - 1)
    if assumption == "normality":
        return (n * n * s1 - n * s2 + 3 * s0 ** 2) / ((n * n - 1) * s0 ** 2) - ei ** 2
    if assumption != "randomization":
        raise ValidationError(f"unknown variance assumption {assumption!r}")
    z = x - x.mean()
    m2 = (z ** 2).mean()
    b2 = (z ** 4).mean() / m2 ** 2
    num = (n * ((n * n - 3 * n + 3) * s1 - n * s2 + 3 * s0 ** 2)
           - b2 * ((n * n - n) * s1 - 2 * n * s2 + 6 * s0 ** 2))
    return num / ((n - 1) * (n - 2) * (n - 3) * s0 ** 2) - ei ** 2


def global_moran(values, W: SpatialWeights, site: str = "", variance: str = "randomization",
                 islands: str = "error") -> GlobalMoranResult:
    """Global Moran's I with analytical z and normal p-values.

    With three or fewer units the variance formula is undefined; I is still
    returned and the inference fields are NaN.
    """
    if W.kind == "star_row_standardized":
        raise ValidationError("Moran's I takes weights without self-links")
    x, w, _ = _prepare(values, W, islands)
    n = len(x)
    if n < 2:
        raise InsufficientDataError("Moran's I needs at least two units")
    _check_not_constant(x)
    I = float(moran_I(x, w))
    ei = -1.0 / (n - 1)
    if n <= 3:
        logger.warning("n=%d: variance of I undefined, inference skipped", n)
        return GlobalMoranResult(site, I, ei, math.nan, math.nan, math.nan, math.nan, n)
    var = float(moran_variance(w, x, variance))
    z = (I - ei) / math.sqrt(var)
    p2 = float(_two_sided(z))
    p1 = float(stats.norm.sf(z) if z > 0 else stats.norm.cdf(z))
    return GlobalMoranResult(site, I, ei, var, z, p2, p1, n)


def global_moran_stat(batch: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Centered I (I minus its null expectation); permutation-test statistic."""
    n = batch.shape[-1]
    return moran_I(batch, w) + 1.0 / (n - 1)


# --------------------------------------------------------------------------- local Moran


def _local_moran_parts(batch: np.ndarray, w: np.ndarray, variance: str):
    """Returns I_i, E[I_i], Var[I_i], lag for every unit along the last axis."""
    n = batch.shape[-1]
    z = batch - batch.mean(axis=-1, keepdims=True)
    ss = (z ** 2).sum(axis=-1, keepdims=True)
    s2 = ss / (n - 1)
    m2 = ss / n
    lag = z @ w.T
    I = z * lag / s2
    off = w.copy()
    np.fill_diagonal(off, 0.0)
    wi = off.sum(axis=1)
    wi2 = (off ** 2).sum(axis=1)
    if variance == "conditional":
        # unit i fixed, the other n-1 values randomly permuted
        N = n - 1
        mu = -z / N
        var_pool = (ss - z ** 2) / N - mu ** 2
        var_lag = var_pool * N / (N - 1) * (wi2 - wi ** 2 / N)
        expected = z * wi * mu / s2
        var = z ** 2 * var_lag / s2 ** 2
    elif variance == "total":
        # all n values permuted; moments expressed on the sample-variance scale
        scale = m2 / s2
        b2 = (z ** 4).sum(axis=-1, keepdims=True) / n / m2 ** 2
        wkh = wi ** 2 - wi2
        expected = -wi / (n - 1) * scale
        var = (wi2 * (n - b2) / (n - 1)
               + wkh * (2 * b2 - n) / ((n - 1) * (n - 2))
               - (wi / (n - 1)) ** 2) * scale ** 2
    else:
        raise ValidationError(f"unknown local variance {variance!r}")
    return I, expected, var, lag


def _standardize(stat, expected, var):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (stat - expected) / np.sqrt(var)
    return np.where(var > 0, z, 0.0)


def local_moran_stat(batch: np.ndarray, w: np.ndarray, variance: str = "conditional") -> np.ndarray:
    I, e, v, _ = _local_moran_parts(batch, w, variance)
    return _standardize(I, e, v)


def _gate(p: np.ndarray, alpha: float, fdr: bool) -> np.ndarray:
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if fdr:
        return stats.false_discovery_control(p, method="bh") < alpha
    return p < alpha


def local_moran(values, W: SpatialWeights, alpha: float = 0.05, site: str = "",
                variance: str = "conditional", fdr: bool = False,
                islands: str = "error") -> list[LocalStatResult]:
    """Local Moran's I_i with quadrant classes gated on p < alpha.

    ``I_i = (x_i - mean) / s^2 * sum_j w_ij (x_j - mean)`` with ``s^2`` the
    n-1 sample variance.

    ``variance="conditional"`` takes moments with unit i's own value held
    fixed while the other values are permuted over the remaining locations;
    ``"total"`` uses the classic unconditional randomization moments, which
    average over unit i's value as well.
    """
    if W.kind == "star_row_standardized":
        raise ValidationError("local Moran takes weights without self-links")
    x, w, keep = _prepare(values, W, islands)
    n = len(x)
    if n < 4:
        raise InsufficientDataError("local Moran needs at least four units")
    _check_not_constant(x)
    I, e, v, lag = _local_moran_parts(x, w, variance)
    z = _standardize(I, e, v)
    p = _two_sided(z)
    sig = _gate(p, alpha, fdr)
    centered = x - x.mean()
    out = {}
    for k, i in enumerate(keep):
        if not sig[k]:
            label = SpatialClass.NOT_SIGNIFICANT
        elif centered[k] > 0:
            label = SpatialClass.HIGH_HIGH if lag[k] > 0 else SpatialClass.HIGH_LOW
        else:
            label = SpatialClass.LOW_HIGH if lag[k] > 0 else SpatialClass.LOW_LOW
        out[i] = LocalStatResult(W.unit_ids[i], site, float(I[k]), float(z[k]), float(p[k]), label,
                                 float(e[k]), float(v[k]), float(lag[k]))
    return _fill_dropped(out, W, site)


def _fill_dropped(out: dict, W: SpatialWeights, site: str) -> list[LocalStatResult]:
    return [out.get(i) or LocalStatResult(u, site, math.nan, math.nan, math.nan,
                                          SpatialClass.NOT_SIGNIFICANT)
            for i, u in enumerate(W.unit_ids)]


# --------------------------------------------------------------------------- Gi*


def _gistar_denominator(w: np.ndarray, x_sd, n: int, unit_ids=None):
    sw = w.sum(axis=1)
    sw2 = (w ** 2).sum(axis=1)
    bracket = (n * sw2 - sw ** 2) / (n - 1)
    bad = np.flatnonzero(bracket <= 1e-15)
    if len(bad):
        name = unit_ids[bad[0]] if unit_ids is not None else bad[0]
        raise DegenerateWeightsError(f"Gi* variance term is non-positive for unit {name!r}")
    return sw, np.sqrt(bracket)


def gistar_stat(batch: np.ndarray, w: np.ndarray, ddof: int = 0) -> np.ndarray:
    """Gi* for every unit along the last axis (already a z-score).

    With ``ddof=0`` the value has unit variance under random relabeling of
    all n values; ``ddof=1`` shrinks it by sqrt((n-1)/n).
    """
    n = batch.shape[-1]
    mean = batch.mean(axis=-1, keepdims=True)
    sd = batch.std(axis=-1, ddof=ddof, keepdims=True)
    sw, root = _gistar_denominator(w, sd, n)
    return (batch @ w.T - mean * sw) / (sd * root)


def getis_ord_gistar(values, W: SpatialWeights, alpha: float = 0.05, site: str = "",
                     fdr: bool = False, islands: str = "error", ddof: int = 0) -> list[LocalStatResult]:
    """Getis-Ord Gi* z-scores with Hotspot/Coldspot classes.

    ``G_i* = (sum_j w_ij x_j - mean * sum_j w_ij)
    / (S * sqrt((n sum_j w_ij^2 - (sum_j w_ij)^2) / (n - 1)))``

    Mean and ``S`` are taken over all n units, the unit itself included, and
    ``W`` must carry self-weights. ``S`` uses ``ddof`` (default 0, which
    makes G_i* exactly standardized under total randomization; ``ddof=1``
    is the n-1 variant).
    """
    x, w, keep = _prepare(values, W, islands)
    n = len(x)
    if n < 2:
        raise InsufficientDataError("Gi* needs at least two units")
    if np.any(np.diag(w) <= 0):
        raise ValidationError("Gi* needs self-inclusive (star) weights")
    _check_not_constant(x)
    _gistar_denominator(w, None, n, [W.unit_ids[i] for i in keep])
    g = gistar_stat(x, w, ddof)
    p = _two_sided(g)
    sig = _gate(p, alpha, fdr)
    out = {}
    for k, i in enumerate(keep):
        if sig[k] and g[k] > 0:
            label = SpatialClass.HOTSPOT
        elif sig[k] and g[k] < 0:
            label = SpatialClass.COLDSPOT
        else:
            label = SpatialClass.NOT_SIGNIFICANT
        out[i] = LocalStatResult(W.unit_ids[i], site, float(g[k]), float(g[k]), float(p[k]), label,
                                 0.0, 1.0, float(w[k] @ x))
    return _fill_dropped(out, W, site)


# --------------------------------------------------------------------------- permutation oracle


def permutation_pvalue(statistic_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], values,
                       W: SpatialWeights, n_perm: int = 9999, seed=None, conditional: bool = True,
                       chunk: int = 10_000, jobs: int = 1):
    """Empirical two-sided p-value(s) by random relabeling.

    ``statistic_fn(batch, w)`` maps an ``(m, n)`` array of value vectors and
    the dense weights to ``(m,)`` (global statistic) or ``(m, n)`` (one value
    per unit). The estimate is ``(1 + #{|perm| >= |observed|}) / (1 + n_perm)``.
    Local statistics use conditional permutation (unit i held fixed) unless
    ``conditional=False``. Each unit draws from its own child of
    ``SeedSequence(seed)``, so results do not depend on ``jobs``.
    """
    if n_perm < 99:
        raise ValidationError("n_perm must be at least 99")
    x = _as_values(values, W.n)
    w = W.dense()
    n = len(x)
    observed = np.asarray(statistic_fn(x[None, :], w))[0]
    is_global = np.ndim(observed) == 0
    seq = np.random.SeedSequence(seed)

    def count_exceed(perm_stats, obs):
        return int(np.count_nonzero(np.abs(perm_stats) >= np.abs(obs) - 1e-12 * max(1.0, abs(obs))))

    def chunks():
        done = 0
        while done < n_perm:
            m = min(chunk, n_perm - done)
            yield m
            done += m

    if is_global or not conditional:
        rng = np.random.default_rng(seq)
        hits = np.zeros(() if is_global else n, dtype=np.int64)
        for m in chunks():
            batch = rng.permuted(np.broadcast_to(x, (m, n)), axis=1)
            s = np.asarray(statistic_fn(batch, w))
            if is_global:
                hits += count_exceed(s, float(observed))
            else:
                tol = 1e-12 * np.maximum(1.0, np.abs(observed))
                hits += np.count_nonzero(np.abs(s) >= np.abs(observed) - tol, axis=0)
        p = (1.0 + hits) / (1.0 + n_perm)
        return float(p) if is_global else p

    children = seq.spawn(n)

    def one_unit(i):
        rng = np.random.default_rng(children[i])
        others = np.delete(x, i)
        mask = np.arange(n) != i
        hits = 0
        for m in chunks():
            batch = np.empty((m, n))
            batch[:, i] = x[i]
            batch[:, mask] = rng.permuted(np.broadcast_to(others, (m, n - 1)), axis=1)
            s = np.asarray(statistic_fn(batch, w))[:, i]
            hits += count_exceed(s, float(observed[i]))
        return (1.0 + hits) / (1.0 + n_perm)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return np.array(list(pool.map(one_unit, range(n))))
    return np.array([one_unit(i) for i in range(n)])


def local_moran_permutation(values, W: SpatialWeights, n_perm: int = 9999, seed=None, **kw):
    return permutation_pvalue(partial(local_moran_stat, variance="conditional"), values, W,
                              n_perm, seed, conditional=True, **kw)


# --------------------------------------------------------------------------- hotspot tally


def hotspot_frequency(results: Mapping[str, Sequence[LocalStatResult]]) -> list[tuple[str, int]]:
    """Number of sites in which each unit is a Hotspot, most frequent first.

    Ties are ordered by unit id. Every unit appears, including those with a
    count of zero.
    """
    universe = None
    counts = {}
    for site, res in results.items():
        units = sorted(r.unit_id for r in res)
        if universe is None:
            universe = units
            counts = {u: 0 for u in units}
        elif units != universe:
            raise ValidationError(f"site {site!r} covers a different set of units")
        for r in res:
            if r.label == SpatialClass.HOTSPOT:
                counts[r.unit_id] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def top_hotspots(tally: Sequence[tuple[str, int]], top_n: int = 10) -> list[tuple[str, int]]:
    return [(u, c) for u, c in tally if c > 0][:top_n]


# --------------------------------------------------------------------------- CSV output


def _num(v: float) -> str:
    return repr(float(v))


def write_local_csv(results: Sequence[LocalStatResult], path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "statistic", "z", "p", "class"])
        for r in results:
            w.writerow([r.unit_id, _num(r.statistic), _num(r.z), _num(r.p_two_sided), r.label.value])


def write_global_csv(results: Sequence[GlobalMoranResult], path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "I", "expected", "variance", "z", "p"])
        for r in results:
            w.writerow([r.site, _num(r.I), _num(r.expected_I), _num(r.variance_I), _num(r.z),
                        _num(r.p_two_sided)])


def write_tally_csv(tally: Sequence[tuple[str, int]], path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "hotspot_count"])
        for u, c in tally:
            w.writerow([u, c])


def read_local_csv(path: str | PathLike, site: str = "") -> list[LocalStatResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [LocalStatResult(r["unit_id"], site, float(r["statistic"]), float(r["z"]),
                                float(r["p"]), SpatialClass(r["class"]))
                for r in csv.DictReader(fh)]
