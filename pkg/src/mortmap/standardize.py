"""Direct age standardization and the unit x site rate matrix."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from os import PathLike
from typing import Sequence

import numpy as np

from .errors import (
    CompletenessError,
    DegenerateColumnError,
    FormatError,
    ValidationError,
)

PER = 100_000


@dataclass(frozen=True)
class AgeStratum:
    age_group: str
    deaths: int
    population: int
    weight: float


def age_adjusted_rate(strata: Sequence[AgeStratum], tol: float = 1e-9) -> float:
    """Directly standardized rate per 100,000.

    Sum over strata of the crude stratum rate times the stratum's share of
    the standard population.
    """
    if not strata:
        raise ValidationError("at least one age stratum is required")
    total_weight = math.fsum(s.weight for s in strata)
    if abs(total_weight - 1.0) > tol:
        raise ValidationError(f"standard weights sum to {total_weight!r}, not 1")
    terms = []
    for s in strata:
        if s.population <= 0:
            raise ZeroDivisionError(f"age group {s.age_group!r} has non-positive population")
        if s.deaths < 0:
            raise ValidationError(f"age group {s.age_group!r} has negative deaths")
        if not 0.0 <= s.weight <= 1.0:
            raise ValidationError(f"age group {s.age_group!r} weight outside [0, 1]")
        terms.append(s.deaths / s.population * s.weight)
    return math.fsum(terms) * PER


def load_standard_population(path: str | PathLike | None = None) -> list[tuple[str, float]]:
    """Read an ``age_group,weight`` table; defaults to the bundled 2000 U.S. standard.

    Lines starting with ``#`` are comments.
    """
    if path is None:
        text = resources.files("mortmap").joinpath("data/us_std_2000.csv").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(rows)
    header = [h.strip() for h in next(reader)]
    if header != ["age_group", "weight"]:
        raise FormatError("standard population header must be age_group,weight")
    table = [(g.strip(), float(w)) for g, w in reader]
    total = math.fsum(w for _, w in table)
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"standard population weights sum to {total!r}")
    return table


def strata_from_counts(deaths: dict, populations: dict, standard=None) -> list[AgeStratum]:
    """Pair per-age-group counts with standard weights (groups matched by label)."""
    standard = load_standard_population() if standard is None else standard
    missing = [g for g, _ in standard if g not in deaths or g not in populations]
    if missing:
        raise ValidationError(f"counts missing for age group(s): {', '.join(missing)}")
    return [AgeStratum(g, deaths[g], populations[g], w) for g, w in standard]


@dataclass(frozen=True)
class RateMatrix:
    """Units (rows) by sites (columns) of period-averaged rates."""

    unit_ids: tuple
    sites: tuple
    values: np.ndarray
    standardized: bool = False
    column_means: np.ndarray | None = None
    column_sds: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.unit_ids), len(self.sites)):
            raise ValidationError(
                f"values shape {vals.shape} does not match {len(self.unit_ids)} units x {len(self.sites)} sites")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("rate matrix contains missing or non-finite cells")
        if len(set(self.unit_ids)) != len(self.unit_ids) or len(set(self.sites)) != len(self.sites):
            raise ValidationError("duplicate unit or site labels")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        object.__setattr__(self, "sites", tuple(self.sites))

    @property
    def shape(self):
        return self.values.shape

    def column(self, site: str) -> np.ndarray:
        return self.values[:, self.sites.index(site)]

    def select_units(self, unit_ids: Sequence[str]) -> "RateMatrix":
        idx = [self.unit_ids.index(u) for u in unit_ids]
        return RateMatrix(tuple(unit_ids), self.sites, self.values[idx], self.standardized,
                          self.column_means, self.column_sds)


def build_rate_matrix(records, period: tuple[int, int] | None = None, aggregation: str = "mean",
                      units: Sequence[str] | None = None, sites: Sequence[str] | None = None) -> RateMatrix:
    """Collapse annual records to one cell per (unit, site).

    Parameters
    ----------
    records : sequence of MortalityRecord
        Already filtered; suppressed records are ignored.
    period : (first_year, last_year), optional
        Inclusive. Defaults to the full span of the records.
    aggregation : {"mean", "population_weighted"}
        ``mean`` is the unweighted average of annual rates.
    units, sites : sequence of str, optional
        Row/column order. Default: sorted labels present in ``records``.
    """
    if aggregation not in ("mean", "population_weighted"):
        raise ValidationError(f"unknown aggregation {aggregation!r}")
    usable = [r for r in records if not r.suppressed]
    if period is None:
        if not usable:
            raise ValidationError("no usable records")
        period = (min(r.year for r in usable), max(r.year for r in usable))
    lo, hi = period
    if lo > hi:
        raise ValidationError(f"empty period {period}")
    units = tuple(units) if units is not None else tuple(sorted({r.unit_id for r in usable}))
    sites = tuple(sites) if sites is not None else tuple(sorted({r.site for r in usable}))
    cells = defaultdict(list)
    for r in usable:
        if lo <= r.year <= hi:
            cells[(r.unit_id, r.site)].append(r)

    gaps = [(u, s) for u in units for s in sites if not cells.get((u, s))]
    if gaps:
        raise CompletenessError(gaps)
    values = np.empty((len(units), len(sites)))
    for i, u in enumerate(units):
        for j, s in enumerate(sites):
            recs = cells[(u, s)]
            if aggregation == "mean":
                values[i, j] = math.fsum(r.age_adjusted_rate for r in recs) / len(recs)
            else:
                pop = sum(r.population for r in recs)
                values[i, j] = math.fsum(r.age_adjusted_rate * r.population for r in recs) / pop
    return RateMatrix(units, sites, values)


def zscore_normalize(matrix: RateMatrix) -> RateMatrix:
    """Column-wise (x - mean) / sd with the n-1 sample SD."""
    vals = matrix.values
    if vals.shape[0] < 2:
        raise ValidationError("z-scores need at least two units")
    means = vals.mean(axis=0)
    centered = vals - means
    sds = np.sqrt((centered ** 2).sum(axis=0) / (vals.shape[0] - 1))
    scale = np.maximum(np.abs(means), 1.0)
    for j, site in enumerate(matrix.sites):
        if sds[j] <= 1e-12 * scale[j]:
            raise DegenerateColumnError(f"site {site!r} has zero variance across units")
    z = centered / sds
    return RateMatrix(matrix.unit_ids, matrix.sites, z, True, means, sds)


def write_matrix_csv(matrix: RateMatrix, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", *matrix.sites])
        for u, row in zip(matrix.unit_ids, matrix.values):
            w.writerow([u, *(repr(float(v)) for v in row)])


def read_matrix_csv(path: str | PathLike, standardized: bool = False) -> RateMatrix:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty matrix file") from None
        if not header or header[0].strip() != "unit_id" or len(header) < 2:
            raise FormatError(f"{path}: first header cell must be unit_id followed by site columns")
        units, rows = [], []
        for row in reader:
            if not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: line {reader.line_num} has {len(row)} cells, expected {len(header)}")
            units.append(row[0].strip())
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: line {reader.line_num}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return RateMatrix(tuple(units), tuple(h.strip() for h in header[1:]), np.array(rows), standardized)
