"""Reading mortality exports into validated records and applying inclusion rules."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter, OrderedDict
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Iterable, Sequence, TextIO

from .errors import (
    DuplicateKeyError,
    EmptyDatasetError,
    FormatError,
    RowErrors,
    ValidationError,
)

logger = logging.getLogger(__name__)

CANONICAL_HEADER = (
    "unit_id",
    "unit_name",
    "site",
    "year",
    "deaths",
    "population",
    "age_adjusted_rate",
    "suppressed",
)

# Alaska, Hawaii, Puerto Rico and the other territories, by postal code and FIPS code.
DEFAULT_EXCLUDED_UNITS = (
    "AK", "HI", "PR", "GU", "VI", "AS", "MP",
    "02", "15", "72", "66", "78", "60", "69",
)

SUPPRESSION_TOKENS = ("Suppressed", "Unreliable", "Missing")

# lower-cased header text -> canonical field
DEFAULT_ALIASES = {
    "state": "unit_name",
    "states": "unit_name",
    "state name": "unit_name",
    "unit_name": "unit_name",
    "name": "unit_name",
    "state code": "unit_id",
    "states code": "unit_id",
    "state abbreviation": "unit_id",
    "unit_id": "unit_id",
    "cancer sites": "site",
    "leading cancer sites": "site",
    "cancer site": "site",
    "site": "site",
    "year": "year",
    "deaths": "deaths",
    "count": "deaths",
    "population": "population",
    "age-adjusted rate": "age_adjusted_rate",
    "age adjusted rate": "age_adjusted_rate",
    "age_adjusted_rate": "age_adjusted_rate",
    "notes": "notes",
}

_MANDATORY = ("unit_id", "site", "year", "deaths", "population", "age_adjusted_rate")


@dataclass(frozen=True)
class MortalityRecord:
    """One unit x cancer-site x year observation.

    Numeric fields are ``None`` exactly when ``suppressed`` is true.
    """

    unit_id: str
    unit_name: str
    site: str
    year: int
    deaths: int | None
    population: int | None
    age_adjusted_rate: float | None
    suppressed: bool = False

    def __post_init__(self):
        numeric = (self.deaths, self.population, self.age_adjusted_rate)
        if self.suppressed:
            if any(v is not None for v in numeric):
                raise ValidationError(f"suppressed record {self.key} carries numeric values")
            return
        if any(v is None for v in numeric):
            raise ValidationError(f"record {self.key} is missing values but not flagged suppressed")
        if self.deaths < 0:
            raise ValidationError(f"record {self.key}: negative deaths")
        if self.population <= 0:
            raise ValidationError(f"record {self.key}: population must be positive")
        if self.deaths > self.population:
            raise ValidationError(f"record {self.key}: deaths exceed population")
        if not (self.age_adjusted_rate >= 0 and math.isfinite(self.age_adjusted_rate)):
            raise ValidationError(f"record {self.key}: rate must be finite and non-negative")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.unit_id, self.site, self.year)


@dataclass(frozen=True)
class DatasetManifest:
    units: tuple[str, ...]
    sites: tuple[str, ...]
    years: tuple[int, int] | None
    record_count: int
    excluded_units: tuple[str, ...] = ()

    @classmethod
    def from_records(cls, records: Sequence[MortalityRecord], excluded_units=()) -> "DatasetManifest":
        units = tuple(sorted({r.unit_id for r in records}))
        sites = tuple(sorted({r.site for r in records}))
        years = (min(r.year for r in records), max(r.year for r in records)) if records else None
        return cls(units, sites, years, len(records), tuple(excluded_units))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units"] = list(self.units)
        d["sites"] = list(self.sites)
        d["years"] = list(self.years) if self.years else None
        d["excluded_units"] = list(self.excluded_units)
        return d


@dataclass
class ExclusionReport:
    """Counts of records dropped per inclusion rule."""

    input_count: int = 0
    kept_count: int = 0
    dropped: dict = field(default_factory=lambda: OrderedDict(
        excluded_unit=0, suppressed=0, zero_count=0, min_deaths=0))
    # (unit_id, site) pairs that had records but lost every year
    emptied_pairs: list = field(default_factory=list)
    min_deaths: int = 16
    excluded_units: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "dropped": dict(self.dropped),
            "emptied_pairs": [list(p) for p in self.emptied_pairs],
            "min_deaths": self.min_deaths,
            "excluded_units": list(self.excluded_units),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _is_suppressed(cell: str, tokens) -> bool:
    return any(tok.lower() in cell.lower() for tok in tokens)


def _clean(cell: str) -> str:
    return cell.strip().strip('"').strip()


def _is_footer(line: str) -> bool:
    s = _clean(line)
    return s == "Notes" or s.startswith("---")


def _parse_int(text: str) -> int:
    text = text.replace(",", "")
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def parse_wonder_export(text_stream: TextIO | str, aliases: dict | None = None,
                        suppression_tokens: Iterable[str] = SUPPRESSION_TOKENS):
    """Parse a tab-delimited CDC WONDER export.

    Parameters
    ----------
    text_stream : file-like or str
        Export text: header row, data rows, optional footer starting at a line
        equal to ``Notes`` or beginning with ``---``.
    aliases : dict, optional
        Extra header-name -> field mappings merged over :data:`DEFAULT_ALIASES`.
    suppression_tokens : iterable of str
        Cells containing any of these mark the whole row suppressed.

    Returns
    -------
    records : list of MortalityRecord
    manifest : DatasetManifest
    """
    if isinstance(text_stream, str):
        text_stream = io.StringIO(text_stream)
    table = dict(DEFAULT_ALIASES)
    if aliases:
        table.update({k.lower(): v for k, v in aliases.items()})
    tokens = tuple(suppression_tokens)

    columns = None
    errors = []
    records = []
    for lineno, line in enumerate(text_stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if columns is None:
            header = [_clean(c) for c in next(csv.reader([line], delimiter="\t"))]
            columns = {}
            for idx, name in enumerate(header):
                canon = table.get(name.lower())
                if canon is not None and canon not in columns:
                    columns[canon] = idx
            missing = [c for c in _MANDATORY if c not in columns]
            if missing:
                raise FormatError(f"missing mandatory column(s): {', '.join(missing)}")
            continue
        if _is_footer(line):
            break
        cells = [_clean(c) for c in next(csv.reader([line], delimiter="\t"))]
        if len(cells) <= max(columns.values()):
            errors.append((lineno, f"expected {max(columns.values()) + 1} cells, got {len(cells)}"))
            continue
        if "notes" in columns and cells[columns["notes"]]:
            continue  # subtotal rows ("Total") carry a note
        get = lambda name: cells[columns[name]]
        unit_id = get("unit_id")
        unit_name = get("unit_name") if "unit_name" in columns else unit_id
        site = get("site")
        try:
            year = _parse_int(get("year"))
            numeric = [get("deaths"), get("population"), get("age_adjusted_rate")]
            if any(_is_suppressed(c, tokens) for c in numeric):
                rec = MortalityRecord(unit_id, unit_name, site, year, None, None, None, True)
            else:
                rec = MortalityRecord(unit_id, unit_name, site, year,
                                      _parse_int(numeric[0]), _parse_int(numeric[1]),
                                      float(numeric[2].replace(",", "")), False)
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            continue
        records.append(rec)

    if columns is None:
        raise EmptyDatasetError("export has no header row")
    if errors:
        raise RowErrors(errors)
    if not records:
        raise EmptyDatasetError("export contains no data rows")
    _check_unique(records)
    return records, DatasetManifest.from_records(records)


def _check_unique(records: Sequence[MortalityRecord]) -> None:
    counts = Counter(r.key for r in records)
    dups = sorted(k for k, c in counts.items() if c > 1)
    if dups:
        raise DuplicateKeyError(dups)


def apply_inclusion_rules(records: Sequence[MortalityRecord], min_deaths: int = 16,
                          excluded_units: Iterable[str] = DEFAULT_EXCLUDED_UNITS):
    """Drop excluded units, suppressed rows and low-count rows.

    A record with zero deaths is tagged ``zero_count`` whenever ``min_deaths``
    is positive; with ``min_deaths=0`` only suppressed rows and excluded units
    are removed.
    """
    if min_deaths < 0:
        raise ValidationError("min_deaths must be >= 0")
    excluded = set(excluded_units)
    report = ExclusionReport(input_count=len(records), min_deaths=min_deaths,
                             excluded_units=sorted(excluded))
    kept = []
    seen_pairs = OrderedDict()
    for rec in records:
        pair = (rec.unit_id, rec.site)
        if rec.unit_id in excluded:
            report.dropped["excluded_unit"] += 1
            continue
        seen_pairs.setdefault(pair, False)
        if rec.suppressed:
            rule = "suppressed"
        elif rec.deaths == 0 and min_deaths > 0:
            rule = "zero_count"
        elif rec.deaths < min_deaths:
            rule = "min_deaths"
        else:
            kept.append(rec)
            seen_pairs[pair] = True
            continue
        report.dropped[rule] += 1
    report.kept_count = len(kept)
    report.emptied_pairs = sorted(p for p, ok in seen_pairs.items() if not ok)
    for unit, site in report.emptied_pairs:
        logger.warning("(%s, %s) lost every year to inclusion rules", unit, site)
    return kept, report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_canonical_csv(records: Sequence[MortalityRecord], path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CANONICAL_HEADER)
        for r in records:
            writer.writerow([r.unit_id, r.unit_name, r.site, r.year, _fmt(r.deaths),
                             _fmt(r.population), _fmt(r.age_adjusted_rate),
                             "true" if r.suppressed else "false"])


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_canonical_csv(path: str | PathLike):
    """Read the canonical CSV layout written by :func:`write_canonical_csv`."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CANONICAL_HEADER:
            raise FormatError(f"{path}: header must be {','.join(CANONICAL_HEADER)}")
        records, errors = [], []
        for row in reader:
            if not any(c.strip() for c in row):
                continue
            lineno = reader.line_num
            if len(row) != len(CANONICAL_HEADER):
                errors.append((lineno, f"expected {len(CANONICAL_HEADER)} cells, got {len(row)}"))
                continue
            unit_id, unit_name, site, year, deaths, pop, rate, supp = row
            try:
                suppressed = _parse_bool(supp)
                records.append(MortalityRecord(
                    unit_id, unit_name, site, int(year),
                    int(deaths) if deaths.strip() else None,
                    int(pop) if pop.strip() else None,
                    float(rate) if rate.strip() else None,
                    suppressed,
                ))
            except ValueError as exc:
                errors.append((lineno, str(exc)))
    if errors:
        raise RowErrors(errors)
    _check_unique(records)
    return records, DatasetManifest.from_records(records)


def read_records(path: str | PathLike):
    """Dispatch on content: canonical CSV if the header matches, otherwise WONDER text."""
    with open(path, encoding="utf-8-sig") as fh:
        first = fh.readline().strip()
    if first.replace(" ", "") == ",".join(CANONICAL_HEADER):
        return read_canonical_csv(path)
    with open(path, encoding="utf-8-sig") as fh:
        return parse_wonder_export(fh)


def summarize_rates(records: Sequence[MortalityRecord]) -> dict:
    """Min, max, mean and sample SD of the rate over non-suppressed records."""
    rates = [r.age_adjusted_rate for r in records if not r.suppressed]
    if not rates:
        raise EmptyDatasetError("no non-suppressed records to summarize")
    n = len(rates)
    mean = math.fsum(rates) / n
    sd = math.sqrt(math.fsum((x - mean) ** 2 for x in rates) / (n - 1)) if n > 1 else 0.0
    return {"n": n, "min": min(rates), "max": max(rates), "mean": mean, "sd": sd}
