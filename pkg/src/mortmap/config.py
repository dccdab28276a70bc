"""Run configuration: defaults, INI config files, CLI overrides and profiles."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from os import PathLike
from typing import Any

from .errors import ConfigError
from .ingest import DEFAULT_EXCLUDED_UNITS

PROFILES = ("paper", "permissive")

# values the paper-reproduction profile fixes
PAPER_PINS = {
    "min_deaths": 16,
    "alpha": 0.05,
    "star_for_gistar": True,
    "fdr": False,
    "islands": "error",
}


@dataclass
class RunConfig:
    records: str | None = None
    geometry: str | None = None
    gal: str | None = None
    matrix: str | None = None
    out_dir: str = "mortmap_out"
    period: tuple | None = None
    min_deaths: int = 16
    excluded_units: tuple = DEFAULT_EXCLUDED_UNITS
    aggregation: str = "mean"
    snap_tolerance: float = 1e-6
    ridge_lambda: float = 1e-8
    cond_max: float = 1e12
    k_min: int = 2
    k_max: int = 10
    alpha: float = 0.05
    star_for_gistar: bool = True
    fdr: bool = False
    moran_variance: str = "randomization"
    lisa_variance: str = "conditional"
    gistar_ddof: int = 0
    islands: str = "error"
    n_perm: int = 0
    seed: int = 0
    top_n: int = 10
    jobs: int = 1
    profile: str = "paper"

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["period"] = list(self.period) if self.period else None
        d["excluded_units"] = list(self.excluded_units)
        return d

    def validate(self) -> "RunConfig":
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, not {self.profile!r}")
        if self.min_deaths < 0:
            raise ConfigError(f"min_deaths must be >= 0 (got {self.min_deaths})")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1) (got {self.alpha})")
        if self.snap_tolerance <= 0:
            raise ConfigError("snap_tolerance must be positive")
        if self.ridge_lambda < 0 or self.cond_max <= 1:
            raise ConfigError("ridge_lambda must be >= 0 and cond_max > 1")
        if self.k_min < 2 or self.k_max < self.k_min:
            raise ConfigError(f"k range {self.k_min}..{self.k_max} is invalid (need 2 <= k_min <= k_max)")
        if self.n_perm and self.n_perm < 99:
            raise ConfigError("n_perm must be 0 (off) or at least 99")
        if self.gistar_ddof not in (0, 1):
            raise ConfigError("gistar_ddof must be 0 or 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.top_n < 1:
            raise ConfigError("top_n must be >= 1")
        if self.period is not None and (len(self.period) != 2 or self.period[0] > self.period[1]):
            raise ConfigError(f"period must be first_year-last_year (got {self.period})")
        for name, allowed in (("aggregation", ("mean", "population_weighted")),
                              ("moran_variance", ("randomization", "normality")),
                              ("lisa_variance", ("conditional", "total")),
                              ("islands", ("error", "drop"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}")
        return self


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: Any) -> Any:
    if name not in _TYPES:
        raise ConfigError(f"unknown configuration key {name!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    kind = _TYPES[name]
    try:
        if name == "period":
            if not text or text.lower() == "none":
                return None
            lo, hi = text.replace(":", "-").split("-")
            return (int(lo), int(hi))
        if name == "excluded_units":
            return tuple(u.strip() for u in text.replace(";", ",").split(",") if u.strip())
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("str | None"):
            return text or None
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None


def read_config_file(path: str | PathLike) -> dict:
    """Flatten every section of an INI file into one ``{key: raw string}`` dict."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key.replace("-", "_")] = value
    return out


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then CLI overrides.

    Under the ``paper`` profile any attempt to set a pinned value to
    something else is rejected.
    """
    file_values = {k: v for k, v in (file_values or {}).items()}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged = {}
    for source in (file_values, overrides):
        for k, v in source.items():
            merged[k] = _coerce(k, v)
    profile = merged.get("profile", RunConfig.profile)
    if profile == "paper":
        for key, pinned in PAPER_PINS.items():
            if key in merged and merged[key] != pinned:
                raise ConfigError(
                    f"profile 'paper' fixes {key}={pinned!r}; got {merged[key]!r}. "
                    "Use --profile permissive to change it.")
    elif profile == "permissive":
        merged.setdefault("islands", "drop")
    return RunConfig(**merged).validate()
