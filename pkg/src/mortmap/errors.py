"""Exception types raised across the package.

Every error derives from :class:`MortmapError` so the CLI can catch one type
and turn it into a machine-readable summary.
"""


class MortmapError(Exception):
    """Base class for all package errors."""

    #: short stage tag used by the CLI error summary
    stage = "general"


class FormatError(MortmapError, ValueError):
    """Input file does not follow the expected layout."""

    stage = "ingest"


class RowErrors(FormatError):
    """One or more data rows failed to parse; ``errors`` holds (line, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors)
        super().__init__(f"{len(self.errors)} malformed row(s): {lines}")


class EmptyDatasetError(FormatError):
    stage = "ingest"


class DuplicateKeyError(MortmapError, ValueError):
    stage = "ingest"

    def __init__(self, keys):
        self.keys = list(keys)
        listed = ", ".join(str(k) for k in self.keys)
        super().__init__(f"duplicate (unit_id, site, year) keys: {listed}")


class ValidationError(MortmapError, ValueError):
    pass


class CompletenessError(MortmapError, ValueError):
    stage = "standardize"

    def __init__(self, gaps):
        self.gaps = list(gaps)
        listed = ", ".join(f"({u}, {s})" for u, s in self.gaps)
        super().__init__(f"no data in period for {len(self.gaps)} (unit, site) cell(s): {listed}")


class DegenerateColumnError(MortmapError, ValueError):
    stage = "standardize"


class InsufficientDataError(MortmapError, ValueError):
    pass


class SingularityError(MortmapError, ArithmeticError):
    stage = "cluster"


class DanglingReferenceError(MortmapError, KeyError):
    stage = "weights"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class IslandError(MortmapError, ValueError):
    stage = "spatial_stats"


class ZeroVarianceError(MortmapError, ValueError):
    stage = "spatial_stats"


class DegenerateWeightsError(MortmapError, ValueError):
    stage = "spatial_stats"


class JoinError(MortmapError, KeyError):
    stage = "report"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(MortmapError, ValueError):
    stage = "config"


class DependencyError(MortmapError, FileNotFoundError):
    stage = "cli"
