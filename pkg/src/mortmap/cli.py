"""Command-line entry point: ``mortmap <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__, pipeline, report
from .config import read_config_file, resolve_config
from .errors import ConfigError, MortmapError

logger = logging.getLogger("mortmap")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="INI file; every key may appear in any section")
    g.add_argument("--profile", choices=("paper", "permissive"))
    g.add_argument("--out", dest="out_dir", help="output/work directory")
    g.add_argument("--records", help="WONDER export (.txt) or canonical CSV")
    g.add_argument("--geometry", help="GeoJSON FeatureCollection, or builtin:us48")
    g.add_argument("--gal", help="GAL neighbor file (used instead of --geometry)")
    g.add_argument("--matrix", help="unit x site values CSV to analyze instead of the parsed rate matrix")
    g.add_argument("--period", help="first_year-last_year")
    g.add_argument("--min-deaths", dest="min_deaths", type=int)
    g.add_argument("--exclude", dest="excluded_units", help="comma-separated unit ids")
    g.add_argument("--aggregation", choices=("mean", "population_weighted"))
    g.add_argument("--snap-tolerance", dest="snap_tolerance", type=float)
    g.add_argument("--ridge", dest="ridge_lambda", type=float)
    g.add_argument("--cond-max", dest="cond_max", type=float)
    g.add_argument("--k-min", dest="k_min", type=int)
    g.add_argument("--k-max", dest="k_max", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--no-star", dest="star_for_gistar", action="store_const", const=False)
    g.add_argument("--fdr", action="store_const", const=True)
    g.add_argument("--moran-variance", dest="moran_variance", choices=("randomization", "normality"))
    g.add_argument("--lisa-variance", dest="lisa_variance", choices=("conditional", "total"))
    g.add_argument("--gistar-ddof", dest="gistar_ddof", type=int, choices=(0, 1))
    g.add_argument("--islands", choices=("error", "drop"))
    g.add_argument("--n-perm", dest="n_perm", type=int, help="permutation oracle draws (0 = off)")
    g.add_argument("--seed", type=int)
    g.add_argument("--top-n", dest="top_n", type=int)
    g.add_argument("--jobs", type=int)
    g.add_argument("-v", "--verbose", action="count", default=0)


_OPTION_KEYS = (
    "profile", "out_dir", "records", "geometry", "gal", "matrix", "period", "min_deaths", "excluded_units",
    "aggregation", "snap_tolerance", "ridge_lambda", "cond_max", "k_min", "k_max", "alpha",
    "star_for_gistar", "fdr", "moran_variance", "lisa_variance", "gistar_ddof", "islands", "n_perm", "seed",
    "top_n", "jobs",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mortmap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mortmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "parse": "read records, apply inclusion rules, write the rate matrix",
        "weights": "build queen contiguity; write GAL and weight triples",
        "cluster": "Mahalanobis/Ward clustering with silhouette choice of k",
        "moran": "global Moran's I for every site",
        "lisa": "local Moran's I cluster classes for every site",
        "gistar": "Getis-Ord Gi* hot/cold spots and the hotspot tally",
        "run": "all stages plus manifest.json",
    }
    for name, text in helps.items():
        _add_common(sub.add_parser(name, help=text, description=text))
    return parser


def _error_summary(exc: BaseException, stage: str) -> str:
    return json.dumps({"status": "error", "stage": getattr(exc, "stage", stage), "command": stage,
                       "error": type(exc).__name__, "message": str(exc)})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        overrides = {k: getattr(args, k) for k in _OPTION_KEYS}
        cfg = resolve_config(file_values, overrides)
    except ConfigError as exc:
        print(_error_summary(exc, args.command), file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            bundle = pipeline.run_pipeline(cfg)
        else:
            bundle = report.ReportBundle(cfg.out_dir)
            stage = getattr(pipeline, f"stage_{args.command}")
            stage(cfg, bundle)
            pipeline.write_stage_manifest(cfg, bundle, args.command)
    except MortmapError as exc:
        print(_error_summary(exc, args.command), file=sys.stderr)
        return EXIT_RUNTIME
    if bundle.gaps:
        print(json.dumps({"status": "partial", "command": args.command, "gaps": bundle.gaps}),
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
