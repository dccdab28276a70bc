"""Stage functions shared by the ``run`` command and the per-stage subcommands.

Each stage reads its inputs from files in the output directory (or paths
given in the config) and writes its own outputs there, so running the
stages one after another produces the same files as ``run``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path

from . import cluster as cl
from . import ingest, report, spatial_stats as ss, standardize, weights as wt
from .config import RunConfig
from .errors import DanglingReferenceError, DependencyError, MortmapError

logger = logging.getLogger(__name__)

RECORDS_CSV = "records.csv"
EXCLUSIONS_JSON = "exclusion_report.json"
MATRIX_CSV = "rate_matrix.csv"
ZMATRIX_CSV = "rate_matrix_z.csv"
GAL = "weights.gal"
TRIPLES_CSV = "weights.csv"
STAR_TRIPLES_CSV = "weights_star.csv"
BUILTIN_US48 = "builtin:us48"


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DependencyError(f"required input {p} not found (run the upstream stage first)")
    return p


def load_geometry(spec: str | None):
    if not spec:
        return None
    if spec == BUILTIN_US48:
        return wt.load_us48()
    return wt.read_geojson(_require(spec))


def _map_jobs(cfg: RunConfig, fn, items):
    if cfg.jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --------------------------------------------------------------------------- stages


def stage_parse(cfg: RunConfig, bundle: report.ReportBundle):
    records, _ = ingest.read_records(_require(cfg.records))
    kept, excl = ingest.apply_inclusion_rules(records, cfg.min_deaths, cfg.excluded_units)
    manifest = ingest.DatasetManifest.from_records(kept, cfg.excluded_units)
    bundle.write(RECORDS_CSV, ingest.write_canonical_csv, kept)
    bundle.write(EXCLUSIONS_JSON, lambda rep, tmp: Path(tmp).write_text(rep.to_json()), excl)
    matrix = standardize.build_rate_matrix(kept, cfg.period, cfg.aggregation,
                                           manifest.units, manifest.sites)
    bundle.write(MATRIX_CSV, standardize.write_matrix_csv, matrix)
    return matrix


def stage_weights(cfg: RunConfig, bundle: report.ReportBundle, geometry=None):
    if cfg.gal:
        graph = wt.read_gal(_require(cfg.gal))
    else:
        geometry = geometry if geometry is not None else load_geometry(cfg.geometry)
        if geometry is None:
            raise DependencyError("weights need --geometry or --gal")
        graph = wt.queen_contiguity_from_polygons(geometry, cfg.snap_tolerance)
    matrix_path = Path(cfg.matrix) if cfg.matrix else bundle.out_dir / MATRIX_CSV
    if matrix_path.is_file():
        units = standardize.read_matrix_csv(matrix_path).unit_ids
        graph = _align(graph, units)
    bundle.write(GAL, wt.write_gal, graph)
    bundle.write(TRIPLES_CSV, wt.write_triples_csv, wt.row_standardize(graph))
    bundle.write(STAR_TRIPLES_CSV, wt.write_triples_csv, wt.row_standardize(graph, star=True))
    return graph


def _align(graph: wt.NeighborGraph, units) -> wt.NeighborGraph:
    missing = [u for u in units if u not in graph.unit_ids]
    if missing:
        raise DanglingReferenceError(f"no geometry/neighbor entry for unit(s): {', '.join(missing)}")
    return graph.subset(units)


def _load_matrix(cfg, bundle):
    return standardize.read_matrix_csv(_require(cfg.matrix or bundle.out_dir / MATRIX_CSV))


def _load_graph(cfg, bundle, units):
    # weights.gal from the weights stage; a user GAL is the fallback for standalone runs
    path = bundle.out_dir / GAL
    if not path.is_file() and cfg.gal:
        path = cfg.gal
    return _align(wt.read_gal(_require(path)), units)


def stage_cluster(cfg: RunConfig, bundle: report.ReportBundle, geometry=None):
    raw = _load_matrix(cfg, bundle)
    z = standardize.zscore_normalize(raw)
    bundle.write(ZMATRIX_CSV, standardize.write_matrix_csv, z)
    solution, dist, cov = cl.cluster_units(z, cfg.k_range, cfg.ridge_lambda, cfg.cond_max)
    if cov.ridge:
        logger.warning("covariance regularized with ridge %.3g", cov.ridge)
    bundle.write("cluster_merges.csv", cl.write_merges_csv, solution)
    bundle.write("cluster_silhouette.csv", cl.write_silhouette_csv, solution)
    bundle.write("cluster_assignments.csv", cl.write_assignments_csv, solution)
    bundle.write("cluster_profile.csv", report.write_profile_csv,
                 report.cluster_profile(z, solution.assignments))
    geometry = geometry if geometry is not None else load_geometry(cfg.geometry)
    if geometry is not None:
        bundle.write("clusters.geojson", report.write_geojson,
                     report.emit_choropleth(geometry, solution.assignments, "clusters"))
    return solution


def _per_site(cfg, bundle, fn, label):
    """Run ``fn(site, values)`` for every site; failures become gaps."""
    raw = _load_matrix(cfg, bundle)
    graph = _load_graph(cfg, bundle, raw.unit_ids)

    def one(site):
        try:
            return site, fn(site, raw.column(site), graph), None
        except MortmapError as exc:
            return site, None, exc

    results = {}
    for site, res, err in _map_jobs(cfg, one, list(raw.sites)):
        if err is not None:
            bundle.gap(f"{label}_{report.site_slug(site)}", label, err)
        else:
            results[site] = res
    return raw, graph, results


def stage_moran(cfg: RunConfig, bundle: report.ReportBundle):
    def fn(site, values, graph):
        W = wt.row_standardize(graph)
        res = ss.global_moran(values, W, site, cfg.moran_variance, cfg.islands)
        perm = None
        if cfg.n_perm:
            perm = ss.permutation_pvalue(ss.global_moran_stat, values, W, cfg.n_perm, cfg.seed)
        return res, perm

    raw, _, results = _per_site(cfg, bundle, fn, "moran")
    rows = [results[s][0] for s in raw.sites if s in results]
    bundle.write("moran_summary.csv", ss.write_global_csv, rows)
    if cfg.n_perm:
        perm_rows = [(s, results[s][0].p_two_sided, results[s][1]) for s in raw.sites if s in results]
        bundle.write("moran_permutation.csv", _write_perm_rows, ["site", "p_analytic", "p_perm"], perm_rows)
    return rows


def _write_perm_rows(header, rows, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0], *(repr(float(v)) for v in r[1:])])


def _local_stage(cfg, bundle, label, compute, stat_fn, star, geometry, conditional):
    def fn(site, values, graph):
        W = wt.row_standardize(graph, star=star)
        res = compute(values, W, site)
        perm = None
        if cfg.n_perm:
            perm = ss.permutation_pvalue(stat_fn, values, W, cfg.n_perm, cfg.seed, conditional=conditional)
        return res, perm

    raw, _, results = _per_site(cfg, bundle, fn, label)
    geometry = geometry if geometry is not None else load_geometry(cfg.geometry)
    for site in raw.sites:
        if site not in results:
            continue
        res, perm = results[site]
        slug = report.site_slug(site)
        bundle.write(f"{label}_{slug}.csv", ss.write_local_csv, res)
        if perm is not None:
            bundle.write(f"{label}_{slug}_permutation.csv", _write_perm_rows,
                         ["unit_id", "p_analytic", "p_perm"],
                         [(r.unit_id, r.p_two_sided, p) for r, p in zip(res, perm)])
        if geometry is not None:
            bundle.write(f"{label}_{slug}.geojson", report.write_geojson,
                         report.emit_choropleth(geometry, res, label, site))
    return {s: results[s][0] for s in raw.sites if s in results}


def stage_lisa(cfg: RunConfig, bundle: report.ReportBundle, geometry=None):
    compute = lambda v, W, site: ss.local_moran(v, W, cfg.alpha, site, cfg.lisa_variance, cfg.fdr, cfg.islands)
    stat_fn = partial(ss.local_moran_stat, variance=cfg.lisa_variance)
    return _local_stage(cfg, bundle, "lisa", compute, stat_fn, False, geometry,
                        conditional=cfg.lisa_variance == "conditional")


def stage_gistar(cfg: RunConfig, bundle: report.ReportBundle, geometry=None):
    compute = lambda v, W, site: ss.getis_ord_gistar(v, W, cfg.alpha, site, cfg.fdr, cfg.islands, cfg.gistar_ddof)
    stat_fn = partial(ss.gistar_stat, ddof=cfg.gistar_ddof)
    # Gi*'s null relabels every value, the unit's own included
    results = _local_stage(cfg, bundle, "gistar", compute, stat_fn, cfg.star_for_gistar, geometry,
                           conditional=False)
    tally = ss.hotspot_frequency(results) if results else []
    bundle.write("hotspot_tally.csv", ss.write_tally_csv, tally)
    bundle.write("hotspot_top.csv", ss.write_tally_csv, ss.top_hotspots(tally, cfg.top_n))
    return results, tally


def run_pipeline(cfg: RunConfig) -> report.ReportBundle:
    """Every stage in order, then the manifest. Stage failures are recorded as gaps."""
    bundle = report.ReportBundle(cfg.out_dir)
    geometry = load_geometry(cfg.geometry)
    stages = [
        ("parse", lambda: stage_parse(cfg, bundle)),
        ("weights", lambda: stage_weights(cfg, bundle, geometry)),
        ("cluster", lambda: stage_cluster(cfg, bundle, geometry)),
        ("moran", lambda: stage_moran(cfg, bundle)),
        ("lisa", lambda: stage_lisa(cfg, bundle, geometry)),
        ("gistar", lambda: stage_gistar(cfg, bundle, geometry)),
    ]
    for name, call in stages:
        try:
            call()
        except MortmapError as exc:
            bundle.gap(name, name, exc)
            if name in ("parse", "weights"):
                break  # everything downstream needs these
    inputs = [p for p in (cfg.records, cfg.matrix, cfg.gal, cfg.geometry) if p and p != BUILTIN_US48]
    bundle.write_manifest(cfg.to_dict(), inputs, cfg.seed)
    return bundle


def write_stage_manifest(cfg: RunConfig, bundle: report.ReportBundle, stage: str) -> None:
    """Per-stage record next to the outputs; never part of the stats files."""
    path = bundle.out_dir / f"manifest_{stage}.json"
    path.write_text(json.dumps({"stage": stage, "config": cfg.to_dict(), "gaps": bundle.gaps},
                               indent=2) + "\n")
