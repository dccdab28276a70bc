"""Choropleth-ready GeoJSON layers, cluster profiles and the output bundle."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .errors import JoinError, ValidationError
from .spatial_stats import LocalStatResult

logger = logging.getLogger(__name__)

LAYER_KINDS = ("clusters", "rates", "lisa", "gistar")


def site_slug(site: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "_", site.lower()).strip("_")
    return slug or "site"


def _display(v):
    """Six significant digits for map properties."""
    if isinstance(v, (bool, np.bool_)) or v is None:
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            return None
        return float(f"{float(v):.6g}")
    return v


def _layer_properties(results, layer_kind: str) -> dict:
    if layer_kind == "clusters":
        return {u: {"cluster": int(c)} for u, c in dict(results).items()}
    if layer_kind == "rates":
        return {u: {"rate": _display(v)} for u, v in dict(results).items()}
    if layer_kind in ("lisa", "gistar"):
        out = {}
        for r in results:
            if not isinstance(r, LocalStatResult):
                raise ValidationError(f"{layer_kind} layers take LocalStatResult records")
            out[r.unit_id] = {"statistic": _display(r.statistic), "z": _display(r.z),
                              "p": _display(r.p_two_sided), "class": r.label.value}
        return out
    raise ValidationError(f"unknown layer kind {layer_kind!r}; expected one of {LAYER_KINDS}")


def emit_choropleth(geometry, results, layer_kind: str, site: str | None = None) -> dict:
    """Join per-unit results onto polygon features.

    Parameters
    ----------
    geometry : dict
        GeoJSON FeatureCollection whose features carry ``properties.unit_id``.
    results : mapping or sequence
        ``{unit_id: cluster}`` for ``clusters``, ``{unit_id: rate}`` for
        ``rates``, or a list of :class:`LocalStatResult` for ``lisa``/``gistar``.
    layer_kind : {"clusters", "rates", "lisa", "gistar"}
    site : str, optional

    Returns
    -------
    dict
        FeatureCollection; geometries are passed through unchanged. Features
        with no matching result keep null-valued properties and are listed
        under the ``unmatched_units`` member.
    """
    props = _layer_properties(results, layer_kind)
    features = geometry.get("features", []) if isinstance(geometry, dict) else list(geometry)
    geo_ids = [str((f.get("properties") or {}).get("unit_id")) for f in features]
    missing = sorted(set(props) - set(geo_ids))
    if missing:
        raise JoinError(f"analysis unit(s) missing from geometry: {', '.join(missing)}")
    keys = list(next(iter(props.values())).keys()) if props else []
    out, unmatched = [], []
    for f, uid in zip(features, geo_ids):
        bag = {"unit_id": uid}
        if uid in props:
            bag.update(props[uid])
        else:
            bag.update({k: None for k in keys})
            unmatched.append(uid)
        if "unit_name" in (f.get("properties") or {}):
            bag["unit_name"] = f["properties"]["unit_name"]
        out.append({"type": "Feature", "properties": bag, "geometry": f.get("geometry")})
    if unmatched:
        logger.info("%d geometry feature(s) without results: %s", len(unmatched), ", ".join(unmatched))
    layer = {"type": "FeatureCollection", "layer_kind": layer_kind}
    if site is not None:
        layer["site"] = site
    layer["unmatched_units"] = unmatched
    layer["features"] = out
    return layer


def read_choropleth(path_or_layer) -> dict:
    """``{unit_id: properties}`` from an emitted layer (unmatched features skipped)."""
    layer = path_or_layer
    if not isinstance(layer, dict):
        with open(path_or_layer, encoding="utf-8") as fh:
            layer = json.load(fh)
    skip = set(layer.get("unmatched_units", []))
    return {f["properties"]["unit_id"]: {k: v for k, v in f["properties"].items() if k not in ("unit_id", "unit_name")}
            for f in layer["features"] if f["properties"]["unit_id"] not in skip}


@dataclass(frozen=True)
class ClusterProfileTable:
    clusters: tuple
    sites: tuple
    values: np.ndarray
    sizes: tuple = ()


def cluster_profile(matrix, assignments: Mapping[str, int]) -> ClusterProfileTable:
    """Mean standardized value of each site within each cluster."""
    unknown = sorted(set(assignments) - set(matrix.unit_ids))
    if unknown:
        raise ValidationError(f"assignments name unknown unit(s): {', '.join(unknown)}")
    uncovered = [u for u in matrix.unit_ids if u not in assignments]
    if uncovered:
        raise ValidationError(f"assignments do not cover unit(s): {', '.join(uncovered)}")
    labels = np.array([assignments[u] for u in matrix.unit_ids])
    clusters = tuple(sorted(set(labels.tolist())))
    vals = np.array([matrix.values[labels == c].mean(axis=0) for c in clusters])
    sizes = tuple(int((labels == c).sum()) for c in clusters)
    return ClusterProfileTable(clusters, tuple(matrix.sites), vals, sizes)


def write_profile_csv(table: ClusterProfileTable, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", *table.sites])
        for c, row in zip(table.clusters, table.values):
            w.writerow([c, *(repr(float(v)) for v in row)])


def write_geojson(layer: dict, path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layer, fh, separators=(",", ":"))
        fh.write("\n")


def atomic_write(path: str | PathLike, writer: Callable, *args) -> Path:
    """Run ``writer(obj..., tmp_path)`` then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        writer(*args, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path: str | PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class ReportBundle:
    """Tracks files written into one output directory plus any missing layers."""

    out_dir: Path
    outputs: list = field(default_factory=list)
    gaps: list = field(default_factory=list)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, writer: Callable, *args) -> Path:
        path = atomic_write(self.out_dir / name, writer, *args)
        if name not in self.outputs:
            self.outputs.append(name)
        return path

    def gap(self, layer: str, stage: str, error: BaseException | str) -> None:
        logger.error("%s (%s): %s", layer, stage, error)
        self.gaps.append({"layer": layer, "stage": stage, "error": str(error)})

    def write_manifest(self, config: dict, inputs: Sequence[str | PathLike] = (), seed=None,
                       extra: dict | None = None) -> Path:
        manifest = {
            "tool": "mortmap",
            "version": __version__,
            "seed": seed,
            "config": config,
            "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).is_file()},
            "outputs": sorted(self.outputs),
            "gaps": self.gaps,
        }
        if extra:
            manifest.update(extra)

        def dump(obj, tmp):
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(obj, fh, indent=2, sort_keys=False, default=str)
                fh.write("\n")

        return atomic_write(self.out_dir / "manifest.json", dump, manifest)
