"""Queen contiguity graphs and row-standardized spatial weights."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from os import PathLike
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import DanglingReferenceError, FormatError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SNAP = 1e-6


class AsymmetryWarning(UserWarning):
    pass


class IslandWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NeighborGraph:
    """Symmetric, irreflexive adjacency over an ordered set of units."""

    unit_ids: tuple
    adjacency: tuple  # per-unit sorted tuples of neighbor indices
    source: str = "file"
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        n = len(self.unit_ids)
        if len(self.adjacency) != n:
            raise ValidationError("adjacency length does not match unit count")
        if len(set(self.unit_ids)) != n:
            raise ValidationError("duplicate unit ids in graph")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise ValidationError(f"unit {self.unit_ids[i]!r} lists itself as a neighbor")
            for j in nbrs:
                if i not in self.adjacency[j]:
                    raise ValidationError(
                        f"adjacency not symmetric between {self.unit_ids[i]!r} and {self.unit_ids[j]!r}")

    @classmethod
    def from_pairs(cls, unit_ids: Sequence[str], pairs: Iterable[tuple[str, str]], source="file",
                   warn=()):
        index = {u: i for i, u in enumerate(unit_ids)}
        nbrs = [set() for _ in unit_ids]
        for a, b in pairs:
            i, j = index[a], index[b]
            if i != j:
                nbrs[i].add(j)
                nbrs[j].add(i)
        return cls(tuple(unit_ids), tuple(tuple(sorted(s)) for s in nbrs), source, tuple(warn))

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    def neighbors(self, unit_id: str) -> list[str]:
        i = self.unit_ids.index(unit_id)
        return [self.unit_ids[j] for j in self.adjacency[i]]

    def cardinalities(self) -> dict:
        return {u: len(a) for u, a in zip(self.unit_ids, self.adjacency)}

    @property
    def islands(self) -> list[str]:
        return [u for u, a in zip(self.unit_ids, self.adjacency) if not a]

    def pairs(self) -> set:
        """Unordered neighbor pairs as frozensets of unit ids."""
        return {frozenset((self.unit_ids[i], self.unit_ids[j]))
                for i, a in enumerate(self.adjacency) for j in a}

    def subset(self, unit_ids: Sequence[str]) -> "NeighborGraph":
        """Restrict to ``unit_ids`` (in that order); links to dropped units vanish."""
        missing = [u for u in unit_ids if u not in self.unit_ids]
        if missing:
            raise DanglingReferenceError(f"units not in graph: {', '.join(missing)}")
        keep = set(unit_ids)
        pairs = [tuple(p) for p in self.pairs() if p <= keep]
        return NeighborGraph.from_pairs(unit_ids, pairs, self.source, self.warnings)


def _iter_features(geojson):
    if isinstance(geojson, dict):
        if geojson.get("type") == "FeatureCollection":
            return geojson.get("features", [])
        if geojson.get("type") == "Feature":
            return [geojson]
        raise FormatError("expected a GeoJSON FeatureCollection")
    return list(geojson)


def _rings(geometry):
    if geometry is None:
        return
    kind = geometry.get("type")
    coords = geometry.get("coordinates")
    if kind == "Polygon":
        yield from coords
    elif kind == "MultiPolygon":
        for poly in coords:
            yield from poly
    else:
        raise FormatError(f"unsupported geometry type {kind!r}")


def queen_contiguity_from_polygons(geojson_features, snap_tolerance: float = DEFAULT_SNAP,
                                   id_field: str = "unit_id") -> NeighborGraph:
    """Neighbors are units sharing at least one vertex after snapping to a grid.

    Every vertex of every ring (all parts of a MultiPolygon) is rounded to the
    nearest multiple of ``snap_tolerance``; two units touching along an edge
    or at a single corner share such a vertex.
    """
    if snap_tolerance <= 0:
        raise ValidationError("snap_tolerance must be positive")
    unit_ids = []
    index = {}
    vertex_owners = defaultdict(set)
    for k, feat in enumerate(_iter_features(geojson_features)):
        props = feat.get("properties") or {}
        uid = props.get(id_field)
        if uid is None or uid == "":
            raise FormatError(f"feature {k} has no {id_field!r} property")
        uid = str(uid)
        if uid not in index:
            index[uid] = len(unit_ids)
            unit_ids.append(uid)
        i = index[uid]
        for ring in _rings(feat.get("geometry")):
            pts = np.asarray(ring, dtype=float)[:, :2]
            snapped = np.rint(pts / snap_tolerance).astype(np.int64)
            for key in set(map(tuple, snapped)):
                vertex_owners[key].add(i)

    nbrs = [set() for _ in unit_ids]
    for owners in vertex_owners.values():
        if len(owners) > 1:
            for i in owners:
                nbrs[i] |= owners
    for i, s in enumerate(nbrs):
        s.discard(i)
    warn = []
    for i, s in enumerate(nbrs):
        if not s:
            msg = f"unit {unit_ids[i]!r} has no neighbors (island)"
            warn.append(msg)
            warnings.warn(msg, IslandWarning, stacklevel=2)
    return NeighborGraph(tuple(unit_ids), tuple(tuple(sorted(s)) for s in nbrs), "geometry", tuple(warn))


def read_geojson(path: str | PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    _iter_features(data)
    return data


def load_us48() -> dict:
    """Bundled 48 contiguous U.S. states (no D.C.), ``unit_id`` = postal code."""
    text = resources.files("mortmap").joinpath("data/us48_states.geojson").read_text()
    return json.loads(text)


def lattice_graph(rows: int, cols: int, queen: bool = True) -> NeighborGraph:
    """Regular grid graph; unit ids are ``"r{row}c{col}"`` zero-padded for sort order."""
    width = len(str(max(rows, cols) - 1))
    ids = [f"r{r:0{width}d}c{c:0{width}d}" for r in range(rows) for c in range(cols)]
    nbrs = []
    for r in range(rows):
        for c in range(cols):
            s = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if (dr, dc) == (0, 0) or (not queen and dr and dc):
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        s.append(rr * cols + cc)
            nbrs.append(tuple(sorted(s)))
    return NeighborGraph(tuple(ids), tuple(nbrs), "lattice")


def read_gal(path: str | PathLike) -> NeighborGraph:
    """Read a GAL neighbor file.

    The header is either ``n`` or the four-token ``0 n name key`` form. Each
    unit then takes two lines: ``unit_id k`` and its ``k`` neighbor ids.
    One-directional links are symmetrized with an :class:`AsymmetryWarning`.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            return None, None
        pos += 1
        return pos, lines[pos - 1].split()

    ln, header = next_line()
    if header is None:
        raise FormatError(f"{path}: empty GAL file")
    try:
        n = int(header[1] if len(header) == 4 else header[0])
    except (ValueError, IndexError):
        raise FormatError(f"{path}: line {ln}: bad GAL header") from None

    order, declared = [], {}
    for _ in range(n):
        ln, head = next_line()
        if head is None:
            raise FormatError(f"{path}: expected {n} units, file ended after {len(order)}")
        if len(head) != 2:
            raise FormatError(f"{path}: line {ln}: expected 'unit_id k'")
        uid, k = head[0], head[1]
        try:
            k = int(k)
        except ValueError:
            raise FormatError(f"{path}: line {ln}: neighbor count {k!r} is not an integer") from None
        if k == 0:
            # an empty neighbor line may or may not be present
            if pos < len(lines) and not lines[pos].strip():
                pos += 1
            ids = []
        else:
            ln2 = pos + 1
            if pos >= len(lines):
                raise FormatError(f"{path}: line {ln2}: missing neighbor list for {uid!r}")
            ids = lines[pos].split()
            pos += 1
            if len(ids) != k:
                raise FormatError(f"{path}: line {ln2}: {uid!r} declares {k} neighbors but lists {len(ids)}")
        if uid in declared:
            raise FormatError(f"{path}: line {ln}: unit {uid!r} appears twice")
        order.append(uid)
        declared[uid] = ids

    known = set(order)
    warn = []
    pairs = []
    for uid in order:
        for v in declared[uid]:
            if v not in known:
                raise DanglingReferenceError(f"{path}: {uid!r} lists unknown neighbor {v!r}")
            if uid not in declared[v]:
                msg = f"asymmetric link {uid}->{v} symmetrized"
                warn.append(msg)
                warnings.warn(msg, AsymmetryWarning, stacklevel=2)
            pairs.append((uid, v))
    return NeighborGraph.from_pairs(order, pairs, "file", warn)


def write_gal(graph: NeighborGraph, path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{graph.n}\n")
        for uid, nbrs in zip(graph.unit_ids, graph.adjacency):
            fh.write(f"{uid} {len(nbrs)}\n")
            fh.write(" ".join(graph.unit_ids[j] for j in nbrs) + "\n")


KINDS = ("binary", "row_standardized", "star_row_standardized")


@dataclass(frozen=True)
class SpatialWeights:
    unit_ids: tuple
    matrix: sparse.csr_matrix
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown weights kind {self.kind!r}")
        n = len(self.unit_ids)
        if self.matrix.shape != (n, n):
            raise ValidationError("weights matrix shape does not match units")
        if self.matrix.nnz and self.matrix.data.min() < 0:
            raise ValidationError("negative weights")

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def triples(self):
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(self.unit_ids[coo.row[k]], self.unit_ids[coo.col[k]], float(coo.data[k])) for k in order]

    @property
    def islands(self) -> list[str]:
        """Units with no link to any *other* unit."""
        m = self.matrix.tolil()
        out = []
        for i, (cols, vals) in enumerate(zip(m.rows, m.data)):
            if not any(c != i and v > 0 for c, v in zip(cols, vals)):
                out.append(self.unit_ids[i])
        return out

    def subset(self, unit_ids: Sequence[str]) -> "SpatialWeights":
        idx = [self.unit_ids.index(u) for u in unit_ids]
        return SpatialWeights(tuple(unit_ids), self.matrix[idx][:, idx].tocsr(), self.kind)


def binary_weights(graph: NeighborGraph) -> SpatialWeights:
    rows = [i for i, a in enumerate(graph.adjacency) for _ in a]
    cols = [j for a in graph.adjacency for j in a]
    m = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(graph.n, graph.n))
    return SpatialWeights(graph.unit_ids, m, "binary")


def row_standardize(graph: NeighborGraph, star: bool = False) -> SpatialWeights:
    """Row-standardized contiguity weights.

    ``star=False`` gives ``w_ij = 1/n_i`` for the ``n_i`` neighbors of ``i``.
    ``star=True`` adds ``i`` to its own neighbor set first, so every entry of
    row ``i`` (self included) is ``1/(n_i + 1)``. Islands keep an all-zero row
    in the non-star case and are logged.
    """
    rows, cols, vals = [], [], []
    for i, nbrs in enumerate(graph.adjacency):
        members = sorted((*nbrs, i)) if star else list(nbrs)
        if not members:
            logger.warning("island %r has an all-zero weights row", graph.unit_ids[i])
            continue
        w = 1.0 / len(members)
        rows += [i] * len(members)
        cols += members
        vals += [w] * len(members)
    m = sparse.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n))
    return SpatialWeights(graph.unit_ids, m, "star_row_standardized" if star else "row_standardized")


def write_triples_csv(weights: SpatialWeights, path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i_unit", "j_unit", "weight"])
        for a, b, v in weights.triples():
            w.writerow([a, b, repr(v)])


def read_triples_csv(path: str | PathLike, kind: str = "row_standardized",
                     unit_ids: Sequence[str] | None = None) -> SpatialWeights:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i_unit", "j_unit", "weight"]:
            raise FormatError(f"{path}: header must be i_unit,j_unit,weight")
        triples = [(a, b, float(v)) for a, b, v in reader]
    if unit_ids is None:
        seen = {}
        for a, b, _ in triples:
            seen.setdefault(a, None)
            seen.setdefault(b, None)
        unit_ids = list(seen)
    index = {u: i for i, u in enumerate(unit_ids)}
    try:
        rows = [index[a] for a, _, _ in triples]
        cols = [index[b] for _, b, _ in triples]
    except KeyError as exc:
        raise DanglingReferenceError(f"{path}: unknown unit {exc.args[0]!r}") from None
    m = sparse.csr_matrix(([v for *_, v in triples], (rows, cols)), shape=(len(unit_ids),) * 2)
    return SpatialWeights(tuple(unit_ids), m, kind)
