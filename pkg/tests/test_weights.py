import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mortmap import weights as wt
from mortmap.errors import DanglingReferenceError, FormatError
from mortmap.weights import AsymmetryWarning, IslandWarning, NeighborGraph

from conftest import collection, square

# Published contiguity of the 48 contiguous states (queen: Four Corners
# diagonals included; water-only boundaries such as MI-MN and NY-RI excluded).
US48 = {
    "AL": "FL GA MS TN", "AZ": "CA CO NM NV UT", "AR": "LA MO MS OK TN TX", "CA": "AZ NV OR",
    "CO": "AZ KS NE NM OK UT WY", "CT": "MA NY RI", "DE": "MD NJ PA", "FL": "AL GA",
    "GA": "AL FL NC SC TN", "ID": "MT NV OR UT WA WY", "IL": "IA IN KY MO WI", "IN": "IL KY MI OH",
    "IA": "IL MN MO NE SD WI", "KS": "CO MO NE OK", "KY": "IL IN MO OH TN VA WV", "LA": "AR MS TX",
    "ME": "NH", "MD": "DE PA VA WV", "MA": "CT NH NY RI VT", "MI": "IN OH WI", "MN": "IA ND SD WI",
    "MS": "AL AR LA TN", "MO": "AR IA IL KS KY NE OK TN", "MT": "ID ND SD WY",
    "NE": "CO IA KS MO SD WY", "NV": "AZ CA ID OR UT", "NH": "MA ME VT", "NJ": "DE NY PA",
    "NM": "AZ CO OK TX UT", "NY": "CT MA NJ PA VT", "NC": "GA SC TN VA", "ND": "MN MT SD",
    "OH": "IN KY MI PA WV", "OK": "AR CO KS MO NM TX", "OR": "CA ID NV WA", "PA": "DE MD NJ NY OH WV",
    "RI": "CT MA", "SC": "GA NC", "SD": "IA MN MT ND NE WY", "TN": "AL AR GA KY MO MS NC VA",
    "TX": "AR LA NM OK", "UT": "AZ CO ID NM NV WY", "VT": "MA NH NY", "VA": "KY MD NC TN WV",
    "WA": "ID OR", "WV": "KY MD OH PA VA", "WI": "IA IL MI MN", "WY": "CO ID MT NE SD UT",
}


def grid(rows, cols, size=1.0, origin=(0.0, 0.0)):
    feats = []
    for r in range(rows):
        for c in range(cols):
            feats.append(square(origin[0] + c * size, origin[1] + r * size, size,
                                {"unit_id": f"{r}{c}"}))
    return collection(feats)


# ---------------------------------------------------------------- queen contiguity


def test_edge_sharing_squares_are_neighbors():
    g = wt.queen_contiguity_from_polygons(grid(1, 2))
    assert g.pairs() == {frozenset(("00", "01"))}


def test_corner_touching_squares_are_neighbors():
    geo = collection([square(0, 0, props={"unit_id": "a"}), square(1, 1, props={"unit_id": "b"})])
    assert wt.queen_contiguity_from_polygons(geo).neighbors("a") == ["b"]


def test_disjoint_squares_are_not_neighbors():
    geo = collection([square(0, 0, props={"unit_id": "a"}), square(1.5, 0, props={"unit_id": "b"}),
                      square(2.5, 0, props={"unit_id": "c"})])
    with pytest.warns(IslandWarning, match="'a'"):
        g = wt.queen_contiguity_from_polygons(geo)
    assert g.islands == ["a"]
    assert g.pairs() == {frozenset(("b", "c"))}


def test_three_by_three_grid():
    g = wt.queen_contiguity_from_polygons(grid(3, 3))
    card = g.cardinalities()
    assert card["11"] == 8
    assert card["00"] == card["02"] == card["20"] == card["22"] == 3
    assert card["01"] == 5


def test_lattice_helper_matches_geometry():
    geo = wt.queen_contiguity_from_polygons(grid(4, 5))
    lat = wt.lattice_graph(4, 5)
    rename = {f"r{r}c{c}": f"{r}{c}" for r in range(4) for c in range(5)}
    assert {frozenset(rename[u] for u in p) for p in lat.pairs()} == geo.pairs()
    rook = wt.lattice_graph(4, 5, queen=False)
    assert rook.cardinalities()["r1c1"] == 4


def test_multipolygon_parts_all_count():
    mp = {"type": "Feature", "properties": {"unit_id": "m"},
          "geometry": {"type": "MultiPolygon", "coordinates": [
              square(0, 0)["geometry"]["coordinates"], square(5, 0)["geometry"]["coordinates"]]}}
    geo = collection([mp, square(1, 0, props={"unit_id": "left"}),
                      square(6, 0, props={"unit_id": "right"})])
    g = wt.queen_contiguity_from_polygons(geo)
    assert g.neighbors("m") == ["left", "right"]


def test_missing_unit_id_rejected():
    with pytest.raises(FormatError, match="unit_id"):
        wt.queen_contiguity_from_polygons(collection([square(0, 0)]))


def test_snapping_closes_sliver_gaps():
    a = square(0, 0, props={"unit_id": "a"})
    b = square(1 + 2e-7, 0, props={"unit_id": "b"})
    assert wt.queen_contiguity_from_polygons(collection([a, b])).pairs() == {frozenset("ab")}


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_graph_invariant_under_dilation_and_translation(scale, dx, dy):
    # grid coordinates stay on the snap lattice so the test isolates the topology
    scale = round(scale, 3) or 1.0
    dx, dy = round(dx, 3), round(dy, 3)
    base = wt.queen_contiguity_from_polygons(grid(3, 4))
    moved = wt.queen_contiguity_from_polygons(grid(3, 4, size=scale, origin=(dx, dy)))
    assert moved.pairs() == base.pairs()


def test_us48_matches_published_adjacency():
    g = wt.queen_contiguity_from_polygons(wt.load_us48())
    assert sorted(g.unit_ids) == sorted(US48)
    expected = {frozenset((a, b)) for a, nbrs in US48.items() for b in nbrs.split()}
    assert g.pairs() == expected
    card = g.cardinalities()
    assert card["TN"] == 8 and card["MO"] == 8 and card["ME"] == 1
    assert "CO" in g.neighbors("AZ") and "UT" in g.neighbors("NM")


# ---------------------------------------------------------------- GAL


def test_gal_decode(tmp_path):
    path = tmp_path / "w.gal"
    path.write_text("3\nA 1\nB\nB 2\nA C\nC 1\nB\n")
    g = wt.read_gal(path)
    assert g.unit_ids == ("A", "B", "C")
    assert g.neighbors("B") == ["A", "C"]


def test_gal_pysal_header_and_islands(tmp_path):
    path = tmp_path / "w.gal"
    path.write_text("0 3 shape KEY\nA 1\nB\nB 1\nA\nC 0\n\n")
    g = wt.read_gal(path)
    assert g.islands == ["C"]


def test_gal_asymmetry_symmetrized(tmp_path):
    path = tmp_path / "w.gal"
    path.write_text("2\nA 1\nB\nB 0\n")
    with pytest.warns(AsymmetryWarning):
        g = wt.read_gal(path)
    assert g.neighbors("B") == ["A"]
    assert g.warnings


def test_gal_count_mismatch_reports_line(tmp_path):
    path = tmp_path / "w.gal"
    path.write_text("2\nA 2\nB\nB 1\nA\n")
    with pytest.raises(FormatError, match="line 3"):
        wt.read_gal(path)


def test_gal_dangling_reference(tmp_path):
    path = tmp_path / "w.gal"
    path.write_text("2\nA 1\nZ\nB 0\n")
    with pytest.raises(DanglingReferenceError, match="Z"):
        wt.read_gal(path)


def test_gal_round_trip_us48(tmp_path):
    g = wt.queen_contiguity_from_polygons(wt.load_us48())
    path = tmp_path / "us.gal"
    wt.write_gal(g, path)
    back = wt.read_gal(path)
    assert back.unit_ids == g.unit_ids and back.adjacency == g.adjacency


graphs = st.integers(1, 9).flatmap(lambda n: st.tuples(
    st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)))))


@settings(max_examples=60, deadline=None)
@given(graphs)
def test_gal_round_trip_property(tmp_path_factory, spec):
    n, edges = spec
    ids = [f"u{i}" for i in range(n)]
    g = NeighborGraph.from_pairs(ids, [(ids[a], ids[b]) for a, b in edges])
    path = tmp_path_factory.mktemp("gal") / "g.gal"
    wt.write_gal(g, path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = wt.read_gal(path)
    assert back.unit_ids == g.unit_ids and back.adjacency == g.adjacency


# ---------------------------------------------------------------- weights


def test_row_standardized_values():
    g = wt.lattice_graph(3, 3, queen=False)
    W = wt.row_standardize(g).dense()
    center = g.unit_ids.index("r1c1")
    assert np.allclose(W[center][W[center] > 0], 0.25)
    S = wt.row_standardize(g, star=True).dense()
    assert np.allclose(S[center][S[center] > 0], 0.2)
    assert S[center, center] == 0.2


def test_island_row_is_zero():
    g = NeighborGraph.from_pairs(["a", "b", "c"], [("a", "b")])
    W = wt.row_standardize(g)
    assert W.islands == ["c"]
    assert W.dense()[2].sum() == 0.0
    assert wt.row_standardize(g, star=True).islands == ["c"]


@settings(max_examples=60, deadline=None)
@given(graphs, st.randoms())
def test_row_standardization_properties(spec, rnd):
    n, edges = spec
    ids = [f"u{i}" for i in range(n)]
    g = NeighborGraph.from_pairs(ids, [(ids[a], ids[b]) for a, b in edges])
    for star in (False, True):
        W = wt.row_standardize(g, star=star).dense()
        sums = W.sum(axis=1)
        for i, nbrs in enumerate(g.adjacency):
            expected = 0.0 if (not nbrs and not star) else 1.0
            assert sums[i] == pytest.approx(expected)
            # each nonzero weight times the row's member count is one
            nz = W[i][W[i] > 0]
            assert np.allclose(nz * len(nz), 1.0)
    # relabeling units permutes rows and columns consistently
    perm = list(range(n))
    rnd.shuffle(perm)
    g2 = g.subset([ids[k] for k in perm])
    np.testing.assert_array_equal(wt.row_standardize(g2).dense(),
                                  wt.row_standardize(g).dense()[np.ix_(perm, perm)])


def test_triples_round_trip(tmp_path):
    W = wt.row_standardize(wt.lattice_graph(3, 3), star=True)
    path = tmp_path / "w.csv"
    wt.write_triples_csv(W, path)
    back = wt.read_triples_csv(path, kind="star_row_standardized", unit_ids=W.unit_ids)
    assert np.array_equal(back.dense(), W.dense())
    assert path.read_text().splitlines()[0] == "i_unit,j_unit,weight"


def test_binary_weights():
    g = wt.lattice_graph(2, 2)
    assert wt.binary_weights(g).dense().sum() == 12
