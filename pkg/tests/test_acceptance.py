"""Acceptance suite: one pass/fail line per criterion.

Criteria 1-9 are self-contained. Criteria 10-13 need a CDC WONDER export and
matching state geometry; point ``MORTMAP_WONDER_EXPORT`` and
``MORTMAP_GEOMETRY`` at them (``builtin:us48`` is accepted for the latter) to
run them.
"""

import json
import os
import time

import numpy as np
import pytest

from mortmap import cli, cluster as cl, ingest, spatial_stats as ss, weights as wt
from mortmap.errors import ZeroVarianceError
from mortmap.spatial_stats import SpatialClass
from mortmap.weights import NeighborGraph

from conftest import collection, planted_lattice, square
from test_cluster import exhaustive_ward, members, naive_silhouette, two_blobs
from test_weights import US48


@pytest.fixture
def criterion(request, capsys):
    """``record(ok, detail)`` prints the criterion's line, then asserts."""
    label = request.node.name.replace("test_", "", 1)

    def record(ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {label}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return record


# ---------------------------------------------------------------- (A) self-contained


def test_criterion_01_moran_hand_cases(criterion):
    t0 = time.perf_counter()
    g = NeighborGraph.from_pairs(("a", "b"), [("a", "b")])
    W = wt.row_standardize(g)
    I = ss.global_moran([1.0, -1.0], W).I
    try:
        ss.global_moran([2.0, 2.0], W)
        raised = False
    except ZeroVarianceError:
        raised = True
    elapsed = time.perf_counter() - t0
    criterion(I == -1.0 and raised and elapsed < 1.0,
              f"I={I}, zero-variance error={raised}, {elapsed:.3f}s")


def test_criterion_02_permutation_calibration(criterion):
    t0 = time.perf_counter()
    W = wt.row_standardize(wt.lattice_graph(7, 7, queen=False))
    rng = np.random.default_rng(0)
    analytic, empirical = [], []
    for k in range(200):
        x = rng.standard_normal(49)
        analytic.append(ss.global_moran(x, W).p_two_sided)
        empirical.append(ss.permutation_pvalue(ss.global_moran_stat, x, W, n_perm=9_999, seed=k))
    elapsed = time.perf_counter() - t0
    mad = float(np.mean(np.abs(np.array(analytic) - np.array(empirical))))
    frac = float(np.mean(np.array(analytic) < 0.05))
    criterion(mad < 0.015 and 0.02 <= frac <= 0.10 and elapsed < 120,
              f"mean |p_analytic - p_perm| = {mad:.4f}, significant fraction = {frac:.3f}, {elapsed:.1f}s")


def test_criterion_03_lisa_oracle(criterion):
    t0 = time.perf_counter()
    graph, x, planted = planted_lattice(seed=0)
    W = wt.row_standardize(graph)
    res = ss.local_moran(x, W, alpha=0.05)
    p_perm = ss.local_moran_permutation(x, W, n_perm=99_999, seed=0)
    elapsed = time.perf_counter() - t0
    p = np.array([r.p_two_sided for r in res])
    diff = np.abs(p - p_perm)
    worst = int(np.argmax(diff))
    planted_labels = [res[i].label.value for i in planted]
    ok_p = bool(np.all(diff <= 0.02))
    ok_hh = all(res[i].label == SpatialClass.HIGH_HIGH for i in planted)
    criterion(ok_p and ok_hh and elapsed < 120,
              f"max |p diff| = {diff.max():.4f} at {graph.unit_ids[worst]} "
              f"(analytic {p[worst]:.4f}, permutation {p_perm[worst]:.4f}); "
              f"{int((diff > 0.02).sum())} of 36 units outside 0.02; "
              f"planted classes {planted_labels}; {elapsed:.1f}s")


def test_criterion_04_gistar_rank_and_oracle(criterion):
    graph, x, planted = planted_lattice(seed=0)
    W = wt.row_standardize(graph, star=True)
    res = ss.getis_ord_gistar(x, W, alpha=0.05)
    g = np.array([r.statistic for r in res])
    top4 = set(np.argsort(g)[-4:].tolist())
    p_perm = ss.permutation_pvalue(ss.gistar_stat, x, W, n_perm=99_999, seed=0, conditional=False)
    analytic_sig = np.array([r.p_two_sided < 0.05 for r in res])
    agree = analytic_sig == (p_perm < 0.05)
    criterion(top4 == set(planted) and bool(agree.all()),
              f"top-4 G* units {sorted(graph.unit_ids[i] for i in top4)}; "
              f"class agreement {int(agree.sum())}/36")


def test_criterion_05_mahalanobis(criterion):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 16))
    y = rng.standard_normal((1000, 16))
    dev = 0.0
    for a, b in zip(x, y):
        d = cl.mahalanobis_matrix(np.vstack([a, b]), np.eye(16)).values[0, 1]
        dev = max(dev, abs(d - np.linalg.norm(a - b)))
    diag = cl.mahalanobis_matrix(np.array([[2.0, 0.0], [0.0, 0.0]]), np.diag([4.0, 1.0])).values[0, 1]
    inv_dev = 0.0
    for _ in range(100):
        pts = rng.standard_normal((6, 3))
        s = rng.standard_normal((3, 3))
        sigma = s @ s.T + 0.5 * np.eye(3)
        A = rng.standard_normal((3, 3))
        while abs(np.linalg.det(A)) < 1e-3:
            A = rng.standard_normal((3, 3))
        before = cl.mahalanobis_matrix(pts, sigma).values
        after = cl.mahalanobis_matrix(pts @ A.T, A @ sigma @ A.T).values
        inv_dev = max(inv_dev, float(np.abs(before - after).max()))
    criterion(dev < 1e-10 and abs(diag - 1.0) < 1e-10 and inv_dev < 1e-9,
              f"identity vs Euclidean {dev:.2e}; diag(4,1) case {float(diag)!r}; affine-map deviation {inv_dev:.2e}")


def test_criterion_06_ward_and_silhouette(criterion):
    pts = [0.0, 0.1, 10.0, 10.1]
    d = cl.euclidean_matrix(np.array(pts)[:, None])
    got = members(cl.ward_cluster(d), 4)
    in_oracle = any(got == [frozenset((a, b)) for a, b, _ in seq] for seq in exhaustive_ward(pts))
    pairs_first = set(got[:2]) == {frozenset({frozenset({0}), frozenset({1})}),
                                   frozenset({frozenset({2}), frozenset({3})})}
    blobs = cl.euclidean_matrix(two_blobs())
    sol = cl.silhouette_select(blobs, cl.ward_cluster(blobs))
    direct = naive_silhouette(blobs.values, [sol.assignments[u] for u in blobs.unit_ids])
    criterion(in_oracle and pairs_first and sol.chosen_k == 2 and sol.silhouette_by_k[2] > 0.8
              and abs(direct - sol.silhouette_by_k[2]) < 1e-12,
              f"pairs merged first={pairs_first}, matches exhaustive oracle={in_oracle}; "
              f"two blobs chose k={sol.chosen_k} with mean silhouette {sol.silhouette_by_k[2]:.3f}")


def test_criterion_07_affine_invariance(criterion):
    rng = np.random.default_rng(0)
    graph = wt.lattice_graph(6, 6)
    W, S = wt.row_standardize(graph), wt.row_standardize(graph, star=True)
    worst_stat, worst_p, class_mismatch = 0.0, 0.0, 0
    for _ in range(50):
        x = rng.standard_normal(36) * rng.uniform(0.5, 5) + rng.uniform(-5, 5)
        a = float(np.exp(rng.uniform(np.log(1e-2), np.log(1e2))))
        b = float(rng.uniform(-100, 100))
        y = a * x + b
        g1, g2 = ss.global_moran(x, W), ss.global_moran(y, W)
        worst_stat = max(worst_stat, abs(g1.I - g2.I), abs(g1.z - g2.z))
        worst_p = max(worst_p, abs(g1.p_two_sided - g2.p_two_sided))
        for fn, weights in ((ss.local_moran, W), (ss.getis_ord_gistar, S)):
            for r1, r2 in zip(fn(x, weights), fn(y, weights)):
                worst_stat = max(worst_stat, abs(r1.statistic - r2.statistic), abs(r1.z - r2.z))
                worst_p = max(worst_p, abs(r1.p_two_sided - r2.p_two_sided))
                class_mismatch += r1.label != r2.label
    criterion(worst_stat < 1e-9 and worst_p < 1e-9 and class_mismatch == 0,
              f"max statistic/z deviation {worst_stat:.2e}, max p deviation {worst_p:.2e}, "
              f"class mismatches {class_mismatch}")


def test_criterion_08_contiguity(tmp_path, criterion):
    def squares(*cells):
        return collection([square(x, y, props={"unit_id": uid}) for uid, x, y in cells])

    edge = wt.queen_contiguity_from_polygons(squares(("a", 0, 0), ("b", 1, 0))).pairs() == {frozenset("ab")}
    corner = wt.queen_contiguity_from_polygons(squares(("a", 0, 0), ("b", 1, 1))).pairs() == {frozenset("ab")}
    with pytest.warns(wt.IslandWarning):
        disjoint = wt.queen_contiguity_from_polygons(squares(("a", 0, 0), ("b", 3, 0))).pairs() == set()
    us = wt.queen_contiguity_from_polygons(wt.load_us48())
    path = tmp_path / "us48.gal"
    wt.write_gal(us, path)
    back = wt.read_gal(path)
    round_trip = back.unit_ids == us.unit_ids and back.adjacency == us.adjacency
    published = {frozenset((a, b)) for a, nbrs in US48.items() for b in nbrs.split()}
    matches = us.pairs() == published
    tn = us.cardinalities()["TN"]
    criterion(edge and corner and disjoint and round_trip and matches and tn == 8,
              f"edge={edge} corner={corner} disjoint-not-linked={disjoint} GAL round-trip={round_trip}; "
              f"US48 {len(us.pairs())} pairs match published list={matches}; Tennessee {tn}")


def test_criterion_09_determinism(tmp_path, toy_records_path, toy_geometry_path, criterion):
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        with pytest.warns(UserWarning):
            code = cli.main(["run", "--records", str(toy_records_path), "--geometry", str(toy_geometry_path),
                             "--out", str(out), "--n-perm", "999", "--seed", "17", "--k-max", "4"])
        assert code == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    differing = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    criterion(bool(names) and not differing and names == sorted(p.name for p in outs[1].glob("*.csv")),
              f"{len(names)} statistics CSVs compared, {len(differing)} differ")


# ---------------------------------------------------------------- (B) dataset reproduction

EXPORT = os.environ.get("MORTMAP_WONDER_EXPORT")
GEOMETRY = os.environ.get("MORTMAP_GEOMETRY")
needs_dataset = pytest.mark.skipif(not (EXPORT and GEOMETRY),
                                   reason="set MORTMAP_WONDER_EXPORT and MORTMAP_GEOMETRY")


@pytest.fixture(scope="module")
def dataset_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    code = cli.main(["run", "--records", EXPORT, "--geometry", GEOMETRY, "--out", str(out)])
    return code, out


def _site(sites, needle):
    hits = [s for s in sites if needle in s.lower()]
    assert hits, f"no site matching {needle!r} in {sites}"
    return hits[0]


@pytest.mark.dataset
@needs_dataset
def test_criterion_10_silhouette_k(dataset_run, criterion):
    _, out = dataset_run
    k = len(set(cl.read_assignments_csv(out / "cluster_assignments.csv").values()))
    criterion(k == 3, f"chosen k = {k}")


@pytest.mark.dataset
@needs_dataset
def test_criterion_11_global_moran(dataset_run, criterion):
    _, out = dataset_run
    rows = [line.split(",") for line in (out / "moran_summary.csv").read_text().splitlines()[1:]]
    I = {r[0]: float(r[1]) for r in rows}
    p = {r[0]: float(r[5]) for r in rows}
    targets = {"kidney": 0.57, "liver": 0.55, "lung": 0.53}
    got = {k: I[_site(list(I), k)] for k in targets}
    close = all(abs(got[k] - v) <= 0.05 for k, v in targets.items())
    all_sig = len(p) == 16 and all(v < 0.05 for v in p.values())
    criterion(close and all_sig, f"I = {got}; {sum(v < 0.05 for v in p.values())}/{len(p)} sites p < 0.05")


@pytest.mark.dataset
@needs_dataset
def test_criterion_12_hotspot_tally(dataset_run, criterion):
    _, out = dataset_run
    tally = dict(line.split(",") for line in (out / "hotspot_tally.csv").read_text().splitlines()[1:])
    names = {"AR": ("AR", "05", "Arkansas"), "MO": ("MO", "29", "Missouri"), "VA": ("VA", "51", "Virginia")}
    counts = {}
    for key, aliases in names.items():
        counts[key] = next((int(tally[a]) for a in aliases if a in tally), None)
    top = max(int(v) for v in tally.values())
    ok = all(c is not None and abs(c - 6) <= 1 and top - c <= 1 for c in counts.values())
    criterion(ok, f"counts {counts}, top count {top}")


@pytest.mark.dataset
@needs_dataset
def test_criterion_13_dataset_summary(dataset_run, criterion):
    _, out = dataset_run
    records, _ = ingest.read_canonical_csv(out / "records.csv")
    s = ingest.summarize_rates(records)
    want = {"min": 1.10, "max": 81.3, "mean": 10.17, "sd": 11.51}
    ok = all(abs(s[k] - v) <= 0.01 * v for k, v in want.items())
    criterion(ok, json.dumps({k: round(s[k], 3) for k in want}))
