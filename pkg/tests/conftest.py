from pathlib import Path

import numpy as np
import pytest

from mortmap import weights as wt

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def toy_records_path():
    return FIXTURES / "toy_records.csv"


@pytest.fixture
def toy_geometry_path():
    return FIXTURES / "toy_geometry.geojson"


def square(x0, y0, size=1.0, props=None):
    ring = [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]]
    return {"type": "Feature", "properties": props or {},
            "geometry": {"type": "Polygon", "coordinates": [ring]}}


def collection(features):
    return {"type": "FeatureCollection", "features": features}


def planted_lattice(seed=0):
    """6x6 queen lattice: standard-normal background, 2x2 corner block at 3.0."""
    graph = wt.lattice_graph(6, 6, queen=True)
    x = np.random.default_rng(seed).standard_normal(36)
    planted = [0, 1, 6, 7]
    x[planted] = 3.0
    return graph, x, planted
