"""Convert the libpysal ``us_income/us48`` shapefile into the bundled GeoJSON.

Development-time only; needs ``pyshp``::

    python scripts/build_us48_geojson.py path/to/us48.shp src/mortmap/data/us48_states.geojson
"""
import json
import sys

import shapefile


def ring_area(ring):
    return 0.5 * sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring, ring[1:]))


def main(src, dst):
    reader = shapefile.Reader(src)
    features = []
    for shape, rec in zip(reader.shapes(), reader.records()):
        rec = rec.as_dict()
        bounds = list(shape.parts) + [len(shape.points)]
        polygons = []
        for a, b in zip(bounds, bounds[1:]):
            ring = [[round(x, 6), round(y, 6)] for x, y in shape.points[a:b]]
            if ring_area(ring) < 0:  # shapefile outer rings are clockwise
                ring.reverse()
            polygons.append([ring])
        features.append({
            "type": "Feature",
            "properties": {
                "unit_id": rec["STATE_ABBR"],
                "unit_name": rec["STATE_NAME"],
                "fips": rec["STATE_FIPS"],
            },
            "geometry": {"type": "MultiPolygon", "coordinates": polygons},
        })
    features.sort(key=lambda f: f["properties"]["unit_id"])
    with open(dst, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, separators=(",", ":"))


if __name__ == "__main__":
    main(*sys.argv[1:3])
