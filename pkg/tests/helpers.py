"""Small utilities shared by the test modules."""

from __future__ import annotations

import io
import json

from cjdb import synth
from cjdb.importer import ImportOptions, import_file
from cjdb.schema import SchemaPlan
from cjdb.seq import read_sequence


def city_text(seed=1, n=20, **kw) -> str:
    buf = io.StringIO()
    synth.write_city(buf, seed, n, **kw)
    return buf.getvalue()


def city_features(seed=1, n=20, **kw):
    seq = read_sequence(io.StringIO(city_text(seed, n, **kw)))
    return seq.header, list(seq)


def import_text(conn, schema_name, text, **opts):
    return import_file(io.StringIO(text), conn, SchemaPlan(schema_name), ImportOptions(**opts))


def lines_of(*docs) -> str:
    return "".join(json.dumps(d) + "\n" for d in docs)


def header(scale=(0.001, 0.001, 0.001), translate=(0.0, 0.0, 0.0), srid=7415, **extra) -> dict:
    h = {
        "type": "CityJSON",
        "version": "2.0",
        "transform": {"scale": list(scale), "translate": list(translate)},
        "CityObjects": {},
        "vertices": [],
    }
    if srid is not None:
        h["metadata"] = {"referenceSystem": f"https://www.opengis.net/def/crs/EPSG/0/{srid}"}
    h.update(extra)
    return h


def unit_cube_solid(lod="1.2", base=(0, 0, 0), size=1):
    """Boundaries over the 8 corners of an axis-aligned cube (vertex list returned too)."""
    x, y, z = base
    s = size
    verts = [
        [x, y, z], [x + s, y, z], [x + s, y + s, z], [x, y + s, z],
        [x, y, z + s], [x + s, y, z + s], [x + s, y + s, z + s], [x, y + s, z + s],
    ]
    faces = [
        [[0, 3, 2, 1]], [[4, 5, 6, 7]], [[0, 1, 5, 4]],
        [[1, 2, 6, 5]], [[2, 3, 7, 6]], [[3, 0, 4, 7]],
    ]
    return {"type": "Solid", "lod": lod, "boundaries": [faces]}, verts


def coords(geom_index_tree, verts):
    """Replace indices by the given coordinates (test-side dereference)."""
    if isinstance(geom_index_tree, list):
        return [coords(c, verts) for c in geom_index_tree]
    return list(verts[geom_index_tree])


def gable_house_no_floor(w=10.0, d=6.0, eave=3.0, ridge=5.0, lod="2.2"):
    """Floorless gable house (dereferenced): 2 gable ends, 2 long walls, 2 roof planes."""
    p = [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0), (0, 0, eave), (w, 0, eave), (w, d, eave), (0, d, eave)]
    r0, r1 = (0, d / 2, ridge), (w, d / 2, ridge)
    faces = [
        [p[0], p[1], p[5], p[4]],          # south wall
        [p[2], p[3], p[7], p[6]],          # north wall
        [p[1], p[2], p[6], r1, p[5]],      # east gable
        [p[3], p[0], p[4], r0, p[7]],      # west gable
        [p[4], p[5], r1, r0],              # south roof
        [p[6], p[7], r0, r1],              # north roof
    ]
    return {"type": "Solid", "lod": lod, "boundaries": [[[[list(v) for v in f]] for f in faces]]}
