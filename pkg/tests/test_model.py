import copy
import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cjdb.errors import StructuralError
from cjdb.model import (
    CityFeature,
    DatasetMetadata,
    Transform,
    VertexPool,
    check_geometry,
    dereference_geometry,
    parse_srid,
    quantize,
    requantize_geometry,
    scale_precision,
)
from helpers import unit_cube_solid


def test_dereference_figure_example():
    g = {"type": "MultiPoint", "lod": "1", "boundaries": [0]}
    t = Transform((0.1, 0.1, 0.1), (0, 0, 0))
    assert dereference_geometry(g, [[111, 226, 99]], t)["boundaries"] == [[11.1, 22.6, 9.9]]


def test_dereference_unit_cube_corners():
    g, verts = unit_cube_solid(size=1)
    t = Transform((0.001, 0.001, 0.001), (100, 200, 0))
    out = dereference_geometry(g, verts, t)
    corners = {tuple(c) for face in out["boundaries"][0] for ring in face for c in ring}
    # hand-computed affine image of the 8 corners
    want = {(x, y, z) for x in (100, 100.001) for y in (200, 200.001) for z in (0, 0.001)}
    assert corners == want


def test_requantize_inverse_example():
    pool = VertexPool()
    g = {"type": "MultiPoint", "lod": "1", "boundaries": [[11.1, 22.6, 9.9]]}
    out = requantize_geometry(g, Transform((0.1, 0.1, 0.1), (0, 0, 0)), pool)
    assert out["boundaries"] == [0]
    assert pool.vertices == [[111, 226, 99]]


def test_pool_dedups_shared_vertices():
    a, b, c, d = [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]
    e, f = [2, 0, 0], [2, 1, 0]
    g = {"type": "MultiSurface", "lod": "1", "boundaries": [[[a, b, c, d]], [[b, e, f, c]]]}
    pool = VertexPool()
    out = requantize_geometry(g, Transform.identity(), pool)
    # brute-force count of distinct triples
    distinct = {tuple(p) for s in g["boundaries"] for r in s for p in r}
    assert len(pool) == len(distinct) == 6
    assert out["boundaries"] == [[[0, 1, 2, 3]], [[1, 4, 5, 2]]]


def test_index_out_of_range_names_feature_and_index():
    g = {"type": "MultiPoint", "lod": "1", "boundaries": [0, 5]}
    with pytest.raises(StructuralError) as e:
        dereference_geometry(g, [[1, 2, 3]], Transform.identity(), "F1")
    assert e.value.feature_id == "F1" and e.value.index == 5
    assert "F1" in str(e.value)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_requantize_rejects_non_finite(bad):
    g = {"type": "MultiPoint", "lod": "1", "boundaries": [[0.0, bad, 0.0]]}
    with pytest.raises(StructuralError):
        requantize_geometry(g, Transform.identity(), VertexPool())


def test_round_half_away_from_zero():
    t = Transform((1.0, 1.0, 1.0), (0, 0, 0))
    assert quantize((0.5, -0.5, 2.5), t) == (1, -1, 3)
    assert quantize((1.4999, -1.4999, 0.0), t) == (1, -1, 0)


def test_geometry_instance_keeps_template():
    g = {"type": "GeometryInstance", "template": 3, "boundaries": [0],
         "transformationMatrix": [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]}
    out = dereference_geometry(g, [[10, 20, 30]], Transform((0.5, 0.5, 0.5), (1, 1, 1)))
    assert out["template"] == 3
    assert out["boundaries"] == [[6.0, 11.0, 16.0]]
    assert out["transformationMatrix"] == g["transformationMatrix"]


@pytest.mark.parametrize("scale,p", [(1, 0), (0.1, 1), (0.001, 3), (0.5, 1), (0.25, 2), (2.0, 0), (1e-20, 15)])
def test_scale_precision(scale, p):
    assert scale_precision(scale) == p


@pytest.mark.parametrize("scale", [(0, 1, 1), (1, -1, 1), (1, 1, math.nan)])
def test_transform_rejects_bad_scale(scale):
    with pytest.raises(StructuralError):
        Transform(scale, (0, 0, 0))


@pytest.mark.parametrize("ref,srid", [
    ("https://www.opengis.net/def/crs/EPSG/0/7415", 7415),
    ("urn:ogc:def:crs:EPSG::2056", 2056),
    ("EPSG:28992", 28992),
    ("something else", None),
    (None, None),
])
def test_parse_srid(ref, srid):
    assert parse_srid(ref) == srid


def test_metadata_bbox_must_be_ordered():
    t = {"scale": [1, 1, 1], "translate": [0, 0, 0]}
    with pytest.raises(StructuralError):
        DatasetMetadata.from_header({"transform": t, "metadata": {"geographicalExtent": [1, 0, 0, 0, 1, 1]}})


def test_check_geometry_nesting_and_semantics():
    g, verts = unit_cube_solid()
    check_geometry(g, len(verts))
    shallow = dict(g, boundaries=g["boundaries"][0])
    with pytest.raises(StructuralError):
        check_geometry(shallow, len(verts))
    sem = {"surfaces": [{"type": "GroundSurface"}], "values": [[0, None, 0, 0, 0, 0]]}
    check_geometry(dict(g, semantics=sem), len(verts))
    with pytest.raises(StructuralError):
        check_geometry(dict(g, semantics={"surfaces": sem["surfaces"], "values": [[0, 0]]}), len(verts))
    with pytest.raises(StructuralError):
        check_geometry(dict(g, semantics={"surfaces": sem["surfaces"], "values": [[1] * 6]}), len(verts))
    with pytest.raises(StructuralError):
        check_geometry(g, 7)


def _feature(objects, vertices=None):
    return CityFeature.from_json({"type": "CityJSONFeature", "id": next(iter(objects)),
                                  "CityObjects": objects, "vertices": vertices or []})


def test_feature_parent_child_consistency():
    ok = _feature({"B": {"type": "Building", "children": ["P"]},
                   "P": {"type": "BuildingPart", "parents": ["B"]}})
    ok.validate()
    assert ok.edges() == [("B", "P")]
    bad = _feature({"B": {"type": "Building", "children": ["P"]}, "P": {"type": "BuildingPart"}})
    with pytest.raises(StructuralError):
        bad.validate()


def test_feature_id_must_be_an_object():
    with pytest.raises(StructuralError):
        CityFeature.from_json({"type": "CityJSONFeature", "id": "X", "CityObjects": {"B": {"type": "Building"}},
                               "vertices": []})


def test_feature_json_roundtrip_keeps_unknown_members():
    doc = {"type": "CityJSONFeature", "id": "B",
           "CityObjects": {"B": {"type": "Building", "attributes": {"a": {"b": [1, 2]}}, "geometry": [],
                                 "address": [{"street": "x"}]}},
           "vertices": [], "appearance": {"textures": [{"image": "a.png"}]}}
    assert CityFeature.from_json(copy.deepcopy(doc)).to_json() == doc


# --- properties -------------------------------------------------------------------

ints = st.integers(min_value=-10**9, max_value=10**9)
triples = st.lists(st.tuples(ints, ints, ints), min_size=1, max_size=30)
scales = st.sampled_from([1.0, 0.1, 0.001])
translates = st.tuples(*[st.sampled_from([0.0, 85000.0, -123.456, 446000.0])] * 3)


@settings(max_examples=200, deadline=None)
@given(vs=triples, s=scales, tr=translates, data=st.data())
def test_dereference_requantize_roundtrip(vs, s, tr, data):
    t = Transform((s, s, s), tr)
    verts = [list(v) for v in vs]
    n_pts = data.draw(st.integers(1, 40))
    idx = data.draw(st.lists(st.integers(0, len(verts) - 1), min_size=n_pts, max_size=n_pts))
    g = {"type": "MultiLineString", "lod": "1", "boundaries": [idx]}
    pool = VertexPool()
    back = requantize_geometry(dereference_geometry(g, verts, t), t, pool)
    # same topology, same vertex triple behind every reference
    assert [pool.vertices[i] for i in back["boundaries"][0]] == [verts[i] for i in idx]
    assert len(pool) == len({tuple(verts[i]) for i in idx})


@settings(max_examples=200, deadline=None)
@given(vs=triples, s=scales, tr=translates)
def test_dereference_error_within_half_scale(vs, s, tr):
    t = Transform((s, s, s), tr)
    g = {"type": "MultiPoint", "lod": "1", "boundaries": list(range(len(vs)))}
    out = dereference_geometry(g, [list(v) for v in vs], t)
    for v, c in zip(vs, out["boundaries"]):
        for k in range(3):
            exact = v[k] * Fraction(s) + Fraction(tr[k])
            assert abs(Fraction(c[k]) - exact) <= Fraction(s) / 2


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6)] * 3), min_size=1, max_size=20), scales)
def test_requantize_error_within_half_scale(pts, s):
    t = Transform((s, s, s), (10.0, -20.0, 0.0))
    for p in pts:
        q = quantize(p, t)
        for k in range(3):
            assert abs(q[k] * s + t.translate[k] - p[k]) <= 0.5 * s * (1 + 1e-9) + 1e-9


@settings(max_examples=50, deadline=None)
@given(s=scales)
def test_semantics_untouched(s):
    g, verts = unit_cube_solid()
    g["semantics"] = {"surfaces": [{"type": "GroundSurface"}, {"type": "RoofSurface", "x": 1}],
                      "values": [[0, 1, None, None, None, None]]}
    before = json.dumps(g["semantics"])
    t = Transform((s, s, s), (1, 2, 3))
    d = dereference_geometry(g, verts, t)
    r = requantize_geometry(d, t, VertexPool())
    assert json.dumps(d["semantics"]) == json.dumps(r["semantics"]) == before
