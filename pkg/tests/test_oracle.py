import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cjdb import bench
from cjdb.importer import CityObjectRow, PreparedFeature
from cjdb.model import Transform
from cjdb.oracle import (
    AttributeAbove,
    BBoxIntersects,
    ContainsPoint,
    HasLod,
    Oracle,
    PartCounts,
    lookup,
    oracle_eval,
)
from helpers import city_features, city_text, import_text

T = Transform((0.001,) * 3, (0.0,) * 3)


def attrs_oracle(*attrs, typ="Building"):
    rows = [CityObjectRow(f"o{i}", typ, a, []) for i, a in enumerate(attrs)]
    return Oracle([PreparedFeature("f", rows, [])], T)


def test_lookup():
    doc = {"a": {"b": {"c": 3}}, "x": 1}
    assert lookup(doc, "a.b.c") == 3
    assert lookup(doc, "a.z") is None
    assert lookup(doc, "x.y") is None
    assert lookup(doc, "x") == 1


def test_attribute_kinds():
    o = attrs_oracle({"h": 25}, {"h": "30"}, {"h": True}, {}, {"h": None}, {"h": 20}, {"h": 20.0001},
                     {"h": [30]}, {"n": {"h": 40}})
    assert o.eval(AttributeAbove("h", 20)) == {"o0", "o6"}
    assert o.eval(AttributeAbove("n.h", 20)) == {"o8"}


def test_threshold_infinity():
    o = attrs_oracle({"h": 1e308}, {"h": -5})
    assert o.eval(AttributeAbove("h", math.inf)) == set()
    assert o.eval(AttributeAbove("h", -math.inf)) == {"o0", "o1"}


def test_decimal_comparison_is_exact():
    # 0.1 + 0.2 stored as written; jsonb compares the decimal text
    o = attrs_oracle({"h": 0.30000000000000004})
    assert o.eval(AttributeAbove("h", 0.3)) == {"o0"}


def test_type_filter():
    o = attrs_oracle({"h": 50}, typ="BuildingPart")
    assert o.eval(AttributeAbove("h", 1)) == set()
    assert o.eval(AttributeAbove("h", 1, None)) == {"o0"}


def test_part_counts_vienna_like():
    hdr, feats = city_features(307, 307, parts_total=1015)
    counts = oracle_eval(PartCounts(), feats, hdr.metadata.transform)
    assert len(counts) == 307 and sum(counts.values()) == 1015
    assert min(counts.values()) >= 0


def test_universal_window_and_lods():
    hdr, feats = city_features(5, 40, parts_ratio=0.5, vegetation=4)
    o = Oracle(feats, hdr.metadata.transform)
    every = {r.object_id for r in o.rows if r.footprint is not None and r.type == "Building"}
    assert o.eval(BBoxIntersects((-1e9, -1e9, 1e9, 1e9))) == every
    assert o.eval(BBoxIntersects((-1e9, -1e9, -1e8, -1e8))) == set()
    with_geom = {r.object_id for r in o.rows if r.geometry and r.type == "Building"}
    assert o.eval(HasLod("1.2")) == with_geom
    assert o.eval(HasLod("3")) == set()


def test_point_inside_exactly_one_rectangle():
    hdr, feats = city_features(6, 30)
    o = Oracle(feats, hdr.metadata.transform)
    for r in o.rows[:10]:
        c = r.footprint.geometry.representative_point()
        assert r.object_id in o.eval(ContainsPoint((c.x, c.y)))


def test_unknown_spec():
    with pytest.raises(TypeError):
        attrs_oracle().eval("Q9")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.integers(-100, 100), st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)),
                max_size=20),
       st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False))
def test_q1_partitions(values, t):
    # every numeric value lands in exactly one of (> t) and (<= t)
    o = attrs_oracle(*[{"h": v} for v in values])
    above = o.eval(AttributeAbove("h", t))
    assert above == {f"o{i}" for i, v in enumerate(values) if v > t}


# --- database agreement -----------------------------------------------------------

@pytest.mark.db
def test_database_matches_oracle_on_grid(conn, schema_name):
    kw = dict(parts_ratio=1.5, vegetation=10, lods=("0", "1.2", "2.2"))
    hdr, feats = city_features(21, 120, **kw)
    import_text(conn, schema_name, city_text(21, 120, **kw))
    o = Oracle(feats, hdr.metadata.transform)
    base = bench.derive_params(conn, schema_name, bench.QueryParams())
    x0, y0, x1, y1 = base.bbox
    grid = [
        dict(threshold=t, bbox=b, point=p, lod=lod, object_type=typ)
        for t, b, p, lod, typ in [
            (5.0, (x0, y0, x1, y1), base.point, "1.2", "Building"),
            (20.0, (x0 - 500, y0 - 500, x1 + 500, y1 + 500), (x0, y0), "0", "BuildingPart"),
            (35.5, (-1e9, -1e9, 1e9, 1e9), (0.0, 0.0), "2.2", None),
        ]
    ]
    for g in grid:
        params = bench.QueryParams(**g)
        for name, spec in params.specs().items():
            got = bench.run_query(conn, name, params, schema_name)
            assert got == o.eval(spec), (name, g)
