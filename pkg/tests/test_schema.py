import pytest

from cjdb import schema as sch
from cjdb.errors import DataError
from helpers import import_text, city_text


def _count(stmts, prefix):
    return sum(1 for s in stmts if s.lstrip().upper().startswith(prefix))


def test_default_plan_three_tables_four_indexes():
    stmts = sch.ddl_statements(sch.SchemaPlan())
    assert _count(stmts, "CREATE TABLE") == 3
    assert _count(stmts, "CREATE INDEX") + _count(stmts, "CREATE UNIQUE INDEX") == 4


def test_attribute_index_adds_one_btree():
    base = sch.ddl_statements(sch.SchemaPlan())
    more = sch.ddl_statements(sch.SchemaPlan(attribute_indexes=["h_dak_max"]))
    extra = [s for s in more if s not in base]
    assert len(extra) == 1 and "USING btree" in extra[0]
    assert "'{\"h_dak_max\"}'::text[]" in extra[0]


def test_partial_index_predicate():
    idx = sch.partial_index("a.b")
    stmt = [s for s in sch.ddl_statements(sch.SchemaPlan(attribute_indexes=[idx])) if idx.name in s][0]
    assert stmt.endswith("IS NOT NULL")
    assert idx.keys == ["a", "b"]


@pytest.mark.parametrize("name", ["Bad", "1x", "x-y", "", "a" * 64, "x;drop"])
def test_schema_name_validated(name):
    with pytest.raises(DataError):
        sch.SchemaPlan(name)


@pytest.mark.parametrize("srid", [0, -1, "7415"])
def test_srid_validated(srid):
    with pytest.raises(DataError):
        sch.SchemaPlan(srid=srid)


def test_attribute_expr_escapes_quotes():
    expr = sch.attribute_expr(["it's", 'say "hi"'])
    assert expr == "(attributes #> '{\"it''s\",\"say \\\"hi\\\"\"}'::text[])"


# --- database ---------------------------------------------------------------------

def _catalog(conn, s):
    cols = conn.execute(
        "SELECT table_name, column_name, data_type, is_nullable FROM information_schema.columns "
        "WHERE table_schema = %s ORDER BY 1, 2", (s,)).fetchall()
    idx = conn.execute("SELECT indexname, indexdef FROM pg_indexes WHERE schemaname = %s ORDER BY 1",
                       (s,)).fetchall()
    return cols, idx


@pytest.mark.db
def test_ddl_idempotent(conn, schema_name):
    plan = sch.SchemaPlan(schema_name, attribute_indexes=[sch.partial_index("h_dak_max")])
    sch.create_schema(conn, plan)
    first = _catalog(conn, schema_name)
    sch.create_schema(conn, plan)
    assert _catalog(conn, schema_name) == first
    tables = conn.execute(
        "SELECT count(*) FROM pg_tables WHERE schemaname = %s", (schema_name,)).fetchone()[0]
    assert tables == 3
    assert sch.schema_srid(conn, schema_name) == 7415


@pytest.mark.db
def test_weird_attribute_key_indexable(conn, schema_name):
    key = "it's \"odd\""
    plan = sch.SchemaPlan(schema_name, attribute_indexes=[sch.AttributeIndex(key)])
    sch.create_schema(conn, plan)
    mid = conn.execute(f"INSERT INTO {schema_name}.cj_metadata (version, transform) "
                       "VALUES ('2.0', '{}') RETURNING id").fetchone()[0]
    conn.execute(f"INSERT INTO {schema_name}.city_object (object_id, type, attributes, cj_metadata_id) "
                 "VALUES ('a', 'Building', %s::jsonb, %s)", ('{"it\'s \\"odd\\"": 5}', mid))
    v = conn.execute(f"SELECT {sch.attribute_expr(key)} FROM {schema_name}.city_object").fetchone()[0]
    assert v == 5


@pytest.mark.db
def test_delete_cascades_to_relationships(conn, schema_name):
    import_text(conn, schema_name, city_text(1, 10, parts_ratio=2.0))
    s = schema_name
    before = conn.execute(f"SELECT count(*) FROM {s}.city_object_relationships").fetchone()[0]
    victim, n_children = conn.execute(
        f"SELECT parent_id, count(*) FROM {s}.city_object_relationships GROUP BY 1 ORDER BY 1 LIMIT 1"
    ).fetchone()
    conn.execute(f"DELETE FROM {s}.city_object WHERE id = %s", (victim,))
    after = conn.execute(f"SELECT count(*) FROM {s}.city_object_relationships").fetchone()[0]
    assert after == before - n_children
    conn.execute(f"DELETE FROM {s}.cj_metadata")
    assert conn.execute(f"SELECT count(*) FROM {s}.city_object").fetchone()[0] == 0


@pytest.mark.db
def test_sizes_empty_and_after_import(conn, schema_name):
    plan = sch.SchemaPlan(schema_name)
    sch.create_schema(conn, plan)
    empty = sch.measure_sizes(conn, schema_name)
    assert empty.toast <= 3 * 8192
    assert empty.total == empty.tables + empty.indexes + empty.toast
    import_text(conn, schema_name, city_text(2, 200, parts_ratio=1.0))
    rep = sch.measure_sizes(conn, schema_name)
    assert rep.total == rep.tables + rep.indexes + rep.toast
    assert min(rep.tables, rep.indexes) > 0 and rep.total > empty.total
    # independent route: the catalog's own total per table
    catalog = conn.execute(
        "SELECT sum(pg_total_relation_size(format('%%I.%%I', %s::text, t)::regclass)) "
        "FROM unnest(%s::text[]) t", (schema_name, list(sch.TABLES))).fetchone()[0]
    assert abs(rep.total - catalog) <= 8192


@pytest.mark.db
def test_schema_exists(conn, schema_name):
    assert not sch.schema_exists(conn, schema_name)
    sch.create_schema(conn, sch.SchemaPlan(schema_name))
    assert sch.schema_exists(conn, schema_name)
