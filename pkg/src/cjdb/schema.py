"""The three-table cjdb schema: DDL, clustering and size accounting."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import DataError

_IDENT = re.compile(r"^[a-z_][a-z0-9_]{0,62}$")

FILTER_VIEW = "city_object_filter"


@dataclass(frozen=True)
class AttributeIndex:
    """BTree index on one attribute; ``path`` is a key or dotted key path."""

    path: str
    partial_predicate: str | None = None

    @property
    def keys(self) -> list[str]:
        return [k for k in self.path.split(".") if k]

    @property
    def name(self) -> str:
        slug = re.sub(r"[^a-z0-9]+", "_", self.path.lower()).strip("_")
        return f"city_object_attr_{slug}_idx"[:63]


def attribute_expr(path: str | list[str]) -> str:
    """SQL expression selecting an attribute as jsonb.

    Shared by the index DDL and the attribute query so the planner can match
    the indexed expression.
    """
    keys = path if isinstance(path, list) else AttributeIndex(path).keys
    if not keys:
        raise DataError("empty attribute path")
    elems = ",".join('"' + k.replace("\\", "\\\\").replace('"', '\\"') + '"' for k in keys)
    literal = "'{" + elems.replace("'", "''") + "}'"
    return f"(attributes #> {literal}::text[])"


@dataclass
class SchemaPlan:
    schema_name: str = "cjdb"
    srid: int = 7415
    attribute_indexes: list[AttributeIndex] = field(default_factory=list)

    def __post_init__(self):
        if not _IDENT.match(self.schema_name):
            raise DataError(f"schema name {self.schema_name!r} is not a lowercase SQL identifier")
        if not isinstance(self.srid, int) or self.srid <= 0:
            raise DataError(f"srid must be a positive integer, got {self.srid!r}")
        self.attribute_indexes = [
            a if isinstance(a, AttributeIndex) else AttributeIndex(a) for a in self.attribute_indexes
        ]

    def table(self, name: str) -> str:
        return f"{self.schema_name}.{name}"


def ddl_statements(plan: SchemaPlan) -> list[str]:
    """Idempotent DDL for ``plan``, in execution order."""
    s, srid = plan.schema_name, plan.srid
    stmts = [
        "CREATE EXTENSION IF NOT EXISTS postgis",
        f"CREATE SCHEMA IF NOT EXISTS {s}",
        f"""CREATE TABLE IF NOT EXISTS {s}.cj_metadata (
    id serial PRIMARY KEY,
    source text,
    version text NOT NULL,
    srid integer,
    transform jsonb NOT NULL,
    metadata jsonb,
    geometry_templates jsonb,
    extensions jsonb,
    bbox geometry(Polygon, {srid}),
    imported_at timestamptz NOT NULL DEFAULT now()
)""",
        f"""CREATE TABLE IF NOT EXISTS {s}.city_object (
    id bigserial PRIMARY KEY,
    object_id text NOT NULL,
    type text NOT NULL,
    attributes jsonb NOT NULL DEFAULT '{{}}'::jsonb,
    geometry jsonb NOT NULL DEFAULT '[]'::jsonb,
    ground_geometry geometry(MultiPolygon, {srid}),
    cj_metadata_id integer NOT NULL REFERENCES {s}.cj_metadata (id) ON DELETE CASCADE
)""",
        f"""CREATE TABLE IF NOT EXISTS {s}.city_object_relationships (
    parent_id bigint NOT NULL REFERENCES {s}.city_object (id) ON DELETE CASCADE,
    child_id bigint NOT NULL REFERENCES {s}.city_object (id) ON DELETE CASCADE
)""",
        f"CREATE INDEX IF NOT EXISTS city_object_ground_geometry_idx "
        f"ON {s}.city_object USING gist (ground_geometry)",
        f"CREATE INDEX IF NOT EXISTS city_object_attributes_idx "
        f"ON {s}.city_object USING gin (attributes)",
        f"CREATE UNIQUE INDEX IF NOT EXISTS city_object_object_id_metadata_idx "
        f"ON {s}.city_object (object_id, cj_metadata_id)",
        f"CREATE UNIQUE INDEX IF NOT EXISTS city_object_relationships_idx "
        f"ON {s}.city_object_relationships (parent_id, child_id)",
    ]
    for idx in plan.attribute_indexes:
        stmt = f"CREATE INDEX IF NOT EXISTS {idx.name} ON {s}.city_object USING btree ({attribute_expr(idx.path)})"
        if idx.partial_predicate:
            stmt += f" WHERE {idx.partial_predicate}"
        stmts.append(stmt)
    stmts.append(
        f"CREATE OR REPLACE VIEW {s}.{FILTER_VIEW} AS "
        f"SELECT id, object_id, type, attributes, ground_geometry FROM {s}.city_object"
    )
    return stmts


def partial_index(path: str) -> AttributeIndex:
    """Attribute index restricted to rows that carry the attribute."""
    return AttributeIndex(path, f"{attribute_expr(path)} IS NOT NULL")


def cluster_statements(plan: SchemaPlan) -> list[str]:
    s = plan.schema_name
    return [
        f"CLUSTER {s}.city_object USING city_object_ground_geometry_idx",
        f"ANALYZE {s}.cj_metadata",
        f"ANALYZE {s}.city_object",
        f"ANALYZE {s}.city_object_relationships",
    ]


def create_schema(conn, plan: SchemaPlan) -> None:
    with conn.transaction():
        for stmt in ddl_statements(plan):
            conn.execute(stmt)


def cluster(conn, plan: SchemaPlan) -> None:
    for stmt in cluster_statements(plan):
        conn.execute(stmt)


def schema_exists(conn, schema_name: str) -> bool:
    row = conn.execute(
        "SELECT to_regclass(%s) IS NOT NULL", (f"{schema_name}.city_object",)
    ).fetchone()
    return bool(row[0])


def schema_srid(conn, schema_name: str) -> int | None:
    row = conn.execute(
        "SELECT srid FROM geometry_columns WHERE f_table_schema = %s "
        "AND f_table_name = 'city_object' AND f_geometry_column = 'ground_geometry'",
        (schema_name,),
    ).fetchone()
    return row[0] if row else None


TABLES = ("cj_metadata", "city_object", "city_object_relationships")


@dataclass
class SizeReport:
    """Bytes used by the three tables; the categories are disjoint."""

    tables: int = 0
    indexes: int = 0
    toast: int = 0
    total: int = 0

    def to_json(self) -> dict:
        return {"tables": self.tables, "indexes": self.indexes, "toast": self.toast, "total": self.total}


def measure_sizes(conn, schema_name: str) -> SizeReport:
    """Table heap, index and TOAST sizes of the schema's three tables.

    ``tables`` covers the main, free-space and visibility forks;
    ``toast`` the TOAST heap and its index.
    """
    rows = conn.execute(
        """
        SELECT pg_table_size(c.oid),
               pg_indexes_size(c.oid),
               COALESCE(pg_total_relation_size(NULLIF(c.reltoastrelid, 0)), 0)
        FROM pg_class c JOIN pg_namespace n ON n.oid = c.relnamespace
        WHERE n.nspname = %s AND c.relname = ANY(%s) AND c.relkind = 'r'
        """,
        (schema_name, list(TABLES)),
    ).fetchall()
    report = SizeReport()
    for table_size, index_size, toast_size in rows:
        report.tables += table_size - toast_size
        report.indexes += index_size
        report.toast += toast_size
    report.total = report.tables + report.indexes + report.toast
    return report
