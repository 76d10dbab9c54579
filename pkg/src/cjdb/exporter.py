"""Database -> CityJSONL export.

A SQL filter selects city_object ids; each selected object is resolved up to
its root, and every root is written as one CityJSONFeature holding the root
and all its transitive children.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass
from typing import IO

from . import schema as sch
from .errors import CycleError, DataError
from .model import CityFeature, CityObject, DatasetMetadata, Transform, VertexPool, requantize_geometry
from .seq import SequenceHeader, dumps_compact

log = logging.getLogger(__name__)

FETCH_SIZE = 200


@dataclass
class ExportStats:
    features_out: int = 0
    objects_out: int = 0
    seconds: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def all_objects_filter(schema_name: str) -> str:
    return f"SELECT id FROM {schema_name}.city_object"


def _roots_sql(s: str, filter_sql: str) -> str:
    # walk parent links upward from every selected id; path arrays stop cycles
    return f"""
WITH RECURSIVE sel AS (
    SELECT DISTINCT f.id::bigint AS id FROM ({filter_sql}) AS f(id)
), up(start_id, id, path, cycle) AS (
    SELECT id, id, ARRAY[id], false FROM sel
    UNION ALL
    SELECT up.start_id, r.parent_id, up.path || r.parent_id, r.parent_id = ANY(up.path)
    FROM up JOIN {s}.city_object_relationships r ON r.child_id = up.id
    WHERE NOT up.cycle
)
SELECT id, path, cycle,
       NOT EXISTS (SELECT 1 FROM {s}.city_object_relationships r WHERE r.child_id = up.id) AS is_root
FROM up
"""


def resolve_roots(conn, schema_name: str, filter_sql: str) -> list[int]:
    """Root ids (no parent) above every id selected by ``filter_sql`` (its
    first column, whatever its name), ascending. Raises :class:`CycleError` if a parent chain loops."""
    roots = set()
    for rid, path, cycle, is_root in conn.execute(_roots_sql(schema_name, filter_sql)):
        if cycle:
            raise CycleError(path)
        if is_root:
            roots.add(rid)
    return sorted(roots)


def resolve_subtree(conn, schema_name: str, root_ids) -> dict[int, list[int]]:
    """Breadth-first closure below each root: parent before children,
    siblings in insertion (id) order."""
    root_ids = list(root_ids)
    if not root_ids:
        return {}
    rows = conn.execute(
        f"""
WITH RECURSIVE down(root, parent_id, child_id) AS (
    SELECT r.parent_id, r.parent_id, r.child_id
    FROM {schema_name}.city_object_relationships r WHERE r.parent_id = ANY(%s)
    UNION
    SELECT d.root, r.parent_id, r.child_id
    FROM down d JOIN {schema_name}.city_object_relationships r ON r.parent_id = d.child_id
)
SELECT root, parent_id, child_id FROM down ORDER BY root, parent_id, child_id
""",
        (root_ids,),
    ).fetchall()
    children: dict[int, dict[int, list[int]]] = {}
    for root, parent, child in rows:
        children.setdefault(root, {}).setdefault(parent, []).append(child)
    out = {}
    for root in root_ids:
        kids = children.get(root, {})
        order, seen = [], {root}
        queue = deque([root])
        while queue:
            node = queue.popleft()
            order.append(node)
            for child in kids.get(node, []):
                if child in seen:
                    raise CycleError([node, child])
                seen.add(child)
                queue.append(child)
        out[root] = order
    return out


def load_metadata(conn, schema_name: str, metadata_id: int) -> DatasetMetadata:
    row = conn.execute(
        f"SELECT version, srid, transform, metadata, geometry_templates, extensions "
        f"FROM {schema_name}.cj_metadata WHERE id = %s",
        (metadata_id,),
    ).fetchone()
    if row is None:
        raise DataError(f"no cj_metadata row {metadata_id}")
    version, srid, transform, metadata, templates, extensions = row
    return DatasetMetadata(
        version=version,
        transform=Transform.from_json(transform),
        crs_srid=srid,
        geometry_templates=templates,
        extensions=extensions,
        metadata=metadata or {},
    )


def _metadata_for(conn, s: str) -> int:
    ids = [r[0] for r in conn.execute(
        f"SELECT DISTINCT o.cj_metadata_id FROM {s}.city_object o "
        f"JOIN cjdb_export_roots r ON r.id = o.id LIMIT 2"
    )]
    if len(ids) > 1:
        raise DataError("selection spans several imported files; export one file at a time")
    if ids:
        return ids[0]
    # empty selection: header of the most recent import
    row = conn.execute(f"SELECT max(id) FROM {s}.cj_metadata").fetchone()
    if row[0] is None:
        raise DataError(f"schema {s!r} holds no imported file")
    return row[0]


def build_feature(root_id: int, order: list[int], rows: dict, edges: list, transform: Transform) -> CityFeature:
    """Assemble one feature; ``rows`` maps db id -> (object_id, type, attributes, geometry)."""
    pool = VertexPool()
    oid = {i: rows[i][0] for i in order}
    objects = {}
    for i in order:
        object_id, typ, attributes, geometry = rows[i]
        objects[object_id] = CityObject(
            type=typ,
            attributes=attributes or {},
            geometry=[requantize_geometry(g, transform, pool) for g in geometry or []],
        )
    for parent, child in edges:
        objects[oid[parent]].children.append(oid[child])
        objects[oid[child]].parents.append(oid[parent])
    return CityFeature(id=oid[root_id], city_objects=objects, vertices=pool.vertices)


def export(conn, filter_sql: str | None, sink: IO, schema_name: str = "cjdb") -> ExportStats:
    """Write the objects selected by ``filter_sql`` (None: everything) as CityJSONL."""
    t0 = time.perf_counter()
    sch.SchemaPlan(schema_name)  # validates the identifier
    s = schema_name
    if filter_sql is None:
        filter_sql = all_objects_filter(s)
    filter_sql = filter_sql.strip().rstrip(";")
    stats = ExportStats()
    with conn.transaction():
        conn.execute(f"CREATE TEMP TABLE cjdb_export_up ON COMMIT DROP AS {_roots_sql(s, filter_sql)}")
        cyc = conn.execute("SELECT path FROM cjdb_export_up WHERE cycle LIMIT 1").fetchone()
        if cyc:
            raise CycleError(cyc[0])
        conn.execute(
            "CREATE TEMP TABLE cjdb_export_roots ON COMMIT DROP AS "
            "SELECT DISTINCT id FROM cjdb_export_up WHERE is_root"
        )
        meta = load_metadata(conn, s, _metadata_for(conn, s))
        header = SequenceHeader.from_metadata(meta)
        sink.write(dumps_compact(header.raw) + "\n")
        conn.execute("DECLARE cjdb_export_cur NO SCROLL CURSOR FOR SELECT id FROM cjdb_export_roots ORDER BY id")
        while True:
            batch = [r[0] for r in conn.execute(f"FETCH {FETCH_SIZE} FROM cjdb_export_cur")]
            if not batch:
                break
            for feature in _features(conn, s, batch, meta.transform):
                sink.write(dumps_compact(feature.to_json()) + "\n")
                stats.features_out += 1
                stats.objects_out += len(feature.city_objects)
        conn.execute("CLOSE cjdb_export_cur")
    sink.flush()
    stats.seconds = time.perf_counter() - t0
    return stats


def _features(conn, s, root_ids, transform):
    subtrees = resolve_subtree(conn, s, root_ids)
    ids = [i for r in root_ids for i in subtrees[r]]
    rows = {
        r[0]: r[1:]
        for r in conn.execute(
            f"SELECT id, object_id, type, attributes, geometry FROM {s}.city_object WHERE id = ANY(%s)",
            (ids,),
        )
    }
    edge_rows = conn.execute(
        f"SELECT parent_id, child_id FROM {s}.city_object_relationships "
        f"WHERE parent_id = ANY(%s) ORDER BY parent_id, child_id",
        (ids,),
    ).fetchall()
    by_parent: dict[int, list] = {}
    for p, c in edge_rows:
        by_parent.setdefault(p, []).append((p, c))
    for root in root_ids:
        order = subtrees[root]
        edges = [e for i in order for e in by_parent.get(i, [])]
        yield build_feature(root, order, rows, edges, transform)
