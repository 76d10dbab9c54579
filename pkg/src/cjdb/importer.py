"""CityJSONL -> database import pipeline.

parse -> dereference -> footprint (pure, per feature) -> batched inserts on a
single connection, one transaction per file.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import psycopg

from . import schema as sch
from .errors import DataError, IngestError, StructuralError, TransportError
from .footprint import DEFAULT_ELEV_TOL, DEFAULT_HORIZ_TOL, Footprint, footprint_for_object
from .model import CityFeature, DatasetMetadata, Transform, dereference_geometry
from .seq import SequenceHeader, open_input, read_sequence

log = logging.getLogger(__name__)


@dataclass
class ImportOptions:
    batch_size: int = 1000
    on_conflict: str = "error"  # or "skip"
    on_malformed: str = "skip"  # or "raise"
    srid: int | None = None
    horiz_tol: float = DEFAULT_HORIZ_TOL
    elev_tol: float = DEFAULT_ELEV_TOL
    cluster: bool = True
    source: str | None = None

    def __post_init__(self):
        if self.on_conflict not in ("error", "skip"):
            raise ValueError("on_conflict must be 'error' or 'skip'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ImportStats:
    features_in: int = 0
    objects_written: int = 0
    relationships_written: int = 0
    skipped: int = 0
    duplicates: int = 0
    fallback_footprints: int = 0  # bbox stand-ins: no horizontal ground face found
    seconds: float = 0.0
    metadata_id: int | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CityObjectRow:
    object_id: str
    type: str
    attributes: dict
    geometry: list
    footprint: Footprint | None = None


@dataclass
class PreparedFeature:
    id: str
    rows: list[CityObjectRow]
    edges: list[tuple[str, str]]
    extent: tuple | None = None  # xmin, ymin, zmin, xmax, ymax, zmax of the vertices

    def __len__(self):
        return len(self.rows)


def _extent(vertices, t: Transform):
    if not vertices:
        return None
    lo = [min(v[i] for v in vertices) for i in range(3)]
    hi = [max(v[i] for v in vertices) for i in range(3)]
    return tuple(lo[i] * t.scale[i] + t.translate[i] for i in range(3)) + tuple(
        hi[i] * t.scale[i] + t.translate[i] for i in range(3)
    )


def prepare_feature(
    feature: CityFeature,
    transform: Transform,
    horiz_tol: float = DEFAULT_HORIZ_TOL,
    elev_tol: float = DEFAULT_ELEV_TOL,
) -> PreparedFeature:
    """Database image of one feature. Pure: safe to run in worker processes."""
    rows = []
    for oid, obj in feature.city_objects.items():
        geoms = [dereference_geometry(g, feature.vertices, transform, feature.id) for g in obj.geometry]
        try:
            fp = footprint_for_object(geoms, horiz_tol, elev_tol)
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise StructuralError(f"cannot derive footprint of {oid!r}: {exc}", feature.id) from exc
        attributes = dict(obj.attributes)
        rows.append(CityObjectRow(oid, obj.type, attributes, geoms, fp))
    for parent, child in feature.edges():
        if parent not in feature.city_objects or child not in feature.city_objects:
            raise StructuralError(f"relationship {parent!r} -> {child!r} leaves the feature", feature.id)
    return PreparedFeature(feature.id, rows, feature.edges(), _extent(feature.vertices, transform))


def resolve_srid(meta: DatasetMetadata, override: int | None) -> int:
    if override is not None:
        return int(override)
    if meta.crs_srid is not None:
        return meta.crs_srid
    raise DataError("no SRID: header has no EPSG referenceSystem and --srid was not given")


# --- writes ------------------------------------------------------------------------

def _metadata_row(conn, plan: sch.SchemaPlan, meta: DatasetMetadata, srid: int, source) -> tuple[int, bool]:
    """Reuse a metadata row with an identical header, else insert one.
    Returns (id, created)."""
    t = plan.table("cj_metadata")
    payload = (
        meta.version,
        json.dumps(meta.transform.to_json()),
        json.dumps(meta.metadata or {}),
        json.dumps(meta.geometry_templates),
        json.dumps(meta.extensions),
    )
    row = conn.execute(
        f"SELECT id FROM {t} WHERE version = %s AND transform = %s::jsonb "
        f"AND metadata = %s::jsonb AND geometry_templates IS NOT DISTINCT FROM %s::jsonb "
        f"AND extensions IS NOT DISTINCT FROM %s::jsonb ORDER BY id LIMIT 1",
        payload,
    ).fetchone()
    if row:
        return row[0], False
    version, transform, metadata, templates, extensions = payload
    xmin = ymin = xmax = ymax = None
    if meta.bbox is not None:
        xmin, ymin, _, xmax, ymax, _ = meta.bbox
    row = conn.execute(
        f"INSERT INTO {t} (source, version, srid, transform, metadata, geometry_templates, extensions, bbox) "
        f"VALUES (%s, %s, %s, %s::jsonb, %s::jsonb, %s::jsonb, %s::jsonb, "
        f"CASE WHEN %s::float8 IS NULL THEN NULL ELSE ST_MakeEnvelope(%s, %s, %s, %s, %s) END) RETURNING id",
        (source, version, srid, transform, metadata, templates, extensions,
         xmin, xmin, ymin, xmax, ymax, srid),
    ).fetchone()
    return row[0], True


def _dumps(doc) -> str:
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def insert_sql(plan: sch.SchemaPlan, on_conflict: str = "error") -> str:
    """The bulk insert statement: one row per element of six parallel arrays."""
    conflict = " ON CONFLICT (object_id, cj_metadata_id) DO NOTHING" if on_conflict == "skip" else ""
    return (
        f"INSERT INTO {plan.table('city_object')} "
        f"(object_id, type, attributes, geometry, ground_geometry, cj_metadata_id) "
        f"SELECT u.oid, u.typ, u.attrs::jsonb, u.geom::jsonb, "
        f"ST_Multi(ST_GeomFromEWKB(decode(u.fp, 'hex'))), %s "
        f"FROM unnest(%s::text[], %s::text[], %s::text[], %s::text[], %s::text[]) "
        f"AS u(oid, typ, attrs, geom, fp){conflict} RETURNING id, object_id"
    )


def batch_insert(
    conn, plan: sch.SchemaPlan, metadata_id: int, rows: list[CityObjectRow], on_conflict: str = "error"
) -> dict[str, int]:
    """Insert ``rows`` with one multi-row statement.

    Returns object_id -> row id for the rows actually written. A rejected
    batch writes nothing and raises :class:`IngestError` naming the first
    offending object.
    """
    if not rows:
        return {}
    sql = insert_sql(plan, on_conflict)
    try:
        params = (
            metadata_id,
            [r.object_id for r in rows],
            [r.type for r in rows],
            [_dumps(r.attributes) for r in rows],
            [_dumps(r.geometry) for r in rows],
            [r.footprint.to_wkb_hex(plan.srid) if r.footprint else None for r in rows],
        )
    except ValueError as exc:
        raise IngestError(f"row is not JSON-serializable: {exc}") from exc
    try:
        with conn.transaction():
            return {oid: rid for rid, oid in conn.execute(sql, params).fetchall()}
    except psycopg.OperationalError as exc:
        raise TransportError(str(exc)) from exc
    except psycopg.Error as exc:
        culprit = _find_bad_row(conn, sql, params, rows)
        raise IngestError(
            f"batch rejected at object {culprit!r}: {exc.diag.message_primary or exc}", culprit
        ) from exc


def _find_bad_row(conn, sql, params, rows) -> str | None:
    # retry row by row inside rolled-back savepoints to name the culprit
    for i, r in enumerate(rows):
        single = (params[0],) + tuple([col[i]] for col in params[1:])
        try:
            with conn.transaction() as tx:
                conn.execute(sql, single)
                raise psycopg.Rollback(tx)
        except psycopg.OperationalError:
            raise
        except psycopg.Error:
            return r.object_id
    return None


def _insert_edges(conn, plan, metadata_id, edges: list[tuple[str, str]], ids: dict[str, int]) -> int:
    if not edges:
        return 0
    missing = {oid for e in edges for oid in e if oid not in ids}
    if missing:
        # objects skipped as duplicates keep their existing rows
        for rid, oid in conn.execute(
            f"SELECT id, object_id FROM {plan.table('city_object')} "
            f"WHERE cj_metadata_id = %s AND object_id = ANY(%s)",
            (metadata_id, sorted(missing)),
        ).fetchall():
            ids[oid] = rid
    cur = conn.execute(
        f"INSERT INTO {plan.table('city_object_relationships')} (parent_id, child_id) "
        f"SELECT * FROM unnest(%s::bigint[], %s::bigint[]) ON CONFLICT DO NOTHING",
        ([ids[p] for p, _ in edges], [ids[c] for _, c in edges]),
    )
    return cur.rowcount


class _Writer:
    """Accumulates prepared features and flushes them in batches."""

    def __init__(self, conn, plan, metadata_id, options: ImportOptions, stats: ImportStats):
        self.conn, self.plan, self.metadata_id = conn, plan, metadata_id
        self.options, self.stats = options, stats
        self.pending: list[PreparedFeature] = []
        self.n_rows = 0
        self._ids: dict[str, int] = {}

    def add(self, pf: PreparedFeature):
        self.pending.append(pf)
        self.n_rows += len(pf)
        if self.n_rows >= self.options.batch_size:
            self.flush()

    def flush(self):
        if not self.pending:
            return
        rows = [r for pf in self.pending for r in pf.rows]
        edges = [e for pf in self.pending for e in pf.edges]
        for start in range(0, len(rows), self.options.batch_size):
            chunk = rows[start:start + self.options.batch_size]
            ids = batch_insert(self.conn, self.plan, self.metadata_id, chunk, self.options.on_conflict)
            self.stats.objects_written += len(ids)
            self.stats.duplicates += len(chunk) - len(ids)
            self._ids.update(ids)
        self.stats.relationships_written += _insert_edges(
            self.conn, self.plan, self.metadata_id, edges, self._ids
        )
        self._ids = {}
        self.pending, self.n_rows = [], 0


def import_features(
    header: SequenceHeader,
    features: Iterable[CityFeature],
    conn,
    plan: sch.SchemaPlan | None = None,
    options: ImportOptions | None = None,
) -> ImportStats:
    options = options or ImportOptions()
    meta = header.metadata
    srid = resolve_srid(meta, options.srid)
    if plan is None:
        plan = sch.SchemaPlan(srid=srid)
    elif plan.srid != srid:
        plan = sch.SchemaPlan(plan.schema_name, srid, plan.attribute_indexes)

    t0 = time.perf_counter()
    stats = ImportStats()
    if sch.schema_exists(conn, plan.schema_name):
        existing = sch.schema_srid(conn, plan.schema_name)
        if existing is not None and existing != srid:
            raise DataError(
                f"schema {plan.schema_name!r} stores SRID {existing}, dataset is SRID {srid}"
            )
    sch.create_schema(conn, plan)

    try:
        with conn.transaction():
            mid, created = _metadata_row(conn, plan, meta, srid, options.source)
            stats.metadata_id = mid
            writer = _Writer(conn, plan, mid, options, stats)
            lo, hi = [math.inf] * 3, [-math.inf] * 3
            for feature in features:
                stats.features_in += 1
                try:
                    pf = prepare_feature(feature, meta.transform, options.horiz_tol, options.elev_tol)
                except StructuralError as exc:
                    if options.on_malformed == "raise":
                        raise
                    log.warning("skipping feature: %s", exc)
                    stats.skipped += 1
                    continue
                stats.fallback_footprints += sum(1 for r in pf.rows if r.footprint and r.footprint.fallback)
                if pf.extent:
                    lo = [min(a, b) for a, b in zip(lo, pf.extent[:3])]
                    hi = [max(a, b) for a, b in zip(hi, pf.extent[3:])]
                writer.add(pf)
            writer.flush()
            if created and meta.bbox is None and lo[0] <= hi[0]:
                _store_extent(conn, plan, mid, lo + hi, srid)
    except psycopg.OperationalError as exc:
        raise TransportError(str(exc)) from exc
    if options.cluster:
        sch.cluster(conn, plan)
    stats.seconds = time.perf_counter() - t0
    return stats


def _store_extent(conn, plan, mid, extent, srid):
    """Record the XY extent recomputed from the vertices (header had none)."""
    conn.execute(
        f"UPDATE {plan.table('cj_metadata')} SET bbox = ST_MakeEnvelope(%s, %s, %s, %s, %s) WHERE id = %s",
        (extent[0], extent[1], extent[3], extent[4], srid, mid),
    )


def import_file(
    source: str | Path | IO,
    conn,
    plan: sch.SchemaPlan | None = None,
    options: ImportOptions | None = None,
) -> ImportStats:
    """Import one CityJSONL file (path, ``-`` for stdin, or open stream)."""
    options = options or ImportOptions()
    if isinstance(source, (str, Path)):
        if options.source is None and str(source) != "-":
            options.source = Path(source).name
        with open_input(source) as fh:
            return _import_stream(fh, conn, plan, options)
    return _import_stream(source, conn, plan, options)


def _import_stream(stream, conn, plan, options) -> ImportStats:
    seq = read_sequence(stream, on_error="raise" if options.on_malformed == "raise" else "skip")
    stats = import_features(seq.header, seq, conn, plan, options)
    stats.skipped += len(seq.errors)
    return stats
