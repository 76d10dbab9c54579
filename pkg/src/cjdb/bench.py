"""Benchmark harness for the eight canonical queries plus size accounting.

Q1-Q5 are reads, Q6-Q8 add, update and delete a ``footprint_area``
attribute. The SQL lives in ``queries/q*.sql``; ``$schema``, ``$attr`` and
``$type_filter`` are filled in per run, everything else is a bound parameter.

Each mutation run executes inside a transaction that is rolled back, with its
prerequisite (Q6 for Q7 and Q8) replayed untimed first, so every sample starts
from the same table state.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field
from importlib import resources
from string import Template

from . import oracle as orc
from . import schema as sch
from .errors import DataError

QUERY_NAMES = ("Q1", "Q2", "Q3", "Q4", "Q5", "Q6", "Q7", "Q8")
MUTATIONS = ("Q6", "Q7", "Q8")
TIMING_MODES = ("client", "server")

DESCRIPTIONS = {
    "Q1": "objects with a numeric attribute above a threshold",
    "Q2": "objects whose footprint intersects a 2D bbox",
    "Q3": "objects whose footprint contains a 2D point",
    "Q4": "number of direct parts per object",
    "Q5": "objects having a geometry of one lod",
    "Q6": "add footprint_area attribute",
    "Q7": "update footprint_area by adding 10",
    "Q8": "delete footprint_area attribute",
}

_PARAM_KEYS = {"attribute", "threshold", "bbox", "point", "lod", "object_type", "dataset"}


@dataclass
class QueryParams:
    """Benchmark parameters; ``bbox``/``point`` left as None are derived from the data.

    JSON form (all keys optional)::

        {"attribute": "h_dak_max", "threshold": 20, "bbox": [xmin, ymin, xmax, ymax],
         "point": [x, y], "lod": "1.2", "object_type": "Building", "dataset": "label"}

    ``object_type`` null runs every query over all objects.
    """

    attribute: str = "h_dak_max"
    threshold: float = 20.0
    bbox: tuple[float, float, float, float] | None = None
    point: tuple[float, float] | None = None
    lod: str = "1.2"
    object_type: str | None = "Building"
    dataset: str | None = None

    def __post_init__(self):
        if self.bbox is not None:
            self.bbox = tuple(float(v) for v in self.bbox)
            if len(self.bbox) != 4 or self.bbox[0] > self.bbox[2] or self.bbox[1] > self.bbox[3]:
                raise DataError(f"bbox must be [xmin, ymin, xmax, ymax], got {list(self.bbox)}")
        if self.point is not None:
            self.point = tuple(float(v) for v in self.point)
            if len(self.point) != 2:
                raise DataError(f"point must be [x, y], got {list(self.point)}")
        if not math.isfinite(float(self.threshold)):
            raise DataError("threshold must be finite")
        self.lod = str(self.lod)

    @classmethod
    def from_json(cls, doc: dict) -> "QueryParams":
        if not isinstance(doc, dict):
            raise DataError("params must be a JSON object")
        unknown = set(doc) - _PARAM_KEYS
        if unknown:
            raise DataError(f"unknown params keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["bbox"] = list(self.bbox) if self.bbox else None
        d["point"] = list(self.point) if self.point else None
        return d

    def specs(self) -> dict[str, orc.QuerySpec]:
        """Oracle specs of the read queries (bbox and point must be set)."""
        t = self.object_type
        return {
            "Q1": orc.AttributeAbove(self.attribute, self.threshold, t),
            "Q2": orc.BBoxIntersects(self.bbox, t),
            "Q3": orc.ContainsPoint(self.point, t),
            "Q4": orc.PartCounts(t),
            "Q5": orc.HasLod(self.lod, t),
        }


def query_template(name: str) -> str:
    return resources.files("cjdb").joinpath("queries").joinpath(f"{name.lower()}.sql").read_text(encoding="utf-8")


def render_query(name: str, schema_name: str, params: QueryParams) -> str:
    """SQL text of one query for a schema; values stay ``%(name)s`` placeholders."""
    sch.SchemaPlan(schema_name)
    type_filter = "type = %(object_type)s" if params.object_type is not None else "true"
    return Template(query_template(name)).substitute(
        schema=schema_name,
        attr=sch.attribute_expr(params.attribute),
        type_filter=type_filter,
    )


def bind_values(params: QueryParams, srid: int | None) -> dict:
    v = {"threshold": params.threshold, "lod": params.lod, "object_type": params.object_type, "srid": srid}
    if params.bbox:
        v.update(zip(("xmin", "ymin", "xmax", "ymax"), params.bbox))
    if params.point:
        v.update(zip(("x", "y"), params.point))
    return v


def derive_params(conn, schema_name: str, params: QueryParams) -> QueryParams:
    """Fill a missing bbox (central window, 1% of the data extent) and point
    (a point inside the first footprint of the queried type)."""
    s = schema_name
    bbox, point = params.bbox, params.point
    if bbox is None:
        row = conn.execute(
            f"SELECT ST_XMin(e), ST_YMin(e), ST_XMax(e), ST_YMax(e) "
            f"FROM (SELECT ST_Extent(ground_geometry) AS e FROM {s}.city_object) x"
        ).fetchone()
        if row[0] is None:
            bbox = (0.0, 0.0, 0.0, 0.0)
        else:
            x0, y0, x1, y1 = row
            cx, cy, hw, hh = (x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 20, (y1 - y0) / 20
            bbox = (cx - hw, cy - hh, cx + hw, cy + hh)
    if point is None:
        type_sql = "type = %s" if params.object_type is not None else "%s::text IS NULL"
        row = conn.execute(
            f"SELECT ST_X(p), ST_Y(p) FROM (SELECT ST_PointOnSurface(ground_geometry) AS p "
            f"FROM {s}.city_object WHERE ground_geometry IS NOT NULL AND {type_sql} ORDER BY id LIMIT 1) x",
            (params.object_type,),
        ).fetchone()
        point = tuple(row) if row else (0.0, 0.0)
    d = params.to_json()
    d.update(bbox=bbox, point=point)
    return QueryParams(**d)


@dataclass
class QueryTiming:
    name: str
    description: str = ""
    runs: int = 0  # executions including warmup
    rows: int = 0
    samples_ms: list[float] = field(default_factory=list)
    skipped: str | None = None

    @property
    def measured(self) -> int:
        return len(self.samples_ms)

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.samples_ms) if self.samples_ms else 0.0

    @property
    def median_ms(self) -> float:
        return statistics.median(self.samples_ms) if self.samples_ms else 0.0

    @property
    def stdev_ms(self) -> float:
        return statistics.stdev(self.samples_ms) if len(self.samples_ms) > 1 else 0.0

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "runs": self.runs,
            "measured": self.measured,
            "rows": self.rows,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "stdev_ms": self.stdev_ms,
            "samples_ms": list(self.samples_ms),
            "skipped": self.skipped,
        }

    @classmethod
    def from_json(cls, d: dict) -> "QueryTiming":
        return cls(d["name"], d.get("description", ""), d["runs"], d["rows"], list(d["samples_ms"]), d.get("skipped"))


@dataclass
class BenchReport:
    dataset: str
    timing: str
    objects: int
    params: dict
    queries: list[QueryTiming]
    sizes: sch.SizeReport

    def query(self, name: str) -> QueryTiming:
        for q in self.queries:
            if q.name == name:
                return q
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "timing": self.timing,
            "objects": self.objects,
            "params": self.params,
            "queries": [q.to_json() for q in self.queries],
            "sizes": self.sizes.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "BenchReport":
        return cls(
            d["dataset"], d["timing"], d["objects"], d["params"],
            [QueryTiming.from_json(q) for q in d["queries"]],
            sch.SizeReport(**d["sizes"]),
        )


def _timed(conn, sql: str, values: dict, timing: str) -> tuple[float, int]:
    """(milliseconds, rows) for one execution."""
    if timing == "server":
        plan = conn.execute("EXPLAIN (ANALYZE, TIMING OFF, FORMAT JSON) " + sql, values).fetchone()[0]
        if isinstance(plan, str):
            plan = json.loads(plan)
        top, node = plan[0], plan[0]["Plan"]
        if node["Node Type"] == "ModifyTable":
            # the update node itself emits nothing; count what its input fed it
            node = node.get("Plans", [node])[0]
        return float(top["Execution Time"]), int(node.get("Actual Rows", 0))
    t0 = time.perf_counter()
    cur = conn.execute(sql, values)
    n = len(cur.fetchall()) if cur.description else cur.rowcount
    return (time.perf_counter() - t0) * 1000, n


def _attribute_present(conn, s: str, params: QueryParams) -> bool:
    type_sql = "type = %s" if params.object_type is not None else "%s::text IS NULL"
    row = conn.execute(
        f"SELECT EXISTS (SELECT 1 FROM {s}.city_object WHERE {type_sql} "
        f"AND {sch.attribute_expr(params.attribute)} IS NOT NULL)",
        (params.object_type,),
    ).fetchone()
    return bool(row[0])


def _run_one(conn, name, sql, values, timing, setup):
    if name not in MUTATIONS:
        return _timed(conn, sql, values, timing)
    with conn.transaction(force_rollback=True):
        for pre in setup:
            conn.execute(pre, values)
        return _timed(conn, sql, values, timing)


def run_benchmark(
    conn,
    params: QueryParams,
    warmup: int = 2,
    measured: int = 5,
    schema_name: str = "cjdb",
    timing: str = "client",
    queries=QUERY_NAMES,
) -> BenchReport:
    """Run the queries ``warmup + measured`` times each and time the last ``measured``."""
    if timing not in TIMING_MODES:
        raise ValueError(f"timing must be one of {TIMING_MODES}")
    if warmup < 0 or measured < 1:
        raise ValueError("need warmup >= 0 and measured >= 1")
    s = schema_name
    if not sch.schema_exists(conn, s):
        raise DataError(f"schema {s!r} does not exist; run cjdb init or cjdb import first")
    sizes = sch.measure_sizes(conn, s)  # before the mutation runs leave dead tuples
    params = derive_params(conn, s, params)
    srid = sch.schema_srid(conn, s)
    values = bind_values(params, srid)
    sql = {n: render_query(n, s, params) for n in QUERY_NAMES}
    setup = {"Q6": [], "Q7": [sql["Q6"]], "Q8": [sql["Q6"]]}
    out = []
    for name in queries:
        qt = QueryTiming(name, DESCRIPTIONS[name])
        if name == "Q1" and not _attribute_present(conn, s, params):
            qt.skipped = f"attribute {params.attribute!r} absent"
            out.append(qt)
            continue
        for i in range(warmup + measured):
            ms, rows = _run_one(conn, name, sql[name], values, timing, setup.get(name, []))
            qt.runs += 1
            qt.rows = rows
            if i >= warmup:
                qt.samples_ms.append(ms)
        out.append(qt)
    objects = conn.execute(f"SELECT count(*) FROM {s}.city_object").fetchone()[0]
    return BenchReport(
        dataset=params.dataset or s,
        timing=timing,
        objects=objects,
        params=params.to_json(),
        queries=out,
        sizes=sizes,
    )


def run_query(conn, name: str, params: QueryParams, schema_name: str = "cjdb"):
    """Execute one query for real (mutations commit).

    Reads return a set of object ids (Q4: a dict id -> count); mutations
    return the number of rows changed.
    """
    s = schema_name
    srid = sch.schema_srid(conn, s)
    cur = conn.execute(render_query(name, s, params), bind_values(params, srid))
    if name in MUTATIONS:
        return cur.rowcount
    rows = cur.fetchall()
    if name == "Q4":
        return {r[0]: r[1] for r in rows}
    return {r[0] for r in rows}


def index_speedup(conn, params: QueryParams, schema_name: str = "cjdb", runs: int = 20,
                  warmup: int = 3, timing: str = "server") -> tuple[float, list[float], list[float]]:
    """Median Q2 time with index scans disabled over median with the index.

    Returns (ratio, indexed_samples_ms, seqscan_samples_ms).
    """
    s = schema_name
    params = derive_params(conn, s, params)
    sql = render_query("Q2", s, params)
    values = bind_values(params, sch.schema_srid(conn, s))
    fast, slow = [], []
    for i in range(warmup + runs):
        ms, _ = _timed(conn, sql, values, timing)
        with conn.transaction(force_rollback=True):
            for knob in ("enable_indexscan", "enable_bitmapscan", "enable_indexonlyscan"):
                conn.execute(f"SET LOCAL {knob} = off")
            slow_ms, _ = _timed(conn, sql, values, timing)
        if i >= warmup:
            fast.append(ms)
            slow.append(slow_ms)
    return statistics.median(slow) / statistics.median(fast), fast, slow


def dump_sql(schema_name: str, params: QueryParams) -> str:
    parts = []
    for name in QUERY_NAMES:
        parts.append(render_query(name, schema_name, params).rstrip() + ";\n")
    return "\n".join(parts)


def _fmt_bytes(n: int) -> str:
    for unit in ("B", "kB", "MB", "GB"):
        if abs(n) < 1024 or unit == "GB":
            return f"{n:.0f} {unit}" if unit == "B" else f"{n:.1f} {unit}"
        n /= 1024
    return str(n)


def emit_report(r: BenchReport, fmt: str = "table") -> str:
    """Render a report; ``json`` output reparses to ``r.to_json()``."""
    if fmt == "json":
        return json.dumps(r.to_json(), indent=2, sort_keys=True) + "\n"
    if fmt != "table":
        raise ValueError("format must be 'table' or 'json'")
    lines = [
        f"dataset: {r.dataset}  objects: {r.objects}  timing: {r.timing}",
        "",
        f"{'query':<6}{'runs':>6}{'measured':>10}{'rows':>9}{'mean_ms':>12}{'median_ms':>12}{'stdev_ms':>12}  description",
    ]
    for q in r.queries:
        if q.skipped:
            lines.append(f"{q.name:<6}{'-':>6}{'-':>10}{'-':>9}{'-':>12}{'-':>12}{'-':>12}  skipped: {q.skipped}")
            continue
        lines.append(
            f"{q.name:<6}{q.runs:>6}{q.measured:>10}{q.rows:>9}{q.mean_ms:>12.3f}{q.median_ms:>12.3f}"
            f"{q.stdev_ms:>12.3f}  {q.description}"
        )
    z = r.sizes
    lines += [
        "",
        f"{'tables':>12}{'indexes':>12}{'TOAST':>12}{'total':>12}",
        f"{_fmt_bytes(z.tables):>12}{_fmt_bytes(z.indexes):>12}{_fmt_bytes(z.toast):>12}{_fmt_bytes(z.total):>12}",
    ]
    return "\n".join(lines) + "\n"
