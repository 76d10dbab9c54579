"""Brute-force reference answers for the read queries Q1-Q5.

Everything is evaluated in memory over parsed features, with footprints
computed by the same code path the importer uses, so a mismatch with the
database points at the SQL or the storage layer rather than at footprint
tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Union

from shapely.geometry import Point, box

from .footprint import DEFAULT_ELEV_TOL, DEFAULT_HORIZ_TOL
from .importer import CityObjectRow, PreparedFeature, prepare_feature
from .model import CityFeature, Transform


@dataclass(frozen=True)
class AttributeAbove:
    """Q1: objects whose numeric attribute at ``path`` exceeds ``threshold``."""

    path: str
    threshold: float
    object_type: str | None = "Building"
    name = "Q1"


@dataclass(frozen=True)
class BBoxIntersects:
    """Q2: objects whose footprint intersects the XY box."""

    bbox: tuple[float, float, float, float]
    object_type: str | None = "Building"
    name = "Q2"


@dataclass(frozen=True)
class ContainsPoint:
    """Q3: objects whose footprint contains the XY point."""

    point: tuple[float, float]
    object_type: str | None = "Building"
    name = "Q3"


@dataclass(frozen=True)
class PartCounts:
    """Q4: object id -> number of direct children, zeros included."""

    object_type: str = "Building"
    name = "Q4"


@dataclass(frozen=True)
class HasLod:
    """Q5: objects carrying a geometry whose lod is exactly ``lod``."""

    lod: str
    object_type: str | None = "Building"
    name = "Q5"


QuerySpec = Union[AttributeAbove, BBoxIntersects, ContainsPoint, PartCounts, HasLod]


def lookup(doc, path: str):
    """Value at a dotted key path, or None when any step is missing."""
    for key in (k for k in path.split(".") if k):
        if not isinstance(doc, dict) or key not in doc:
            return None
        doc = doc[key]
    return doc


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _numeric_gt(value, threshold) -> bool:
    # jsonb compares numbers as exact decimals; do the same
    if threshold == math.inf:
        return False
    if threshold == -math.inf:
        return True
    return Decimal(repr(value)) > Decimal(repr(float(threshold)))


def oracle_rows(features: Iterable[CityFeature | PreparedFeature], transform: Transform,
                horiz_tol: float = DEFAULT_HORIZ_TOL, elev_tol: float = DEFAULT_ELEV_TOL):
    """(rows, edges) of a corpus: rows as the importer would write them."""
    rows: list[CityObjectRow] = []
    edges: list[tuple[str, str]] = []
    for f in features:
        pf = f if isinstance(f, PreparedFeature) else prepare_feature(f, transform, horiz_tol, elev_tol)
        rows.extend(pf.rows)
        edges.extend(pf.edges)
    return rows, edges


class Oracle:
    """Answers queries over a fixed corpus; footprints are built once."""

    def __init__(self, features: Iterable[CityFeature | PreparedFeature], transform: Transform, **tol):
        self.rows, self.edges = oracle_rows(features, transform, **tol)
        self._shapes = {}
        for r in self.rows:
            if r.footprint is not None:
                self._shapes[r.object_id] = r.footprint.geometry

    def _typed(self, object_type):
        return [r for r in self.rows if object_type is None or r.type == object_type]

    def eval(self, q: QuerySpec):
        if isinstance(q, AttributeAbove):
            out = set()
            for r in self._typed(q.object_type):
                v = lookup(r.attributes, q.path)
                if _is_number(v) and _numeric_gt(v, q.threshold):
                    out.add(r.object_id)
            return out
        if isinstance(q, BBoxIntersects):
            window = box(*q.bbox)
            return {
                r.object_id for r in self._typed(q.object_type)
                if r.object_id in self._shapes and self._shapes[r.object_id].intersects(window)
            }
        if isinstance(q, ContainsPoint):
            pt = Point(*q.point)
            return {
                r.object_id for r in self._typed(q.object_type)
                if r.object_id in self._shapes and self._shapes[r.object_id].contains(pt)
            }
        if isinstance(q, PartCounts):
            counts = {r.object_id: 0 for r in self._typed(q.object_type)}
            for parent, _child in set(self.edges):
                if parent in counts:
                    counts[parent] += 1
            return counts
        if isinstance(q, HasLod):
            return {
                r.object_id for r in self._typed(q.object_type)
                if any(isinstance(g, dict) and g.get("lod") == q.lod for g in r.geometry)
            }
        raise TypeError(f"not a read query spec: {q!r}")


def oracle_eval(q: QuerySpec, features, transform: Transform):
    """One-shot evaluation; build an :class:`Oracle` to answer many queries."""
    return Oracle(features, transform).eval(q)
