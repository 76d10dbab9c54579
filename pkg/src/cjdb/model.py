"""CityJSON domain types and the vertex (de)referencing transforms.

Geometries are kept as plain JSON dicts so that members this package does
not interpret (``texture``, ``material``, extension keys) survive untouched.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Any, Callable, Iterable

from .errors import StructuralError

MAX_PRECISION = 15

# number of array levels above the vertex index in ``boundaries``
BOUNDARY_DEPTH = {
    "MultiPoint": 1,
    "MultiLineString": 2,
    "MultiSurface": 3,
    "CompositeSurface": 3,
    "Solid": 4,
    "MultiSolid": 5,
    "CompositeSolid": 5,
    "GeometryInstance": 1,
}

# array levels of ``semantics.values``: boundaries minus ring and vertex levels
SEMANTICS_DEPTH = {
    "MultiPoint": 1,
    "MultiLineString": 1,
    "MultiSurface": 1,
    "CompositeSurface": 1,
    "Solid": 2,
    "MultiSolid": 3,
    "CompositeSolid": 3,
}

GEOMETRY_TYPES = frozenset(BOUNDARY_DEPTH)


def scale_precision(scale: float) -> int:
    """Decimal digits implied by a quantization step (0.001 -> 3)."""
    exponent = Decimal(repr(float(scale))).normalize().as_tuple().exponent
    return max(0, min(MAX_PRECISION, -int(exponent)))


@dataclass(frozen=True)
class Transform:
    scale: tuple[float, float, float]
    translate: tuple[float, float, float]

    def __post_init__(self):
        if len(self.scale) != 3 or len(self.translate) != 3:
            raise StructuralError("transform scale and translate must have 3 components")
        if not all(math.isfinite(s) and s > 0 for s in self.scale):
            raise StructuralError(f"transform scale must be positive, got {list(self.scale)}")
        if not all(math.isfinite(t) for t in self.translate):
            raise StructuralError(f"transform translate must be finite, got {list(self.translate)}")
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "translate", tuple(float(t) for t in self.translate))

    @property
    def precision(self) -> tuple[int, int, int]:
        return tuple(scale_precision(s) for s in self.scale)

    @classmethod
    def identity(cls) -> "Transform":
        return cls((1.0, 1.0, 1.0), (0.0, 0.0, 0.0))

    @classmethod
    def from_json(cls, doc: dict) -> "Transform":
        try:
            return cls(tuple(doc["scale"]), tuple(doc["translate"]))
        except (KeyError, TypeError) as exc:
            raise StructuralError(f"invalid transform object: {doc!r}") from exc

    def to_json(self) -> dict:
        return {"scale": list(self.scale), "translate": list(self.translate)}


@dataclass
class CityObject:
    type: str
    attributes: dict = field(default_factory=dict)
    geometry: list[dict] = field(default_factory=list)
    children: list[str] = field(default_factory=list)
    parents: list[str] = field(default_factory=list)
    # members other than the five above, passed through verbatim
    extra: dict = field(default_factory=dict)

    _KNOWN = ("type", "attributes", "geometry", "children", "parents")

    @classmethod
    def from_json(cls, doc: dict, object_id: str = "?") -> "CityObject":
        if not isinstance(doc, dict) or "type" not in doc:
            raise StructuralError(f"city object {object_id!r} lacks a type", object_id)
        attributes = doc.get("attributes") or {}
        if not isinstance(attributes, dict):
            raise StructuralError(f"attributes of {object_id!r} must be a JSON object", object_id)
        return cls(
            type=doc["type"],
            attributes=attributes,
            geometry=list(doc.get("geometry") or []),
            children=list(doc.get("children") or []),
            parents=list(doc.get("parents") or []),
            extra={k: v for k, v in doc.items() if k not in cls._KNOWN},
        )

    def to_json(self) -> dict:
        doc: dict[str, Any] = {"type": self.type}
        if self.attributes:
            doc["attributes"] = self.attributes
        doc["geometry"] = self.geometry
        if self.children:
            doc["children"] = self.children
        if self.parents:
            doc["parents"] = self.parents
        doc.update(self.extra)
        return doc


@dataclass
class CityFeature:
    id: str
    city_objects: dict[str, CityObject]
    vertices: list[list[int]]
    appearance: dict | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, doc: dict) -> "CityFeature":
        try:
            fid = doc["id"]
            objects = doc["CityObjects"]
            vertices = doc["vertices"]
        except (KeyError, TypeError) as exc:
            raise StructuralError(f"feature lacks required member {exc}") from exc
        if not isinstance(objects, dict) or not isinstance(vertices, list):
            raise StructuralError("CityObjects must be an object and vertices an array", fid)
        if fid not in objects:
            raise StructuralError(f"feature id {fid!r} is not a key of CityObjects", fid)
        return cls(
            id=fid,
            city_objects={oid: CityObject.from_json(o, oid) for oid, o in objects.items()},
            vertices=vertices,
            appearance=doc.get("appearance"),
            extra={
                k: v for k, v in doc.items()
                if k not in ("type", "id", "CityObjects", "vertices", "appearance")
            },
        )

    def to_json(self) -> dict:
        doc = {
            "type": "CityJSONFeature",
            "id": self.id,
            "CityObjects": {oid: o.to_json() for oid, o in self.city_objects.items()},
            "vertices": self.vertices,
        }
        if self.appearance is not None:
            doc["appearance"] = self.appearance
        doc.update(self.extra)
        return doc

    def validate(self) -> None:
        """Raise :class:`StructuralError` on the first broken invariant."""
        if self.id not in self.city_objects:
            raise StructuralError(f"feature id {self.id!r} is not a key of CityObjects", self.id)
        n = len(self.vertices)
        for v in self.vertices:
            if len(v) != 3 or not all(isinstance(c, int) and not isinstance(c, bool) for c in v):
                raise StructuralError(f"vertex {v!r} is not an integer triple", self.id)
        for oid, obj in self.city_objects.items():
            for g in obj.geometry:
                check_geometry(g, n, self.id)
            for child in obj.children:
                if child not in self.city_objects:
                    raise StructuralError(f"{oid!r} lists unknown child {child!r}", self.id)
                if oid not in self.city_objects[child].parents:
                    raise StructuralError(f"child {child!r} does not list parent {oid!r}", self.id)
            for parent in obj.parents:
                if parent not in self.city_objects:
                    raise StructuralError(f"{oid!r} lists unknown parent {parent!r}", self.id)
                if oid not in self.city_objects[parent].children:
                    raise StructuralError(f"parent {parent!r} does not list child {oid!r}", self.id)

    def edges(self) -> list[tuple[str, str]]:
        """Direct parent -> child links, from both ``children`` and ``parents``."""
        seen: dict[tuple[str, str], None] = {}
        for oid, obj in self.city_objects.items():
            for child in obj.children:
                seen[(oid, child)] = None
        for oid, obj in self.city_objects.items():
            for parent in obj.parents:
                seen[(parent, oid)] = None
        return list(seen)


_EPSG = re.compile(r"(?:EPSG/\d+/|EPSG::?|epsg:)(\d+)\s*$", re.IGNORECASE)


def parse_srid(reference_system: str | None) -> int | None:
    """EPSG code from a CityJSON ``referenceSystem`` URL/URN, or None."""
    if not reference_system:
        return None
    m = _EPSG.search(str(reference_system))
    return int(m.group(1)) if m else None


@dataclass
class DatasetMetadata:
    version: str
    transform: Transform
    crs_srid: int | None = None
    geometry_templates: dict | None = None
    extensions: dict | None = None
    bbox: tuple[float, float, float, float, float, float] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bbox is not None:
            self.bbox = tuple(float(v) for v in self.bbox)
            if len(self.bbox) != 6 or any(self.bbox[i] > self.bbox[i + 3] for i in range(3)):
                raise StructuralError(f"invalid bounding box {list(self.bbox)}")

    @classmethod
    def from_header(cls, header: dict) -> "DatasetMetadata":
        if "transform" not in header:
            raise StructuralError("header has no transform")
        meta = header.get("metadata") or {}
        extent = meta.get("geographicalExtent")
        return cls(
            version=str(header.get("version", "")),
            transform=Transform.from_json(header["transform"]),
            crs_srid=parse_srid(meta.get("referenceSystem")),
            geometry_templates=header.get("geometry-templates"),
            extensions=header.get("extensions"),
            bbox=tuple(extent) if extent else None,
            metadata=meta,
        )


# --- boundary walking ---------------------------------------------------------

def _map_leaves(node, depth: int, fn: Callable):
    if depth == 0:
        return fn(node)
    return [_map_leaves(child, depth - 1, fn) for child in node]


def iter_leaves(node, depth: int) -> Iterable:
    if depth == 0:
        yield node
        return
    for child in node:
        yield from iter_leaves(child, depth - 1)


def boundary_depth(g: dict) -> int:
    try:
        return BOUNDARY_DEPTH[g["type"]]
    except KeyError as exc:
        raise StructuralError(f"unknown geometry type {g.get('type')!r}") from exc


def _check_nesting(node, depth: int, is_leaf: Callable[[Any], bool], fid, what: str) -> None:
    if depth == 0:
        if not is_leaf(node):
            raise StructuralError(f"{what}: expected a vertex reference, got {node!r}", fid)
        return
    if not isinstance(node, list):
        raise StructuralError(f"{what}: nesting too shallow at {node!r}", fid)
    for child in node:
        _check_nesting(child, depth - 1, is_leaf, fid, what)


def _is_index(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def check_geometry(g: dict, n_vertices: int | None = None, feature_id: str | None = None) -> None:
    """Validate boundary nesting, vertex indices and semantics shape of a
    geometry that still holds vertex indices."""
    depth = boundary_depth(g)
    if g["type"] != "GeometryInstance" and "lod" not in g:
        raise StructuralError(f"{g['type']} geometry without lod", feature_id)
    boundaries = g.get("boundaries")
    _check_nesting(boundaries, depth, _is_index, feature_id, g["type"])
    if n_vertices is not None:
        for i in iter_leaves(boundaries, depth):
            if not 0 <= i < n_vertices:
                raise StructuralError(
                    f"vertex index {i} out of range ({n_vertices} vertices)", feature_id, i
                )
    if g["type"] == "GeometryInstance":
        if len(boundaries) != 1:
            raise StructuralError("GeometryInstance must reference exactly one vertex", feature_id)
        if not _is_index(g.get("template")):
            raise StructuralError("GeometryInstance without template index", feature_id)
    sem = g.get("semantics")
    if sem is not None:
        _check_semantics(g, sem, feature_id)


def _check_semantics(g: dict, sem: dict, fid) -> None:
    surfaces = sem.get("surfaces", [])
    values = sem.get("values")
    sdepth = SEMANTICS_DEPTH[g["type"]]

    def walk(b, v, depth):
        if v is None:
            return
        if depth == 0:
            if not _is_index(v) or not 0 <= v < len(surfaces):
                raise StructuralError(f"semantic value {v!r} is not an index into surfaces", fid)
            return
        if not isinstance(v, list) or len(v) != len(b):
            raise StructuralError("semantics values do not mirror boundaries", fid)
        for bb, vv in zip(b, v):
            walk(bb, vv, depth - 1)

    walk(g["boundaries"], values, sdepth)


# --- dereference / requantize ---------------------------------------------------

def dereference_geometry(
    g: dict, vertices: list, transform: Transform, feature_id: str | None = None
) -> dict:
    """Copy of ``g`` whose vertex indices are replaced by real coordinates.

    Each component is ``v * scale + translate`` rounded to the precision
    implied by the scale. Every other member (semantics, template, ...) is
    shared with the input, not copied.
    """
    depth = boundary_depth(g)
    (sx, sy, sz), (tx, ty, tz) = transform.scale, transform.translate
    px, py, pz = transform.precision
    n = len(vertices)

    def coord(i):
        if not _is_index(i) or not 0 <= i < n:
            raise StructuralError(
                f"vertex index {i!r} out of range ({n} vertices)", feature_id, i
            )
        x, y, z = vertices[i]
        return [round(x * sx + tx, px), round(y * sy + ty, py), round(z * sz + tz, pz)]

    out = dict(g)
    out["boundaries"] = _map_leaves(g["boundaries"], depth, coord)
    return out


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


class VertexPool:
    """Deduplicating vertex list; indices are assigned in first-seen order."""

    def __init__(self):
        self._index: dict[tuple[int, int, int], int] = {}
        self.vertices: list[list[int]] = []

    def __len__(self):
        return len(self.vertices)

    def add(self, triple: tuple[int, int, int]) -> int:
        i = self._index.get(triple)
        if i is None:
            i = self._index[triple] = len(self.vertices)
            self.vertices.append(list(triple))
        return i


def quantize(coord, transform: Transform) -> tuple[int, int, int]:
    if len(coord) != 3:
        raise StructuralError(f"coordinate {coord!r} is not a 3D triple")
    out = []
    for c, s, t in zip(coord, transform.scale, transform.translate):
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c):
            raise StructuralError(f"non-finite coordinate {coord!r}")
        out.append(_round_half_away((c - t) / s))
    return tuple(out)


def requantize_geometry(g: dict, transform: Transform, pool: VertexPool) -> dict:
    """Inverse of :func:`dereference_geometry`: real coordinates back to
    indices into ``pool`` (shared by all geometries of one feature)."""
    depth = boundary_depth(g)
    out = dict(g)
    out["boundaries"] = _map_leaves(
        g["boundaries"], depth, lambda c: pool.add(quantize(c, transform))
    )
    return out
