"""2D ground footprints of city objects.

The footprint of a geometry is the XY projection of its horizontal surfaces
lying at the lowest elevation; objects with several LoDs use the lowest one.
When no horizontal surface exists the XY bounding rectangle is used instead
and the result is flagged as a fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import shapely
from shapely.geometry import MultiPolygon, Polygon, box
from shapely.geometry.polygon import orient

from .model import CityObject, boundary_depth, iter_leaves

DEFAULT_HORIZ_TOL = 0.98
DEFAULT_ELEV_TOL = 0.1
# side of the square standing in for point-like geometry
DEGENERATE_SIZE = 0.01
_MIN_NORMAL = 1e-12


class TemplateOnly(ValueError):
    """Every candidate geometry is a GeometryInstance."""


@dataclass
class Footprint:
    geometry: MultiPolygon
    source_lod: str | None = None
    fallback: bool = False
    area: float = field(init=False)

    def __post_init__(self):
        self.geometry = _as_multipolygon(self.geometry)
        self.area = shoelace_area(self.polygons)

    @property
    def polygons(self) -> list[list[list[tuple[float, float]]]]:
        """Each polygon as ``[exterior, *holes]``, rings closed, exterior CCW."""
        out = []
        for poly in self.geometry.geoms:
            poly = orient(poly, 1.0)
            out.append([list(poly.exterior.coords)] + [list(r.coords) for r in poly.interiors])
        return out

    def to_wkb_hex(self, srid: int | None = None) -> str:
        geom = shapely.set_srid(self.geometry, srid) if srid else self.geometry
        return shapely.to_wkb(geom, hex=True, include_srid=bool(srid))


def ring_area(ring: Sequence[Sequence[float]]) -> float:
    """Signed shoelace area of a 2D ring (closed or open)."""
    n = len(ring)
    if n < 3:
        return 0.0
    x0, y0 = ring[0][0], ring[0][1]
    s = 0.0
    for i in range(n):
        xa, ya = ring[i][0] - x0, ring[i][1] - y0
        xb, yb = ring[(i + 1) % n][0] - x0, ring[(i + 1) % n][1] - y0
        s += xa * yb - xb * ya
    return s / 2.0


def shoelace_area(polygons) -> float:
    return sum(abs(ring_area(p[0])) - sum(abs(ring_area(h)) for h in p[1:]) for p in polygons)


def _as_multipolygon(geom) -> MultiPolygon:
    # make_valid/union can yield collections mixing polygons and slivers
    polys = []

    def collect(g):
        if isinstance(g, Polygon):
            if g.area > 0:
                polys.append(g)
        elif hasattr(g, "geoms"):
            for part in g.geoms:
                collect(part)

    collect(geom)
    return MultiPolygon(polys)


# --- LoD selection ---------------------------------------------------------------

def lod_key(lod) -> tuple:
    """Sort key: dotted numeric components compare as integers, anything
    else lexicographically after numbers ("1.2" < "1.10" < "2" < "2.x")."""
    key = []
    for part in str(lod).split("."):
        key.append((0, int(part), "") if part.isdigit() else (1, 0, part))
    return tuple(key)


def select_lowest_lod(geoms: Sequence[dict]) -> dict:
    """Geometry with the smallest LoD; first occurrence wins ties."""
    if not geoms:
        raise ValueError("no geometries to choose from")
    candidates = [g for g in geoms if g.get("type") != "GeometryInstance" and "lod" in g]
    if not candidates:
        raise TemplateOnly("only GeometryInstance geometries")
    return min(candidates, key=lambda g: lod_key(g["lod"]))


# --- surfaces ---------------------------------------------------------------------

def iter_surfaces(g: dict) -> Iterable[list]:
    """Surfaces (lists of rings of 3D points) of a dereferenced geometry."""
    t = g["type"]
    b = g.get("boundaries") or []
    if t in ("MultiSurface", "CompositeSurface"):
        yield from b
    elif t == "Solid":
        for shell in b:
            yield from shell
    elif t in ("MultiSolid", "CompositeSolid"):
        for solid in b:
            for shell in solid:
                yield from shell


def newell_normal(ring: Sequence[Sequence[float]]) -> tuple[float, float, float]:
    """Unnormalized Newell normal; its length is twice the ring area."""
    n = len(ring)
    if n < 3:
        return 0.0, 0.0, 0.0
    ox, oy, oz = ring[0][0], ring[0][1], ring[0][2]
    nx = ny = nz = 0.0
    for i in range(n):
        x0, y0, z0 = ring[i][0] - ox, ring[i][1] - oy, ring[i][2] - oz
        j = (i + 1) % n
        x1, y1, z1 = ring[j][0] - ox, ring[j][1] - oy, ring[j][2] - oz
        nx += (y0 - y1) * (z0 + z1)
        ny += (z0 - z1) * (x0 + x1)
        nz += (x0 - x1) * (y0 + y1)
    return nx, ny, nz


def _open_ring(ring):
    if len(ring) > 1 and list(ring[0]) == list(ring[-1]):
        return ring[:-1]
    return ring


def _polygon_xy(surface) -> Polygon:
    shell = [(p[0], p[1]) for p in _open_ring(surface[0])]
    holes = [[(p[0], p[1]) for p in _open_ring(r)] for r in surface[1:]]
    holes = [h for h in holes if len(h) >= 3]
    poly = Polygon(shell, holes)
    if not poly.is_valid:
        poly = shapely.make_valid(poly)
    return poly


def _all_points(g: dict) -> list:
    return list(iter_leaves(g.get("boundaries") or [], boundary_depth(g)))


def bbox_footprint(points, source_lod=None) -> Footprint:
    """XY bounding rectangle; zero extents are padded to ``DEGENERATE_SIZE``."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    xmin, xmax, ymin, ymax = min(xs), max(xs), min(ys), max(ys)
    half = DEGENERATE_SIZE / 2
    if xmax - xmin <= 0:
        xmin, xmax = xmin - half, xmax + half
    if ymax - ymin <= 0:
        ymin, ymax = ymin - half, ymax + half
    return Footprint(MultiPolygon([box(xmin, ymin, xmax, ymax)]), source_lod, fallback=True)


def extract_footprint(
    g: dict, horiz_tol: float = DEFAULT_HORIZ_TOL, elev_tol: float = DEFAULT_ELEV_TOL
) -> Footprint:
    """Footprint of one dereferenced geometry.

    Surfaces whose unit normal has ``|n_z| >= horiz_tol`` are candidates; of
    those, the ones whose mean elevation lies within ``elev_tol`` of the
    lowest candidate are projected to XY and unioned.
    """
    if not 0 < horiz_tol <= 1:
        raise ValueError("horiz_tol must be in (0, 1]")
    if elev_tol < 0:
        raise ValueError("elev_tol must be >= 0")
    lod = str(g["lod"]) if "lod" in g else None
    horizontal = []
    for surface in iter_surfaces(g):
        if not surface:
            continue
        ext = _open_ring(surface[0])
        nx, ny, nz = newell_normal(ext)
        norm = math.sqrt(nx * nx + ny * ny + nz * nz)
        if norm <= _MIN_NORMAL or abs(nz) / norm < horiz_tol:
            continue
        elevation = sum(p[2] for p in ext) / len(ext)
        horizontal.append((elevation, surface))

    if horizontal:
        lowest = min(e for e, _ in horizontal)
        parts = [_polygon_xy(s) for e, s in horizontal if e - lowest <= elev_tol]
        merged = shapely.union_all([p for p in parts if not p.is_empty])
        fp = Footprint(merged, lod)
        if fp.area > 0:
            return fp
    points = _all_points(g)
    if not points:
        raise ValueError("geometry has no vertices")
    return bbox_footprint(points, lod)


def footprint_for_object(
    obj: CityObject | Sequence[dict],
    horiz_tol: float = DEFAULT_HORIZ_TOL,
    elev_tol: float = DEFAULT_ELEV_TOL,
) -> Footprint | None:
    """Footprint from the lowest-LoD geometry of a dereferenced object;
    None when the object carries no geometry."""
    geoms = obj.geometry if isinstance(obj, CityObject) else list(obj)
    if not geoms:
        return None
    try:
        g = select_lowest_lod(geoms)
    except TemplateOnly:
        # reference points only; templates are not instantiated
        points = [p for gi in geoms for p in _all_points(gi)]
        return bbox_footprint(points) if points else None
    return extract_footprint(g, horiz_tol, elev_tol)
