"""Deterministic synthetic city generator.

Buildings are axis-aligned extruded rectangles laid out on a grid, with flat
or gabled roofs, optionally split into BuildingParts. Coordinates are
integers in millimetres (scale 0.001), so footprint areas are known exactly.

Randomness comes from ``random.Random(seed)`` (MT19937) and only its
``random()`` draws are used, so output is byte-identical across platforms
and Python versions for a given seed.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import IO, Iterator, Sequence

from .model import VertexPool

SRID = 7415
TRANSLATE = (85000.0, 446000.0, 0.0)
SCALE = (0.001, 0.001, 0.001)
CELL = 40_000  # grid spacing, mm
ROOF_HEIGHT_KEY = "h_dak_max"

SEMANTIC_SURFACES = [{"type": "GroundSurface"}, {"type": "WallSurface"}, {"type": "RoofSurface"}]


@dataclass
class _Block:
    """One rectangle to extrude (a building without parts, or a part)."""

    x0: int
    y0: int
    x1: int
    y1: int
    z0: int
    eave: int
    ridge: int
    gable: bool

    @property
    def width(self) -> float:
        return (self.x1 - self.x0) / 1000

    @property
    def depth(self) -> float:
        return (self.y1 - self.y0) / 1000

    def attributes(self) -> dict:
        return {
            ROOF_HEIGHT_KEY: (self.ridge - self.z0) / 1000,
            "h_maaiveld": self.z0 / 1000,
            "roof_type": "gable" if self.gable else "flat",
            "footprint_width": self.width,
            "footprint_depth": self.depth,
        }


def _box_faces(b: _Block, top: int, gable: bool):
    p = [
        (b.x0, b.y0, b.z0), (b.x1, b.y0, b.z0), (b.x1, b.y1, b.z0), (b.x0, b.y1, b.z0),
        (b.x0, b.y0, top), (b.x1, b.y0, top), (b.x1, b.y1, top), (b.x0, b.y1, top),
    ]
    floor = [p[0], p[3], p[2], p[1]]
    south = [p[0], p[1], p[5], p[4]]
    north = [p[2], p[3], p[7], p[6]]
    if not gable:
        east = [p[1], p[2], p[6], p[5]]
        west = [p[3], p[0], p[4], p[7]]
        roof = [[p[4], p[5], p[6], p[7]]]
    else:
        ym = (b.y0 + b.y1) // 2
        r0, r1 = (b.x0, ym, b.ridge), (b.x1, ym, b.ridge)
        east = [p[1], p[2], p[6], r1, p[5]]
        west = [p[3], p[0], p[4], r0, p[7]]
        roof = [[p[4], p[5], r1, r0], [p[6], p[7], r0, r1]]
    faces = [floor, south, east, north, west] + roof
    values = [0, 1, 1, 1, 1] + [2] * len(roof)
    return faces, values


def _geometry(b: _Block, lod: str, pool: VertexPool) -> dict:
    def idx(ring):
        return [pool.add(v) for v in ring]

    major = lod.split(".")[0]
    if major == "0":
        ring = [(b.x0, b.y0, b.z0), (b.x1, b.y0, b.z0), (b.x1, b.y1, b.z0), (b.x0, b.y1, b.z0)]
        return {"type": "MultiSurface", "lod": lod, "boundaries": [[idx(ring)]]}
    if major == "1":
        faces, values = _box_faces(b, b.ridge if not b.gable else b.eave, False)
    else:
        faces, values = _box_faces(b, b.eave if b.gable else b.ridge, b.gable)
    return {
        "type": "Solid",
        "lod": lod,
        "boundaries": [[[idx(f)] for f in faces]],
        "semantics": {"surfaces": SEMANTIC_SURFACES, "values": [values]},
    }


def _tree_template() -> dict:
    # a crude crown: square pyramid on a 1 m base, local coordinates in metres
    verts = [[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, 6.0]]
    faces = [[[0, 3, 2, 1]], [[0, 1, 4]], [[1, 2, 4]], [[2, 3, 4]], [[3, 0, 4]]]
    return {
        "templates": [{"type": "MultiSurface", "lod": "2", "boundaries": faces}],
        "vertices-templates": verts,
    }


_IDENTITY = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]


def _mm(rng: random.Random, lo: int, hi: int) -> int:
    return lo + int(rng.random() * (hi - lo))


def _parts_counts(rng, n, parts_ratio, parts_total):
    if parts_total is not None:
        base, extra = divmod(parts_total, n) if n else (0, 0)
        order = sorted(range(n), key=lambda i: rng.random())
        bonus = set(order[:extra])
        return [base + (1 if i in bonus else 0) for i in range(n)]
    counts = []
    for _ in range(n):
        u = rng.random() * 2 * parts_ratio
        k = math.floor(u)
        counts.append(k + (1 if rng.random() < u - k else 0))
    return counts


def generate_city(
    seed: int,
    n_buildings: int,
    parts_ratio: float = 0.0,
    lods: Sequence[str] = ("1.2", "2.2"),
    vegetation: int = 0,
    parts_total: int | None = None,
    version: str = "2.0",
) -> Iterator[dict]:
    """Yield the header then one CityJSONFeature dict per building/tree.

    Each building gets on average ``parts_ratio`` BuildingParts (exactly
    ``parts_total`` overall when given). Buildings with parts carry no
    geometry of their own; parts and part-less buildings carry one
    geometry per entry of ``lods``.
    """
    if n_buildings < 0:
        raise ValueError("n_buildings must be >= 0")
    if not 0 <= parts_ratio <= 5:
        raise ValueError("parts_ratio must be within [0, 5]")
    lods = [str(lod) for lod in lods]
    rng = random.Random(seed)
    cols = max(1, math.ceil(math.sqrt(max(n_buildings, vegetation, 1))))
    counts = _parts_counts(rng, n_buildings, parts_ratio, parts_total)

    buildings = []
    for i in range(n_buildings):
        cx, cy = (i % cols) * CELL, (i // cols) * CELL
        w, d = _mm(rng, 8_000, 24_000), _mm(rng, 8_000, 24_000)
        x0, y0 = cx + _mm(rng, 1_000, CELL - w - 1_000), cy + _mm(rng, 1_000, CELL - d - 1_000)
        z0 = _mm(rng, 0, 2_000)
        year = 1850 + int(rng.random() * 170)
        blocks = []
        k = counts[i]
        for j in range(max(k, 1)):
            bx0 = x0 + (w * j) // max(k, 1)
            bx1 = x0 + (w * (j + 1)) // max(k, 1)
            eave = z0 + _mm(rng, 3_000, 30_000)
            gable = rng.random() < 0.5
            ridge = eave + _mm(rng, 1_000, 5_000) if gable else eave
            blocks.append(_Block(bx0, y0, bx1, y0 + d, z0, eave, ridge, gable))
        buildings.append((year, k, blocks))

    trees = []
    for t in range(vegetation):
        cx, cy = (t % cols) * CELL, (t // cols) * CELL
        trees.append((cx + 500, cy + 500, _mm(rng, 0, 2_000), round(4 + rng.random() * 16, 1)))

    header = {
        "type": "CityJSON",
        "version": version,
        "transform": {"scale": list(SCALE), "translate": list(TRANSLATE)},
        "metadata": {
            "title": f"synthetic city (seed {seed})",
            "referenceSystem": f"https://www.opengis.net/def/crs/EPSG/0/{SRID}",
        },
        "CityObjects": {},
        "vertices": [],
    }
    extent = _extent(buildings, trees)
    if extent:
        header["metadata"]["geographicalExtent"] = extent
    if vegetation:
        header["geometry-templates"] = _tree_template()
    yield header

    for i, (year, k, blocks) in enumerate(buildings):
        yield _building_feature(seed, i, year, k, blocks, lods)
    for t, (x, y, z, h) in enumerate(trees):
        tid = f"T{seed}-{t:06d}"
        yield {
            "type": "CityJSONFeature",
            "id": tid,
            "CityObjects": {
                tid: {
                    "type": "SolitaryVegetationObject",
                    "attributes": {"species": "Tilia", "height": h},
                    "geometry": [{
                        "type": "GeometryInstance",
                        "template": 0,
                        "boundaries": [0],
                        "transformationMatrix": _IDENTITY,
                    }],
                }
            },
            "vertices": [[x, y, z]],
        }


def _building_feature(seed, i, year, k, blocks, lods) -> dict:
    bid = f"B{seed}-{i:06d}"
    pool = VertexPool()
    objects = {}
    whole = _Block(blocks[0].x0, blocks[0].y0, blocks[-1].x1, blocks[0].y1, blocks[0].z0,
                   max(b.eave for b in blocks), max(b.ridge for b in blocks), False)
    attrs = whole.attributes()
    del attrs["roof_type"]
    attrs["bouwjaar"] = year
    building = {"type": "Building", "attributes": attrs, "geometry": []}
    objects[bid] = building
    if k == 0:
        b = blocks[0]
        building["attributes"] = dict(b.attributes(), bouwjaar=year)
        building["geometry"] = [_geometry(b, lod, pool) for lod in lods]
    else:
        children = []
        for j, b in enumerate(blocks):
            pid = f"{bid}-{j}"
            children.append(pid)
            objects[pid] = {
                "type": "BuildingPart",
                "attributes": b.attributes(),
                "geometry": [_geometry(b, lod, pool) for lod in lods],
                "parents": [bid],
            }
        building["children"] = children
    return {"type": "CityJSONFeature", "id": bid, "CityObjects": objects, "vertices": pool.vertices}


def _extent(buildings, trees):
    xs, ys, zs = [], [], []
    for _, _, blocks in buildings:
        for b in blocks:
            xs += [b.x0, b.x1]
            ys += [b.y0, b.y1]
            zs += [b.z0, b.ridge]
    for x, y, z, _ in trees:
        xs.append(x)
        ys.append(y)
        zs.append(z)
    if not xs:
        return None
    lo = [min(xs), min(ys), min(zs)]
    hi = [max(xs), max(ys), max(zs)]
    return [round(v * s + t, 3) for v, s, t in zip(lo + hi, SCALE * 2, TRANSLATE * 2)]


def write_city(sink: IO, *args, **kwargs) -> int:
    """Write a generated city as CityJSONL; returns the number of features."""
    n = -1
    for n, doc in enumerate(generate_city(*args, **kwargs)):
        sink.write(json.dumps(doc, separators=(",", ":")) + "\n")
    return n
