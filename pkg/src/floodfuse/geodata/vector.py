"""Polygon labels, a GeoJSON subset reader/writer, and rasterization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import kernels

CLASSES = ("building", "flooded_building")


class LabelError(ValueError):
    pass


def _ring(coords):
    ring = np.asarray(coords, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise LabelError(f"ring must be a list of (x, y) pairs, got shape {ring.shape}")
    if len(ring) < 4:
        raise LabelError(f"ring needs at least 4 vertices (closed), got {len(ring)}")
    if not np.array_equal(ring[0], ring[-1]):
        raise LabelError(f"ring is not closed: first {ring[0].tolist()} != last {ring[-1].tolist()}")
    return ring


@dataclass
class Polygon:
    exterior: np.ndarray
    holes: list = field(default_factory=list)
    cls: str = "building"

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise LabelError(f"unknown class {self.cls!r}; expected one of {CLASSES}")
        self.exterior = _ring(self.exterior)
        self.holes = [_ring(h) for h in self.holes]

    @property
    def rings(self):
        return [self.exterior, *self.holes]

    @classmethod
    def rectangle(cls, x0, y0, x1, y1, label="building"):
        xa, xb = sorted((x0, x1))
        ya, yb = sorted((y0, y1))
        return cls(np.array([[xa, ya], [xb, ya], [xb, yb], [xa, yb], [xa, ya]]), [], label)

    def bounds(self):
        xs, ys = self.exterior[:, 0], self.exterior[:, 1]
        return xs.min(), ys.min(), xs.max(), ys.max()


@dataclass
class VectorLabels:
    polygons: list = field(default_factory=list)

    def of_class(self, cls):
        return [p for p in self.polygons if p.cls == cls]

    def to_geojson(self):
        features = []
        for p in self.polygons:
            features.append({
                "type": "Feature",
                "properties": {"class": p.cls},
                "geometry": {"type": "Polygon", "coordinates": [r.tolist() for r in p.rings]},
            })
        return {"type": "FeatureCollection", "features": features}

    @classmethod
    def from_geojson(cls, obj):
        if obj.get("type") != "FeatureCollection":
            raise LabelError("labels must be a GeoJSON FeatureCollection")
        polygons = []
        for feat in obj.get("features", []):
            label = feat.get("properties", {}).get("class")
            geom = feat["geometry"]
            if geom["type"] == "Polygon":
                parts = [geom["coordinates"]]
            elif geom["type"] == "MultiPolygon":
                parts = geom["coordinates"]
            else:
                raise LabelError(f"unsupported geometry type {geom['type']}")
            for rings in parts:
                polygons.append(Polygon(rings[0], list(rings[1:]), label))
        return cls(polygons)


def save_labels(labels, path):
    Path(path).write_text(json.dumps(labels.to_geojson()) + "\n")


def load_labels(path):
    return VectorLabels.from_geojson(json.loads(Path(path).read_text()))


def _edges(rings, grid):
    """Ring segments converted to pixel units (x right, y down)."""
    out = []
    for ring in rings:
        px = (ring[:, 0] - grid.origin_x) / grid.pixel_size
        py = (grid.origin_y - ring[:, 1]) / grid.pixel_size
        out.append(np.stack([px[:-1], py[:-1], px[1:], py[1:]], axis=1))
    return np.ascontiguousarray(np.concatenate(out), dtype=np.float64)


def rasterize(labels, grid, cls=None):
    """Burn polygons into a uint8 grid.

    A pixel is 1 when its center lies inside any selected polygon under the
    even-odd rule (holes excluded). ``cls=None`` selects every class;
    ``"building"`` also matches flooded buildings since they are buildings.
    """
    out = np.zeros((grid.height, grid.width), dtype=np.uint8)
    if isinstance(labels, VectorLabels):
        polys = labels.polygons
    else:
        polys = list(labels)
    if cls == "flooded_building":
        polys = [p for p in polys if p.cls == "flooded_building"]
    elif cls not in (None, "building"):
        raise LabelError(f"unknown class {cls!r}")
    for poly in polys:
        edges = _edges(poly.rings, grid)
        ys = np.concatenate([edges[:, 1], edges[:, 3]])
        xs = np.concatenate([edges[:, 0], edges[:, 2]])
        r0 = max(int(np.floor(ys.min() - 0.5)), 0)
        r1 = min(int(np.ceil(ys.max() + 0.5)), grid.height)
        c0 = max(int(np.floor(xs.min() - 0.5)), 0)
        c1 = min(int(np.ceil(xs.max() + 0.5)), grid.width)
        if r0 >= r1 or c0 >= c1:
            continue
        kernels.fill_evenodd(edges, out, r0, r1, c0, c1)
    return out
