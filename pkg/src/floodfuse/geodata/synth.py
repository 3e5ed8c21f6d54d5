"""Synthetic multi-sensor flood scenes.

Each modality is built to carry different information:

* VHR (RGB, fine grid): crisp building footprints with roof texture, no flood cue.
* Sentinel-2-like (10 bands, 10 m): buildings change the spectrum (coarse
  footprint cue); post-event the flood region darkens the infrared bands.
* Sentinel-1-like SLC (5 m): a persistent speckle field keeps unchanged
  ground coherent between acquisitions; inside the flood region (and on
  flooded buildings) the post-event acquisition is decorrelated.

Ground truth comes from the same rectangles: ``building`` polygons for
intact buildings and ``flooded_building`` for those whose centroid falls in
the flood region.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .raster import GridSpec, RasterBundle
from .vector import Polygon, VectorLabels, rasterize

S2_BANDS = ("B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12")
# reflectance signatures (ground, roof, water-darkening weight) per band
_GROUND = np.array([0.05, 0.08, 0.06, 0.12, 0.25, 0.30, 0.32, 0.33, 0.22, 0.13])
_ROOF = np.array([0.14, 0.15, 0.17, 0.19, 0.20, 0.21, 0.22, 0.22, 0.26, 0.24])
_WATER_BANDS = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1, 1], dtype=float)
_ROOF_COLORS = np.array([[180, 70, 60], [150, 150, 155], [90, 90, 100], [200, 190, 170], [120, 60, 40]], float)


@dataclass
class SceneConfig:
    width_m: float = 1280.0
    height_m: float = 640.0
    origin_x: float = 500000.0
    origin_y: float = 3300000.0
    s1_gsd: float = 5.0
    s2_gsd: float = 10.0
    vhr_gsd: float = 2.0
    n_buildings: int = 80
    building_min_m: float = 12.0
    building_max_m: float = 36.0
    flood_fraction: float = 0.35
    flood_radius_frac: float = 0.18
    s1_decorrelation: float = 0.15
    s2_noise: float = 0.01
    vhr_noise: float = 6.0
    s1_building_contrast: float = 2.0
    s2_building_contrast: float = 1.0
    s2_flood_contrast: float = 0.7
    history_len: int = 4
    crs: str = "synthetic-utm"

    def validate(self):
        if not 0.0 <= self.flood_fraction <= 1.0:
            raise ValueError(f"flood_fraction must be in [0, 1], got {self.flood_fraction}")
        if self.building_min_m <= 0 or self.building_min_m > self.building_max_m:
            raise ValueError("building size range must satisfy 0 < min <= max")
        if self.building_max_m >= min(self.width_m, self.height_m):
            raise ValueError(f"buildings up to {self.building_max_m} m do not fit a "
                             f"{self.width_m}x{self.height_m} m scene")
        for g in (self.s1_gsd, self.s2_gsd, self.vhr_gsd):
            for extent in (self.width_m, self.height_m):
                if not math.isclose(extent / g, round(extent / g)):
                    raise ValueError(f"scene extent {extent} m is not a multiple of gsd {g} m")
        if not 0.0 <= self.s1_decorrelation <= 1.0:
            raise ValueError("s1_decorrelation must be in [0, 1]")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")

    def coverage_gsd(self):
        """Finest grid that every sensor grid is an integer multiple of."""
        mm = [int(round(g * 1000)) for g in (self.s1_gsd, self.s2_gsd, self.vhr_gsd)]
        return math.gcd(*mm) / 1000.0

    def grid(self, gsd):
        return GridSpec(int(round(self.width_m / gsd)), int(round(self.height_m / gsd)), gsd,
                        self.origin_x, self.origin_y, self.crs)


@dataclass
class Scene:
    bundles: dict
    labels: VectorLabels
    flood_disks: list  # (cx, cy, r) in map units
    config: SceneConfig

    def manifest(self):
        return {"config": asdict(self.config), "flood_disks": [list(d) for d in self.flood_disks]}


def _place_buildings(cfg, rng):
    snap = cfg.vhr_gsd
    placed = []
    x0, y_top = cfg.origin_x, cfg.origin_y
    attempts = 0
    while len(placed) < cfg.n_buildings and attempts < 200 * max(cfg.n_buildings, 1):
        attempts += 1
        w = snap * round(rng.uniform(cfg.building_min_m, cfg.building_max_m) / snap)
        h = snap * round(rng.uniform(cfg.building_min_m, cfg.building_max_m) / snap)
        bx = x0 + snap * math.floor(rng.uniform(snap, cfg.width_m - w - snap) / snap)
        by = y_top - cfg.height_m + snap * math.floor(rng.uniform(snap, cfg.height_m - h - snap) / snap)
        box = (bx, by, bx + w, by + h)
        gap = 2 * snap
        if all(box[0] >= o[2] + gap or box[2] <= o[0] - gap or box[1] >= o[3] + gap or box[3] <= o[1] - gap
               for o in placed):
            placed.append(box)
    return placed


def _flood_disks(cfg, rng):
    if cfg.flood_fraction <= 0:
        return []
    if cfg.flood_fraction >= 1:
        r = math.hypot(cfg.width_m, cfg.height_m)
        return [(cfg.origin_x + cfg.width_m / 2, cfg.origin_y - cfg.height_m / 2, r)]
    coarse = cfg.grid(max(cfg.s2_gsd, 10.0))
    xs = coarse.origin_x + (np.arange(coarse.width) + 0.5) * coarse.pixel_size
    ys = coarse.origin_y - (np.arange(coarse.height) + 0.5) * coarse.pixel_size
    gx, gy = np.meshgrid(xs, ys)
    mask = np.zeros(gx.shape, bool)
    disks = []
    base_r = cfg.flood_radius_frac * min(cfg.width_m, cfg.height_m)
    while mask.mean() < cfg.flood_fraction and len(disks) < 200:
        cx = cfg.origin_x + rng.uniform(0, cfg.width_m)
        cy = cfg.origin_y - rng.uniform(0, cfg.height_m)
        r = base_r * rng.uniform(0.7, 1.3)
        disks.append((cx, cy, r))
        mask |= (gx - cx) ** 2 + (gy - cy) ** 2 <= r * r
    return disks


def _disk_polygon(cx, cy, r, n=64):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    ring = np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)
    return Polygon(np.vstack([ring, ring[:1]]), [], "building")


def _coverage(polys, fine, coarse):
    """Fraction of each coarse pixel covered by ``polys`` (via the fine raster)."""
    f = int(round(coarse.pixel_size / fine.pixel_size))
    m = rasterize(polys, fine).astype(np.float64)
    return m.reshape(coarse.height, f, coarse.width, f).mean(axis=(1, 3))


def _smooth_field(rng, shape, scale_px):
    """Cheap low-frequency texture: bilinear-upsampled coarse noise."""
    ch, cw = max(2, shape[0] // scale_px + 2), max(2, shape[1] // scale_px + 2)
    coarse = rng.standard_normal((ch, cw))
    yi = np.linspace(0, ch - 1.001, shape[0])
    xi = np.linspace(0, cw - 1.001, shape[1])
    y0, x0 = yi.astype(int), xi.astype(int)
    fy, fx = (yi - y0)[:, None], (xi - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synth_scene(seed=0, config=None):
    """Generate sensor bundles and polygon labels for one synthetic scene."""
    cfg = config or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)

    boxes = _place_buildings(cfg, rng)
    disks = _flood_disks(cfg, rng)

    def flooded(box):
        cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
        return any((cx - dx) ** 2 + (cy - dy) ** 2 <= r * r for dx, dy, r in disks)

    polys = [Polygon.rectangle(*b, label="flooded_building" if flooded(b) else "building") for b in boxes]
    labels = VectorLabels(polys)
    flood_polys = [_disk_polygon(*d) for d in disks]
    flooded_polys = labels.of_class("flooded_building")

    vhr = cfg.grid(cfg.vhr_gsd)
    fine = cfg.grid(cfg.coverage_gsd())
    g1, g2 = cfg.grid(cfg.s1_gsd), cfg.grid(cfg.s2_gsd)
    bundles = {}

    # --- VHR: footprints and roof texture only ---------------------------
    vhr_building = np.full((vhr.height, vhr.width), -1, dtype=np.int32)
    for i, p in enumerate(polys):
        vhr_building[rasterize([p], vhr).astype(bool)] = i
    roof_idx = rng.integers(0, len(_ROOF_COLORS), size=max(len(polys), 1))
    ground = np.array([95.0, 110.0, 80.0])[:, None, None] + 12.0 * _smooth_field(rng, (vhr.height, vhr.width), 8)[None]
    rgb = np.broadcast_to(ground, (3, vhr.height, vhr.width)).copy()
    inside = vhr_building >= 0
    if inside.any():
        rgb[:, inside] = _ROOF_COLORS[roof_idx[vhr_building[inside]]].T
    rgb += cfg.vhr_noise * rng.standard_normal(rgb.shape)
    bundles["vhr"] = RasterBundle(np.clip(np.round(rgb), 0, 255).astype(np.uint8), vhr, ["R", "G", "B"], "u8")

    # --- Sentinel-2-like optical -----------------------------------------
    bcov2 = _coverage(polys, fine, g2)
    fcov2 = _coverage(flood_polys + flooded_polys, fine, g2)
    texture = 0.02 * _smooth_field(rng, (g2.height, g2.width), 6)
    base = (_GROUND[:, None, None] * (1 + texture[None])
            + cfg.s2_building_contrast * bcov2[None] * (_ROOF - _GROUND)[:, None, None])
    s2_pre = base + cfg.s2_noise * rng.standard_normal(base.shape)
    darken = 1.0 - cfg.s2_flood_contrast * fcov2[None] * _WATER_BANDS[:, None, None]
    s2_post = base * darken + cfg.s2_noise * rng.standard_normal(base.shape)
    bundles["s2_pre"] = RasterBundle(s2_pre.astype(np.float32), g2, list(S2_BANDS), "f32")
    bundles["s2_post"] = RasterBundle(s2_post.astype(np.float32), g2, list(S2_BANDS), "f32")

    # --- Sentinel-1-like SLC ---------------------------------------------
    bcov1 = _coverage(polys, fine, g1)
    change = _coverage(flood_polys + flooded_polys, fine, g1) > 0
    sigma = 1.0 + cfg.s1_building_contrast * bcov1
    scatter = _cn(rng, (g1.height, g1.width))
    keep, fresh = math.sqrt(1 - cfg.s1_decorrelation), math.sqrt(cfg.s1_decorrelation)

    def acquisition():
        return np.sqrt(sigma) * (keep * scatter + fresh * _cn(rng, scatter.shape))

    history = [acquisition() for _ in range(cfg.history_len)]
    t0, t1 = acquisition(), acquisition()
    t2 = acquisition()
    water = 0.2 * _cn(rng, scatter.shape)
    t2 = np.where(change, water, t2)
    c64 = np.complex64
    bundles["s1_pre"] = RasterBundle(np.stack([t0, t1]).astype(c64), g1, ["t0", "t1"], "c64")
    bundles["s1_post"] = RasterBundle(np.stack([t1, t2]).astype(c64), g1, ["t1", "t2"], "c64")
    bundles["s1_history"] = RasterBundle(np.stack(history).astype(c64), g1,
                                         [f"h{i}" for i in range(len(history))], "c64")
    return Scene(bundles, labels, disks, cfg)
