"""Assemble training tiles from sensor bundles and polygon labels.

Per stream, the pre/post rasters are channel-stacked (early fusion),
resampled to the stream's grid, then cut into aligned tiles together with
label grids rasterized at the common output resolution. Inputs are z-scored
per channel with statistics taken from the training tiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geodata.raster import GeometryError, RasterBundle
from .geodata.tiles import apply_dihedral, extract_tiles, split_partitions
from .geodata.vector import rasterize
from .network import SENSOR_INPUTS
from .sar import build_radar_stack, complex_from_bundle

TASKS = ("footprint", "flood")
TASK_CLASS = {"footprint": None, "flood": "flooded_building"}

STREAM_SOURCES = SENSOR_INPUTS
SLC_ROLES = ("s1_pre", "s1_post", "s1_history")
EPS_DB = 1e-6


class DatasetError(ValueError):
    pass


def prepare_radar(bundles, window):
    """Radar stacks from the SLC bundles, as ``radar_pre`` / ``radar_post`` bundles."""
    missing = [r for r in SLC_ROLES if r not in bundles]
    if missing:
        raise DatasetError(f"missing radar acquisition(s): {', '.join(missing)}")
    pre_b, post_b, hist_b = (bundles[r] for r in SLC_ROLES)
    if pre_b.bands != 2 or post_b.bands != 2:
        raise DatasetError("s1_pre and s1_post must each hold an acquisition pair")
    pre_pair = [complex_from_bundle(pre_b, i) for i in range(2)]
    post_pair = [complex_from_bundle(post_b, i) for i in range(2)]
    history = [complex_from_bundle(hist_b, i) for i in range(hist_b.bands)]
    pre, post = build_radar_stack(pre_pair, post_pair, history, window)
    return {"radar_pre": pre.to_bundle(), "radar_post": post.to_bundle()}


def _block_mean(data, factor):
    c, h, w = data.shape
    return data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def _stream_array(name, bundles, gsd):
    """Early-fused float32 array for one stream on a ``gsd`` grid."""
    parts = []
    for src in STREAM_SOURCES[name]:
        if src not in bundles:
            raise DatasetError(f"stream {name!r} needs bundle {src!r}, which is absent")
        b = bundles[src]
        x = b.data.astype(np.float64)
        if src.startswith("radar"):
            # intensities to decibels; coherence stays linear
            x[:2] = 10.0 * np.log10(np.maximum(x[:2], 0.0) + EPS_DB)
        parts.append(x)
    grid = bundles[STREAM_SOURCES[name][0]].grid
    data = np.concatenate(parts, axis=0)
    factor = gsd / grid.pixel_size
    if not math.isclose(factor, round(factor)) or round(factor) < 1:
        raise GeometryError(f"stream {name}: {gsd} m is not an integer coarsening of {grid.pixel_size} m")
    factor = int(round(factor))
    if factor > 1:
        data = _block_mean(data, factor)
        grid = grid.with_pixel_size(gsd)
    return RasterBundle(data.astype(np.float32), grid, [f"c{i}" for i in range(len(data))], "f32")


def label_rasters(labels, grid):
    """uint8 label bundles for both tasks on ``grid``."""
    return {task: RasterBundle(rasterize(labels, grid, TASK_CLASS[task]), grid, [task], "u8")
            for task in TASKS}


@dataclass
class TileDataset:
    tiles: list
    sensors: list
    stats: dict  # stream -> {"mean": [...], "std": [...]}
    common_pixels: int
    meta: dict = field(default_factory=dict)

    def indices(self, split):
        return [i for i, t in enumerate(self.tiles) if t.split == split]

    def count(self, split):
        return len(self.indices(split))

    def batch(self, idx, task, ops=None):
        """(inputs dict, targets) for tile indices ``idx`` with optional dihedral ops."""
        ops = [0] * len(idx) if ops is None else ops
        inputs = {}
        for s in self.sensors:
            inputs[s] = np.stack([np.ascontiguousarray(apply_dihedral(self.tiles[i].sensors[s], op))
                                  for i, op in zip(idx, ops)])
        target = np.stack([np.ascontiguousarray(apply_dihedral(self.tiles[i].labels[task], op))
                           for i, op in zip(idx, ops)]).astype(np.int64)
        return inputs, target

    def positives(self, split, task):
        return sum(int(self.tiles[i].labels[task].sum()) for i in self.indices(split))


def channel_stats(tiles, sensors):
    stats = {}
    for s in sensors:
        stack = np.stack([t.sensors[s] for t in tiles]).astype(np.float64)
        mean = stack.mean(axis=(0, 2, 3))
        std = stack.std(axis=(0, 2, 3))
        stats[s] = {"mean": mean.tolist(), "std": np.where(std > 1e-8, std, 1.0).tolist()}
    return stats


def _normalize(arr, st):
    mean = np.asarray(st["mean"], dtype=np.float32)[:, None, None]
    std = np.asarray(st["std"], dtype=np.float32)[:, None, None]
    return ((arr - mean) / std).astype(np.float32)


def build_dataset(bundles, labels, fusion_cfg, stride_m=None, boundary=None, test_side="west",
                  seed=0, val_fraction=0.2, stats=None):
    """Tile a scene for ``fusion_cfg``'s streams.

    ``boundary`` defaults to the west quarter of the scene. ``stats`` (from a
    trained model) overrides the training-tile statistics.
    """
    tile_m = fusion_cfg.tile_m
    stride_m = tile_m / 2 if stride_m is None else stride_m
    rasters = {s.sensor: _stream_array(s.sensor, bundles, s.gsd) for s in fusion_cfg.streams}
    for s in fusion_cfg.streams:
        n = rasters[s.sensor].grid.window(rasters[s.sensor].grid.origin_x, rasters[s.sensor].grid.origin_y,
                                          tile_m)[2]
        if n != s.pixels:
            raise GeometryError(f"stream {s.sensor}: tile covers {n} px, model expects {s.pixels}")
    ref = next(iter(rasters.values())).grid
    label_grid = ref.with_pixel_size(fusion_cfg.common_gsd)
    tiles = extract_tiles(rasters, tile_m, stride_m, label_rasters(labels, label_grid))
    if not tiles:
        raise DatasetError("scene produced no tiles")
    xmin, _, xmax, _ = ref.extent
    boundary = xmin + 0.25 * (xmax - xmin) if boundary is None else boundary
    tiles = split_partitions(tiles, boundary, test_side, seed, val_fraction)
    sensors = fusion_cfg.sensors
    if stats is None:
        train = [t for t in tiles if t.split == "train"] or tiles
        stats = channel_stats(train, sensors)
    for t in tiles:
        t.sensors = {s: _normalize(t.sensors[s], stats[s]) for s in sensors}
    meta = {"tile_m": tile_m, "stride_m": stride_m, "boundary": boundary, "test_side": test_side,
            "seed": seed, "val_fraction": val_fraction}
    return TileDataset(tiles, sensors, stats, fusion_cfg.common_pixels, meta)
