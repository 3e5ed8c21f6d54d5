"""Overlapping tile extraction, dihedral augmentation and train/val/test partitioning."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .raster import GeometryError

# op = 4 * flip + k: optional left-right flip, then k counter-clockwise quarter turns
DIHEDRAL_OPS = tuple(range(8))
DIHEDRAL_NAMES = ("identity", "rot90", "rot180", "rot270",
                  "flip_lr", "flip_lr_rot90", "flip_lr_rot180", "flip_lr_rot270")


@dataclass
class TileSample:
    tile_id: str
    anchor: tuple  # (x0, y0): top-left corner in map units
    size_m: float
    sensors: dict = field(default_factory=dict)  # name -> (bands, n, n)
    labels: dict = field(default_factory=dict)  # task -> (n, n) uint8
    split: str = "train"

    @property
    def bounds(self):
        x0, y0 = self.anchor
        return x0, y0 - self.size_m, x0 + self.size_m, y0


def tile_count(extent_m, tile_m, stride_m):
    """Number of tile positions along one axis."""
    if tile_m > extent_m + 1e-9:
        return 0
    return int(math.floor((extent_m - tile_m) / stride_m + 1e-9)) + 1


def tile_anchors(grid, tile_m, stride_m):
    """Row-major list of (row index, col index, x0, y0) tile anchors."""
    if stride_m <= 0 or tile_m <= 0:
        raise ValueError("tile size and stride must be positive")
    w_m, h_m = grid.size_m
    nx, ny = tile_count(w_m, tile_m, stride_m), tile_count(h_m, tile_m, stride_m)
    return [(ky, kx, grid.origin_x + kx * stride_m, grid.origin_y - ky * stride_m)
            for ky in range(ny) for kx in range(nx)]


def extract_tiles(rasters, tile_m, stride_m, labels=None):
    """Crop every raster (and label raster) to each tile footprint.

    ``rasters`` and ``labels`` map names to :class:`RasterBundle` objects that
    must share one map footprint. Label bundles are single-band.
    """
    labels = labels or {}
    bundles = {**rasters, **labels}
    if not bundles:
        raise ValueError("no rasters to tile")
    ref_name, ref = next(iter(bundles.items()))
    for name, b in bundles.items():
        if not ref.grid.same_footprint(b.grid):
            raise GeometryError(f"raster {name!r} footprint {b.grid.extent} differs from "
                                f"{ref_name!r} footprint {ref.grid.extent}")
    anchors = tile_anchors(ref.grid, tile_m, stride_m)
    if not anchors:
        w_m, h_m = ref.grid.size_m
        warnings.warn(f"tile size {tile_m} m exceeds raster extent {w_m}x{h_m} m; no tiles produced")
        return []
    tiles = []
    for ky, kx, x0, y0 in anchors:
        sensors, labs = {}, {}
        for name, b in rasters.items():
            r, c, n = b.grid.window(x0, y0, tile_m)
            sensors[name] = b.data[:, r:r + n, c:c + n]
        for name, b in labels.items():
            r, c, n = b.grid.window(x0, y0, tile_m)
            labs[name] = b.data[0, r:r + n, c:c + n]
        tiles.append(TileSample(f"r{ky:03d}c{kx:03d}", (x0, y0), tile_m, sensors, labs))
    return tiles


def apply_dihedral(arr, op):
    """Apply dihedral op ``op`` to the two trailing axes of ``arr``."""
    if op not in DIHEDRAL_OPS:
        raise ValueError(f"dihedral op must be in 0..7, got {op}")
    flip, k = divmod(op, 4)
    if flip:
        arr = arr[..., ::-1]
    return np.rot90(arr, k, axes=(-2, -1))


def compose(a, b):
    """Op equal to applying ``a`` then ``b``."""
    probe = np.arange(4).reshape(2, 2)
    target = apply_dihedral(apply_dihedral(probe, a), b)
    for op in DIHEDRAL_OPS:
        if np.array_equal(apply_dihedral(probe, op), target):
            return op
    raise AssertionError("dihedral group not closed")  # unreachable


def inverse(op):
    return next(o for o in DIHEDRAL_OPS if compose(op, o) == 0)


def augment(sample, op):
    """Apply one dihedral transform to every sensor array and label grid."""
    for name, arr in {**sample.sensors, **sample.labels}.items():
        if arr.shape[-1] != arr.shape[-2]:
            raise ValueError(f"augment needs square tiles; {name} is {arr.shape[-2:]}")
    return replace(
        sample,
        sensors={k: np.ascontiguousarray(apply_dihedral(v, op)) for k, v in sample.sensors.items()},
        labels={k: np.ascontiguousarray(apply_dihedral(v, op)) for k, v in sample.labels.items()},
    )


def _in_test(bounds, boundary, test_side):
    xmin, ymin, xmax, ymax = bounds
    return {
        "west": xmin < boundary,
        "east": xmax > boundary,
        "south": ymin < boundary,
        "north": ymax > boundary,
    }[test_side]


def split_partitions(tiles, boundary, test_side="west", seed=0, val_fraction=0.2):
    """Tag tiles test / train / val.

    Tiles whose footprint reaches into the test side of the boundary line
    (vertical for west/east, horizontal for south/north) become test tiles,
    including tiles straddling the line. The rest are shuffled with ``seed``
    and split train:val = 4:1 by default.
    """
    if test_side not in ("west", "east", "south", "north"):
        raise ValueError(f"unknown test side {test_side!r}")
    is_test = [_in_test(t.bounds, boundary, test_side) for t in tiles]
    rest = [i for i, flag in enumerate(is_test) if not flag]
    if tiles and (not rest or len(rest) == len(tiles)):
        warnings.warn(f"partition boundary {boundary} leaves all {len(tiles)} tiles on one side")
    order = np.random.default_rng(seed).permutation(len(rest))
    n_val = int(round(len(rest) * val_fraction))
    val = {rest[j] for j in order[:n_val]}
    return [replace(t, split="test" if is_test[i] else "val" if i in val else "train")
            for i, t in enumerate(tiles)]
