"""RasterBundle: a directory holding ``meta.json`` + ``data.bin``.

``data.bin`` is band-major, row-major, little-endian. Supported dtype tags are
``f32``, ``c64`` (interleaved real/imag float32) and ``u8``. Map coordinates
are north-up: the origin is the top-left corner, x grows to the east and y
decreases down the rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DTYPES = {"f32": np.dtype("<f4"), "c64": np.dtype("<c8"), "u8": np.dtype("u1")}


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    pixel_size: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    crs: str = "local"

    def __post_init__(self):
        if self.pixel_size <= 0:
            raise GeometryError(f"pixel_size must be > 0, got {self.pixel_size}")
        if self.width < 0 or self.height < 0:
            raise GeometryError("negative raster size")

    @property
    def extent(self):
        """(xmin, ymin, xmax, ymax) in map units."""
        return (
            self.origin_x,
            self.origin_y - self.height * self.pixel_size,
            self.origin_x + self.width * self.pixel_size,
            self.origin_y,
        )

    @property
    def size_m(self):
        return self.width * self.pixel_size, self.height * self.pixel_size

    def same_footprint(self, other, tol=1e-6):
        return all(math.isclose(a, b, abs_tol=tol) for a, b in zip(self.extent, other.extent))

    def with_pixel_size(self, pixel_size):
        """Same footprint resampled to a different ground resolution."""
        w_m, h_m = self.size_m
        width, height = w_m / pixel_size, h_m / pixel_size
        if not (math.isclose(width, round(width)) and math.isclose(height, round(height))):
            raise GeometryError(f"extent {w_m}x{h_m} m is not a multiple of {pixel_size} m")
        return replace(self, width=int(round(width)), height=int(round(height)), pixel_size=pixel_size)

    def window(self, x0, y0, size_m):
        """Pixel (row, col, n) of a square map-space window anchored at top-left (x0, y0)."""
        col = (x0 - self.origin_x) / self.pixel_size
        row = (self.origin_y - y0) / self.pixel_size
        n = size_m / self.pixel_size
        for v in (col, row, n):
            if not math.isclose(v, round(v), abs_tol=1e-6):
                raise GeometryError(
                    f"window ({x0}, {y0}, {size_m} m) is not aligned to the {self.pixel_size} m grid")
        return int(round(row)), int(round(col)), int(round(n))

    def sub(self, row, col, height, width):
        return replace(
            self,
            width=width,
            height=height,
            origin_x=self.origin_x + col * self.pixel_size,
            origin_y=self.origin_y - row * self.pixel_size,
        )


@dataclass
class RasterBundle:
    data: np.ndarray  # (bands, height, width)
    grid: GridSpec
    band_names: list = field(default_factory=list)
    dtype: str = "f32"

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype tag {self.dtype!r}; expected one of {sorted(DTYPES)}")
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        self.data = data.astype(DTYPES[self.dtype], copy=False)
        bands, h, w = self.data.shape
        if (h, w) != (self.grid.height, self.grid.width):
            raise GeometryError(f"data {h}x{w} does not match grid {self.grid.height}x{self.grid.width}")
        if not self.band_names:
            self.band_names = [f"b{i}" for i in range(bands)]
        if len(self.band_names) != bands:
            raise ValueError(f"{len(self.band_names)} band names for {bands} bands")
        if len(set(self.band_names)) != bands:
            raise ValueError(f"band names must be unique: {self.band_names}")

    @property
    def bands(self):
        return self.data.shape[0]

    def band(self, name):
        return self.data[self.band_names.index(name)]

    def meta(self):
        g = self.grid
        return {
            "width": g.width,
            "height": g.height,
            "bands": self.bands,
            "dtype": self.dtype,
            "origin_x": g.origin_x,
            "origin_y": g.origin_y,
            "pixel_size": g.pixel_size,
            "crs": g.crs,
            "band_names": list(self.band_names),
        }

    def crop(self, row, col, n_rows, n_cols):
        return RasterBundle(self.data[:, row:row + n_rows, col:col + n_cols],
                            self.grid.sub(row, col, n_rows, n_cols), list(self.band_names), self.dtype)


def write_bundle(bundle, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "meta.json").write_text(json.dumps(bundle.meta(), indent=2, sort_keys=True) + "\n")
    (path / "data.bin").write_bytes(np.ascontiguousarray(bundle.data).tobytes())


def read_bundle(path):
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    dt = DTYPES[meta["dtype"]]
    raw = (path / "data.bin").read_bytes()
    shape = (meta["bands"], meta["height"], meta["width"])
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) != expected:
        raise GeometryError(f"{path}/data.bin has {len(raw)} bytes, expected {expected}")
    grid = GridSpec(meta["width"], meta["height"], meta["pixel_size"],
                    meta["origin_x"], meta["origin_y"], meta.get("crs", "local"))
    data = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return RasterBundle(data, grid, list(meta["band_names"]), meta["dtype"])


def export_png(bundle_or_array, path, scaling="minmax", value_range=None, grid=None):
    """Write a 1- or 3-band raster as PNG plus a ``.json`` sidecar.

    ``scaling`` is ``"minmax"`` (per-image) or ``"fixed"`` with ``value_range``.
    """
    from PIL import Image

    if isinstance(bundle_or_array, RasterBundle):
        arr = bundle_or_array.data
        grid = bundle_or_array.grid
    else:
        arr = np.asarray(bundle_or_array)
        if arr.ndim == 2:
            arr = arr[None]
    if arr.shape[0] not in (1, 3):
        raise ValueError(f"PNG export needs 1 or 3 bands, got {arr.shape[0]}")
    if np.iscomplexobj(arr):
        arr = np.abs(arr)
    arr = arr.astype(np.float64)
    if scaling == "minmax":
        lo, hi = float(arr.min()), float(arr.max())
    elif scaling == "fixed":
        if value_range is None:
            raise ValueError("fixed scaling needs value_range")
        lo, hi = map(float, value_range)
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    span = hi - lo if hi > lo else 1.0
    img = np.clip(np.round((arr - lo) / span * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if img.shape[0] == 1 else "RGB"
    pil = Image.fromarray(img[0] if mode == "L" else img.transpose(1, 2, 0), mode=mode)
    path = Path(path)
    pil.save(path)
    sidecar = {"scaling": scaling, "min": lo, "max": hi}
    if grid is not None:
        sidecar["grid"] = {k: getattr(grid, k) for k in ("width", "height", "pixel_size", "origin_x", "origin_y", "crs")}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path
