"""Radar preprocessing: intensity, multi-looking and interferometric coherence.

Boxcar expectations use reflective ("reflect", edge sample not repeated)
padding so every output has the geometry of its input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geodata.raster import GeometryError, GridSpec, RasterBundle

DEFAULT_WINDOW = 5


@dataclass
class ComplexRaster:
    samples: np.ndarray  # (height, width) complex
    grid: GridSpec

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.shape != (self.grid.height, self.grid.width):
            raise GeometryError(
                f"samples {self.samples.shape} do not match grid {self.grid.height}x{self.grid.width}")


@dataclass
class Band:
    """Single-band real raster."""

    values: np.ndarray
    grid: GridSpec


@dataclass
class RadarStack:
    intensity: Band
    multitemporal: Band
    coherence: Band

    BAND_NAMES = ("intensity", "multitemporal_intensity", "coherence")

    @property
    def grid(self):
        return self.intensity.grid

    def to_bundle(self):
        data = np.stack([self.intensity.values, self.multitemporal.values, self.coherence.values])
        return RasterBundle(data.astype(np.float32), self.grid, list(self.BAND_NAMES), "f32")


def _check_window(window):
    if window < 1 or window % 2 == 0:
        raise ValueError(f"boxcar window must be an odd integer >= 1, got {window}")


def _same_geometry(grids):
    first = grids[0]
    for g in grids[1:]:
        if (g.width, g.height) != (first.width, first.height) or not first.same_footprint(g):
            raise GeometryError(f"rasters are not co-registered: {first} vs {g}")


def boxcar(values, window):
    """Local mean over a ``window`` x ``window`` box (float64 in, float64 out)."""
    _check_window(window)
    values = np.asarray(values, dtype=np.float64)
    if window == 1:
        return values.copy()
    r = window // 2
    if r >= min(values.shape):
        raise ValueError(f"window {window} too large for raster of shape {values.shape}")
    padded = np.ascontiguousarray(np.pad(values, r, mode="reflect"))
    return kernels.box_mean(padded, window)


def intensity(z):
    """I = Re(z)^2 + Im(z)^2 per pixel."""
    s = z.samples.astype(np.complex128)
    return Band(s.real * s.real + s.imag * s.imag, z.grid)


def multilook(band, window=DEFAULT_WINDOW):
    """Speckle reduction by boxcar averaging; window 1 returns the input unchanged."""
    return Band(boxcar(band.values, window), band.grid)


def temporal_multilook(bands):
    """Per-pixel mean over a time series of co-registered bands."""
    bands = list(bands)
    if not bands:
        raise ValueError("temporal_multilook needs at least one raster")
    _same_geometry([b.grid for b in bands])
    acc = np.zeros_like(np.asarray(bands[0].values, dtype=np.float64))
    for b in bands:
        acc = acc + b.values
    return Band(acc / len(bands), bands[0].grid)


def coherence(z1, z2, window=DEFAULT_WINDOW):
    """Magnitude of the boxcar-estimated complex correlation of two SLC rasters.

    Pixels where either power term is zero get coherence 0.
    """
    _check_window(window)
    _same_geometry([z1.grid, z2.grid])
    a = z1.samples.astype(np.complex128)
    b = z2.samples.astype(np.complex128)
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    # cross term a * conj(b), written out so that swapping inputs conjugates exactly
    num_re = boxcar(ar * br + ai * bi, window)
    num_im = boxcar(ai * br - ar * bi, window)
    p1 = boxcar(ar * ar + ai * ai, window)
    p2 = boxcar(br * br + bi * bi, window)
    den = np.sqrt(p1 * p2)
    mag = np.hypot(num_re, num_im)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(den > 0, mag / np.where(den > 0, den, 1.0), 0.0)
    return Band(np.clip(gamma, 0.0, 1.0), z1.grid)


def build_radar_stack(pre_pair, post_pair, history, window=DEFAULT_WINDOW):
    """Assemble the pre- and post-event three-band radar images.

    ``pre_pair`` is the no-change acquisition pair, ``post_pair`` the pair
    spanning the event (its first acquisition is the pre-event scene, its
    second the post-event scene). Intensities are multi-looked; the
    multitemporal band is the mean of the multi-looked intensities in
    ``history`` and is shared by both stacks.
    """
    if len(pre_pair) != 2 or len(post_pair) != 2:
        raise ValueError("acquisition pairs must have exactly two rasters each")
    history = list(history)
    if not history:
        raise ValueError("history must contain at least one acquisition")
    _same_geometry([z.grid for z in (*pre_pair, *post_pair, *history)])
    temporal = temporal_multilook([multilook(intensity(z), window) for z in history])
    pre = RadarStack(
        intensity=multilook(intensity(post_pair[0]), window),
        multitemporal=temporal,
        coherence=coherence(pre_pair[0], pre_pair[1], window),
    )
    post = RadarStack(
        intensity=multilook(intensity(post_pair[1]), window),
        multitemporal=temporal,
        coherence=coherence(post_pair[0], post_pair[1], window),
    )
    return pre, post


def complex_from_bundle(bundle, band):
    """Pull one acquisition out of a ``c64`` bundle as a :class:`ComplexRaster`."""
    if bundle.dtype != "c64":
        raise ValueError(f"expected a c64 bundle, got {bundle.dtype}")
    idx = band if isinstance(band, int) else bundle.band_names.index(band)
    return ComplexRaster(bundle.data[idx], bundle.grid)
