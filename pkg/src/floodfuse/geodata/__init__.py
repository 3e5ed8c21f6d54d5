"""Raster/vector I/O, label rasterization, tiling and synthetic scenes."""
from .raster import GeometryError, GridSpec, RasterBundle, export_png, read_bundle, write_bundle
from .synth import Scene, SceneConfig, synth_scene
from .tiles import (
    DIHEDRAL_OPS,
    TileSample,
    apply_dihedral,
    augment,
    compose,
    extract_tiles,
    inverse,
    split_partitions,
    tile_anchors,
    tile_count,
)
from .vector import LabelError, Polygon, VectorLabels, load_labels, rasterize, save_labels

__all__ = [
    "GeometryError", "GridSpec", "RasterBundle", "export_png", "read_bundle", "write_bundle",
    "Scene", "SceneConfig", "synth_scene",
    "DIHEDRAL_OPS", "TileSample", "apply_dihedral", "augment", "compose", "extract_tiles",
    "inverse", "split_partitions", "tile_anchors", "tile_count",
    "LabelError", "Polygon", "VectorLabels", "load_labels", "rasterize", "save_labels",
]
