import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodfuse.geodata import (
    GeometryError, GridSpec, LabelError, Polygon, RasterBundle, SceneConfig, TileSample, VectorLabels,
    apply_dihedral, augment, compose, export_png, extract_tiles, inverse, load_labels, rasterize,
    read_bundle, save_labels, split_partitions, synth_scene, tile_anchors, tile_count, write_bundle,
)

from helpers import point_in_polygon


# ------------------------------------------------------------------ raster

@pytest.mark.parametrize("tag,dtype", [("f32", np.float32), ("c64", np.complex64), ("u8", np.uint8)])
def test_bundle_round_trip_bit_exact(tmp_path, tag, dtype):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((3, 5, 7)) * 50
    if tag == "c64":
        data = data + 1j * rng.standard_normal((3, 5, 7))
    data = np.abs(data) if tag == "u8" else data
    b = RasterBundle(data.astype(dtype), GridSpec(7, 5, 2.5, 10.0, 20.0, "x"), ["a", "b", "c"], tag)
    write_bundle(b, tmp_path / "b")
    back = read_bundle(tmp_path / "b")
    assert back.data.tobytes() == b.data.tobytes()
    assert back.grid == b.grid and back.band_names == b.band_names and back.dtype == tag
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    assert set(meta) == {"width", "height", "bands", "dtype", "origin_x", "origin_y", "pixel_size", "crs",
                         "band_names"}
    assert (tmp_path / "b" / "data.bin").stat().st_size == 7 * 5 * 3 * np.dtype(dtype).itemsize


def test_bundle_truncated_file_rejected(tmp_path):
    write_bundle(RasterBundle(np.zeros((1, 4, 4), np.float32), GridSpec(4, 4, 1.0)), tmp_path / "b")
    raw = (tmp_path / "b" / "data.bin").read_bytes()
    (tmp_path / "b" / "data.bin").write_bytes(raw[:-4])
    with pytest.raises(GeometryError, match="bytes"):
        read_bundle(tmp_path / "b")


def test_bundle_validation():
    with pytest.raises(GeometryError):
        GridSpec(4, 4, 0.0)
    with pytest.raises(ValueError, match="unique"):
        RasterBundle(np.zeros((2, 4, 4)), GridSpec(4, 4, 1.0), ["a", "a"])
    with pytest.raises(GeometryError):
        RasterBundle(np.zeros((1, 4, 5)), GridSpec(4, 4, 1.0))
    with pytest.raises(ValueError, match="dtype"):
        RasterBundle(np.zeros((1, 4, 4)), GridSpec(4, 4, 1.0), dtype="f64")


def test_export_png_with_sidecar(tmp_path):
    from PIL import Image

    b = RasterBundle(np.arange(16, dtype=np.float32).reshape(1, 4, 4), GridSpec(4, 4, 1.0))
    export_png(b, tmp_path / "x.png")
    img = np.asarray(Image.open(tmp_path / "x.png"))
    assert img.min() == 0 and img.max() == 255
    side = json.loads((tmp_path / "x.json").read_text())
    assert side["min"] == 0 and side["max"] == 15 and side["grid"]["width"] == 4
    export_png(np.full((1, 2, 2), 5.0), tmp_path / "y.png", scaling="fixed", value_range=(0, 10))
    assert np.asarray(Image.open(tmp_path / "y.png")).max() == 128


def test_window_alignment():
    g = GridSpec(100, 50, 10.0, 0.0, 500.0)
    assert g.window(100.0, 400.0, 320.0) == (10, 10, 32)
    with pytest.raises(GeometryError):
        g.window(105.0, 400.0, 320.0)


# ------------------------------------------------------------------ vector

def test_square_covering_block_gives_sixteen():
    g = GridSpec(10, 10, 1.0, 0.0, 10.0)
    out = rasterize([Polygon.rectangle(2, 3, 6, 7)], g)
    assert out.sum() == 16
    assert out[3:7, 2:6].all()


def test_empty_labels_all_zero():
    assert rasterize(VectorLabels([]), GridSpec(5, 5, 1.0)).sum() == 0


def test_unclosed_ring_rejected():
    with pytest.raises(LabelError):
        Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    with pytest.raises(LabelError):
        VectorLabels.from_geojson({"type": "FeatureCollection", "features": [{
            "type": "Feature", "properties": {"class": "building"},
            "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0.5]]]}}]})


def test_random_triangles_match_point_in_polygon():
    rng = np.random.default_rng(0)
    g = GridSpec(24, 20, 1.0, 0.0, 20.0)
    for _ in range(100):
        pts = rng.uniform([-2, -2], [26, 22], (3, 2))
        ring = np.vstack([pts, pts[:1]])
        got = rasterize([Polygon(ring)], g)
        for r in range(g.height):
            for c in range(g.width):
                assert got[r, c] == point_in_polygon(c + 0.5, 20.0 - (r + 0.5), ring)


def test_hole_excluded():
    g = GridSpec(10, 10, 1.0, 0.0, 10.0)
    outer = [(0, 0), (10, 0), (10, 10), (0, 10), (0, 0)]
    hole = [(3, 3), (7, 3), (7, 7), (3, 7), (3, 3)]
    out = rasterize([Polygon(outer, [hole])], g)
    assert out.sum() == 100 - 16


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), st.integers(1, 8), st.integers(1, 8), st.sampled_from([0.5, 1.0, 2.0]))
def test_rectangle_area_consistency(x, y, w, h, px):
    g = GridSpec(24, 24, px, 0.0, 24 * px)
    poly = Polygon.rectangle(x * px, y * px, (x + w) * px, (y + h) * px)
    assert rasterize([poly], g).sum() * px * px == pytest.approx(w * h * px * px)


def test_class_selection_and_geojson_round_trip(tmp_path):
    labels = VectorLabels([Polygon.rectangle(0, 0, 4, 4, "building"),
                           Polygon.rectangle(5, 5, 9, 9, "flooded_building")])
    g = GridSpec(10, 10, 1.0, 0.0, 10.0)
    assert rasterize(labels, g).sum() == 32
    assert rasterize(labels, g, "flooded_building").sum() == 16
    save_labels(labels, tmp_path / "l.geojson")
    back = load_labels(tmp_path / "l.geojson")
    assert [p.cls for p in back.polygons] == ["building", "flooded_building"]
    np.testing.assert_array_equal(rasterize(back, g), rasterize(labels, g))


# ------------------------------------------------------------------- tiles

def test_tile_count_reference_case():
    assert tile_count(2000, 960, 100) * tile_count(1000, 960, 100) == 11
    assert tile_count(960, 960, 100) == 1
    assert tile_count(900, 960, 100) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 20), st.integers(1, 10))
def test_tile_count_matches_enumeration(w, h, tile, stride):
    g = GridSpec(w, h, 1.0, 0.0, float(h))
    anchors = tile_anchors(g, tile, stride)
    brute = [(x, y) for y in range(0, h - tile + 1, stride) for x in range(0, w - tile + 1, stride)]
    assert len(anchors) == len(brute) == tile_count(w, tile, stride) * tile_count(h, tile, stride)
    assert [(a[2], h - a[3]) for a in anchors] == brute


def _two_sensor(w_m=100.0, h_m=60.0):
    a = RasterBundle(np.arange(w_m * h_m / 25, dtype=np.float32).reshape(1, int(h_m / 5), int(w_m / 5)),
                     GridSpec(int(w_m / 5), int(h_m / 5), 5.0, 0.0, h_m))
    b = RasterBundle(np.zeros((2, int(h_m / 10), int(w_m / 10)), np.float32),
                     GridSpec(int(w_m / 10), int(h_m / 10), 10.0, 0.0, h_m))
    return {"a": a, "b": b}


def test_extract_tiles_shapes_and_alignment():
    tiles = extract_tiles(_two_sensor(), 40.0, 20.0)
    assert len(tiles) == tile_count(100, 40, 20) * tile_count(60, 40, 20)
    for t in tiles:
        assert t.sensors["a"].shape == (1, 8, 8) and t.sensors["b"].shape == (2, 4, 4)
    t = tiles[1]
    assert t.anchor == (20.0, 60.0)
    np.testing.assert_array_equal(t.sensors["a"][0, 0, :3], [4, 5, 6])


def test_extract_tiles_rejects_inconsistent_georeferencing():
    r = _two_sensor()
    r["b"] = RasterBundle(r["b"].data, GridSpec(10, 6, 10.0, 5.0, 60.0))
    with pytest.raises(GeometryError):
        extract_tiles(r, 40.0, 20.0)


def test_tile_larger_than_extent_warns():
    with pytest.warns(UserWarning, match="exceeds"):
        assert extract_tiles(_two_sensor(), 200.0, 20.0) == []


def _sample(rng):
    return TileSample("t", (0, 0), 10, {"s": rng.standard_normal((3, 6, 6))},
                      {"l": rng.integers(0, 2, (6, 6)).astype(np.uint8)})


def test_dihedral_identity_and_closure():
    rng = np.random.default_rng(0)
    s = _sample(rng)
    np.testing.assert_array_equal(augment(s, 0).sensors["s"], s.sensors["s"])
    twice = augment(augment(s, 4), 4)
    np.testing.assert_array_equal(twice.sensors["s"], s.sensors["s"])
    r = s
    for _ in range(4):
        r = augment(r, 1)
    np.testing.assert_array_equal(r.sensors["s"], s.sensors["s"])
    np.testing.assert_array_equal(r.labels["l"], s.labels["l"])


def test_dihedral_group_table():
    x = np.arange(16).reshape(4, 4)
    images = {op: apply_dihedral(x, op).tobytes() for op in range(8)}
    assert len(set(images.values())) == 8
    for a in range(8):
        assert compose(a, inverse(a)) == 0
        for b in range(8):
            np.testing.assert_array_equal(apply_dihedral(apply_dihedral(x, a), b), apply_dihedral(x, compose(a, b)))


def test_augment_preserves_class_counts():
    s = _sample(np.random.default_rng(1))
    for op in range(8):
        assert augment(s, op).labels["l"].sum() == s.labels["l"].sum()


def test_augment_rejects_non_square():
    s = TileSample("t", (0, 0), 10, {"s": np.zeros((1, 4, 5))}, {})
    with pytest.raises(ValueError, match="square"):
        augment(s, 1)


def _grid_tiles(nx, ny=1, size=10.0):
    return [TileSample(f"{i}_{j}", (i * size / 2, 100.0 - j * size / 2), size) for j in range(ny) for i in range(nx)]


def test_split_straddling_goes_to_test():
    tiles = split_partitions(_grid_tiles(20), boundary=22.0, test_side="west")
    for t in tiles:
        xmin, _, xmax, _ = t.bounds
        if xmin < 22.0:
            assert t.split == "test"
        else:
            assert t.split in ("train", "val")


def test_split_four_to_one():
    with pytest.warns(UserWarning):
        tiles = split_partitions(_grid_tiles(100), boundary=-1.0, seed=3)
    assert sum(t.split == "train" for t in tiles) == 80
    assert sum(t.split == "val" for t in tiles) == 20


def test_split_boundary_outside_extent_warns_and_has_no_test():
    with pytest.warns(UserWarning, match="one side"):
        tiles = split_partitions(_grid_tiles(10), boundary=-100.0)
    assert not any(t.split == "test" for t in tiles)


def test_split_deterministic_under_seed():
    a = [t.split for t in split_partitions(_grid_tiles(30), 10.0, seed=5)]
    b = [t.split for t in split_partitions(_grid_tiles(30), 10.0, seed=5)]
    assert a == b


# ------------------------------------------------------------------- synth

def test_synth_contract_and_determinism():
    cfg = SceneConfig(width_m=320.0, height_m=320.0, n_buildings=15)
    a, b = synth_scene(4, cfg), synth_scene(4, cfg)
    assert a.bundles["s1_pre"].dtype == "c64" and a.bundles["s2_post"].bands == 10
    assert a.bundles["vhr"].dtype == "u8" and a.bundles["vhr"].bands == 3
    for k in a.bundles:
        assert a.bundles[k].data.tobytes() == b.bundles[k].data.tobytes()


def test_synth_flood_fraction_zero():
    scene = synth_scene(0, SceneConfig(width_m=320.0, height_m=320.0, n_buildings=15, flood_fraction=0.0))
    g = scene.bundles["s2_pre"].grid
    assert rasterize(scene.labels, g, "flooded_building").sum() == 0
    assert not scene.labels.of_class("flooded_building")


def test_synth_rejects_oversized_building():
    with pytest.raises(ValueError):
        synth_scene(0, SceneConfig(width_m=320.0, height_m=320.0, building_min_m=10, building_max_m=400))


def test_synth_flooded_building_loses_coherence_without_noise():
    from floodfuse import sar

    cfg = SceneConfig(width_m=320.0, height_m=320.0, n_buildings=12, flood_fraction=0.5, s1_decorrelation=0.0)
    scene = synth_scene(1, cfg)
    b = scene.bundles
    g = b["s1_pre"].grid
    flooded = scene.labels.of_class("flooded_building")
    assert flooded
    mask = rasterize([flooded[0]], g).astype(bool)
    pre = sar.coherence(*[sar.complex_from_bundle(b["s1_pre"], i) for i in range(2)], window=3).values
    post = sar.coherence(*[sar.complex_from_bundle(b["s1_post"], i) for i in range(2)], window=3).values
    assert post[mask].mean() < pre[mask].mean()
