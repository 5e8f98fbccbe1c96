import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image
from shapely.geometry import box

from oracles import mask_iou, raster_pixel_centres
from pvparam.geometry import Affine
from pvparam.synthetic import rasterize_pixel_centres
from pvparam.vectorize import (
    GeoreferencedMask,
    MaskError,
    PixelComponent,
    RefineParams,
    extract_components,
    load_georeferenced_mask,
    read_worldfile,
    refine_component_geometry,
    refine_component_polygon,
    vectorize_mask,
    write_worldfile,
)

IDENT = Affine(1, 0, 0, 0, 1, 0)


def _component(bits) -> PixelComponent:
    rows, cols = np.nonzero(np.asarray(bits, bool))
    return PixelComponent(0, np.column_stack((rows, cols)))


def _write_worldfile(path, values):
    path.write_text("\n".join(str(v) for v in values) + "\n")


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_threshold_2x2(tmp_path, suffix):
    img = tmp_path / f"m{suffix}"
    Image.fromarray(np.array([[255, 0], [0, 255]], dtype=np.uint8), mode="L").save(img)
    wf = tmp_path / "m.wld"
    _write_worldfile(wf, [1, 0, 0, -1, 0, 0])
    m = load_georeferenced_mask(img, wf, threshold=128)
    assert m.bits.tolist() == [[True, False], [False, True]]
    assert (m.width, m.height) == (2, 2)


def test_threshold_is_inclusive(tmp_path):
    img = tmp_path / "m.pgm"
    Image.fromarray(np.array([[127, 128, 129]], dtype=np.uint8), mode="L").save(img)
    wf = tmp_path / "m.pgw"
    _write_worldfile(wf, [1, 0, 0, -1, 0, 0])
    assert load_georeferenced_mask(img, wf, threshold=128).bits.tolist() == [[False, True, True]]


def test_worldfile_maps_pixel_zero(tmp_path):
    wf = tmp_path / "a.pgw"
    _write_worldfile(wf, [0.3, 0, 0, -0.3, 1000.15, 2000.15])
    tf = read_worldfile(wf)
    assert tf.apply(0, 0) == pytest.approx((1000.15, 2000.15), abs=1e-12)
    # x = A col + B row + C with lines in order A, D, B, E, C, F
    assert tf.apply(2, 5) == pytest.approx((0.3 * 2 + 1000.15, -0.3 * 5 + 2000.15), abs=1e-9)
    out = tmp_path / "b.pgw"
    write_worldfile(out, tf)
    assert read_worldfile(out) == tf


def test_all_zero_image(tmp_path):
    img = tmp_path / "z.pgm"
    Image.fromarray(np.zeros((5, 7), dtype=np.uint8), mode="L").save(img)
    wf = tmp_path / "z.pgw"
    _write_worldfile(wf, [1, 0, 0, -1, 0, 0])
    m = load_georeferenced_mask(img, wf)
    assert not m.bits.any()
    assert vectorize_mask(m) == []


@pytest.mark.parametrize(
    "lines",
    [[0.3, 0, 0, -0.3, 1.0], [0.3, 0, 0, -0.3, 1.0, "x"], [0, 0, 0, 0, 1, 1], [1, 2, 2, 4, 0, 0]],
)
def test_bad_worldfile(tmp_path, lines):
    img = tmp_path / "m.pgm"
    Image.fromarray(np.zeros((2, 2), dtype=np.uint8), mode="L").save(img)
    wf = tmp_path / "m.pgw"
    _write_worldfile(wf, lines)
    with pytest.raises(MaskError):
        load_georeferenced_mask(img, wf)


def test_unreadable_image(tmp_path):
    wf = tmp_path / "m.pgw"
    _write_worldfile(wf, [1, 0, 0, -1, 0, 0])
    with pytest.raises(MaskError):
        load_georeferenced_mask(tmp_path / "missing.pgm", wf)
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"not an image")
    with pytest.raises(MaskError):
        load_georeferenced_mask(bad, wf)


def test_mask_shape_checked():
    with pytest.raises(MaskError):
        GeoreferencedMask(3, 2, np.zeros((3, 3)), IDENT)
    with pytest.raises(MaskError):
        GeoreferencedMask(2, 2, np.zeros((2, 2)), Affine(1, 1, 0, 1, 1, 0))


def test_diagonal_pixels_connectivity():
    m = GeoreferencedMask.from_array([[1, 0], [0, 1]])
    assert len(extract_components(m, min_component_px=1, connectivity=8)) == 1
    four = extract_components(m, min_component_px=1, connectivity=4)
    assert [c.size for c in four] == [1, 1]
    assert extract_components(m, min_component_px=2, connectivity=4) == []


def test_two_blocks_sizes_and_order():
    bits = np.zeros((30, 30), bool)
    bits[15:25, 2:12] = True
    bits[3:6, 20:23] = True
    comps = extract_components(GeoreferencedMask.from_array(bits), min_component_px=4)
    # ordered by (min row, min col): the 3x3 block starts higher up
    assert [c.size for c in comps] == [9, 100]


@settings(max_examples=100, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 20), st.integers(1, 20))), st.sampled_from([4, 8]))
def test_partition_property(bits, conn):
    comps = extract_components(GeoreferencedMask.from_array(bits), min_component_px=1, connectivity=conn)
    seen = np.zeros(bits.shape, int)
    for c in comps:
        seen[c.pixels[:, 0], c.pixels[:, 1]] += 1
    assert np.array_equal(seen, bits.astype(int))
    keys = [tuple(c.pixels.min(axis=0)) for c in comps]
    firsts = [tuple(c.pixels[0]) for c in comps]
    assert firsts == sorted(firsts)
    assert all(k[0] == f[0] for k, f in zip(keys, firsts))


def test_filled_rectangle_is_its_mbr():
    bits = np.zeros((20, 30), bool)
    bits[4:14, 6:26] = True
    geom, stats = refine_component_geometry(_component(bits))
    assert stats["depth"] == 0
    assert geom.equals(box(5.5, 3.5, 25.5, 13.5))


def test_l_shape_refinement():
    bits = np.zeros((60, 60), bool)
    bits[5:50, 5:20] = True
    bits[35:50, 5:55] = True
    geom, stats = refine_component_geometry(_component(bits))
    assert stats["depth"] <= 2
    k = 10
    got = raster_pixel_centres([geom], bits.shape, upsample=k)
    ref = np.kron(bits, np.ones((k, k), bool))
    assert mask_iou(got, ref) >= 0.98


def test_rectangle_with_hole():
    bits = np.zeros((50, 60), bool)
    bits[5:45, 5:55] = True
    bits[18:30, 20:38] = False
    poly = refine_component_polygon(_component(bits))
    assert len(poly.holes) == 1
    got = raster_pixel_centres([poly.to_shapely()], bits.shape, upsample=4)
    assert mask_iou(got, np.kron(bits, np.ones((4, 4), bool))) >= 0.95


def test_block_area_at_gsd():
    bits = np.zeros((40, 40), bool)
    bits[5:15, 8:28] = True
    m = GeoreferencedMask.from_array(bits, Affine(0.3, 0, 1000.15, 0, -0.3, 2000.15))
    (poly,) = vectorize_mask(m)
    assert poly.area_m2 == pytest.approx(10 * 20 * 0.09, abs=1e-6)
    assert poly.id == "pv-0000"


def test_small_block_dropped():
    bits = np.zeros((20, 20), bool)
    bits[5:7, 5:10] = True  # 10 px x 0.09 m2 = 0.9 m2
    m = GeoreferencedMask.from_array(bits, Affine(0.3, 0, 0, 0, -0.3, 0))
    assert vectorize_mask(m, RefineParams(min_area_m2=1.2)) == []
    assert len(vectorize_mask(m, RefineParams(min_area_m2=0.5))) == 1


def _random_blob(rng, shape=(40, 40)):
    bits = np.zeros(shape, bool)
    for _ in range(int(rng.integers(1, 4))):
        r0, c0 = rng.integers(2, 20, 2)
        h, w = rng.integers(4, 18, 2)
        bits[r0 : r0 + h, c0 : c0 + w] = True
    bits ^= rng.random(shape) < 0.02
    return bits


def test_refinement_containment_and_no_regression():
    rng = np.random.default_rng(7)
    p = RefineParams()
    for _ in range(40):
        bits = _random_blob(rng)
        for comp in extract_components(GeoreferencedMask.from_array(bits), p.min_component_px, p.connectivity):
            geom, _ = refine_component_geometry(comp, p)
            p1 = refine_component_geometry(comp, RefineParams(max_depth=0))[0]
            assert p1.buffer(1.0, join_style="mitre").covers(geom)
            target = np.zeros(bits.shape, bool)
            target[comp.pixels[:, 0], comp.pixels[:, 1]] = True
            iou_ref = mask_iou(raster_pixel_centres([geom], bits.shape), target)
            iou_p1 = mask_iou(raster_pixel_centres([p1], bits.shape), target)
            assert iou_ref >= iou_p1 - 1e-12


def test_determinism():
    rng = np.random.default_rng(11)
    bits = _random_blob(rng, (60, 60))
    m = GeoreferencedMask.from_array(bits, Affine(0.25, 0, 10.0, 0, -0.25, 20.0), "EPSG:28992")
    a = vectorize_mask(m, RefineParams(min_area_m2=0.1))
    b = vectorize_mask(m, RefineParams(min_area_m2=0.1))
    assert [p.id for p in a] == [p.id for p in b]
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x.exterior), np.asarray(y.exterior))
        assert len(x.holes) == len(y.holes)
        assert x.crs_id == "EPSG:28992"


def test_map_polygons_are_ccw_and_area_consistent():
    from pvparam.geometry import signed_ring_area

    bits = rasterize_pixel_centres([box(5, 5, 40, 30).difference(box(15, 12, 25, 20))], (45, 50))
    (poly,) = vectorize_mask(GeoreferencedMask.from_array(bits, Affine(0.3, 0, 0, 0, -0.3, 0)))
    assert signed_ring_area(poly.exterior) > 0
    assert all(signed_ring_area(h) < 0 for h in poly.holes)
    total = signed_ring_area(poly.exterior) + sum(signed_ring_area(h) for h in poly.holes)
    assert poly.area_m2 == pytest.approx(total, rel=1e-9)
