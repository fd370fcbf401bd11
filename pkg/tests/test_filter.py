import numpy as np
import pytest

from icelabel.cloudfilter import (
    FilterConfig,
    FilterOutput,
    apply_filter,
    detect_mask,
    estimate_background,
)
from icelabel.raster import ClassId, SceneRaster
from icelabel.segmentation import ROSS_SEA_SUMMER, segment
from icelabel.synth import generate_corpus, inject_swath

from oracles import dilate_oracle, median_oracle


def gray3(v):
    return SceneRaster(np.repeat(v[:, :, None], 3, axis=2))


def accuracy(raster, labels):
    return float((segment(raster, ROSS_SEA_SUMMER).data == labels.data).mean())


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(bg_dilate_k=4)
    with pytest.raises(ValueError):
        FilterConfig(bg_median_k=1)
    with pytest.raises(ValueError):
        FilterConfig(mask_mode="adaptive")
    with pytest.raises(ValueError):
        FilterConfig(fixed_t=300)


def test_config_dict_round_trip():
    cfg = FilterConfig(bg_median_k=15, mask_mode="fixed", fixed_t=40, diff_truncate=True)
    assert FilterConfig.from_dict(cfg.to_dict()) == cfg
    assert FilterConfig.from_dict({}) == FilterConfig()


def test_output_validation():
    raster = gray3(np.zeros((8, 8), np.uint8))
    with pytest.raises(ValueError):
        FilterOutput(raster, np.zeros((4, 4), np.uint8), 0.0)
    with pytest.raises(ValueError):
        FilterOutput(raster, np.zeros((8, 8), np.uint8), 1.5)


def test_background_constant_is_identity():
    img = np.full((32, 32), 180, np.uint8)
    assert np.array_equal(estimate_background(img, FilterConfig()), img)


def test_background_fills_small_hole():
    img = np.full((64, 64), 220, np.uint8)
    img[30:33, 30:33] = 40
    cfg = FilterConfig()
    bg = estimate_background(img, cfg)
    assert (bg == 220).all()
    assert np.array_equal(bg, median_oracle(dilate_oracle(img, 7), 21))


def test_background_lifts_checkerboard():
    yy, xx = np.indices((64, 64))
    img = np.where((yy // 2 + xx // 2) % 2 == 0, 60, 200).astype(np.uint8)
    assert (estimate_background(img, FilterConfig()) == 200).all()


def test_detect_mask_uniform_is_empty():
    out = apply_filter(gray3(np.full((64, 64), 140, np.uint8)))
    assert out.affected_fraction == 0.0
    assert (out.cloud_shadow_mask == 0).all()
    assert out.filtered.same_pixels(gray3(np.full((64, 64), 140, np.uint8)))


def test_detect_mask_covers_haze_blob():
    rng = np.random.default_rng(0)
    v, delta = inject_swath(np.full((256, 256), 160, np.uint8), rng, (128, 128), 88, +40)
    mask = detect_mask(gray3(v), FilterConfig()) == 255
    blob = delta != 0
    assert mask[blob].mean() >= 0.80
    assert mask[~blob].mean() <= 0.05


def test_no_haze_boundary_scene_barely_masks():
    v = np.full((256, 256), 230, np.uint8)
    v[:, :128] = 10  # one sharp ice/water edge
    out = apply_filter(gray3(v))
    assert out.affected_fraction < 0.05


def test_repair_recenters_haze_blob():
    rng = np.random.default_rng(7)
    v, _ = inject_swath(np.full((256, 256), 200, np.uint8), rng, (128, 128), 110, +40, width=64)
    out = apply_filter(gray3(v))
    masked = out.cloud_shadow_mask == 255
    err = np.abs(out.filtered.data[:, :, 0].astype(int) - 200)
    assert masked.any()
    assert err[masked].max() <= 10


def test_repair_restores_shadowed_ice():
    rng = np.random.default_rng(3)
    v, delta = inject_swath(np.full((256, 256), 230, np.uint8), rng, (128, 128), 88, -60)
    shadowed = gray3(v)
    assert (segment(shadowed, ROSS_SEA_SUMMER).data != ClassId.THICK_ICE).any()
    out = apply_filter(shadowed)
    assert out.filtered.data[:, :, 0][delta != 0].min() >= 205
    assert (segment(out.filtered, ROSS_SEA_SUMMER).data == ClassId.THICK_ICE).all()


def test_identity_off_mask():
    rng = np.random.default_rng(5)
    rasters = [SceneRaster(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))]
    rasters += [s.raster for s in generate_corpus(99, 4, 0.5, size=128)]
    for raster in rasters:
        out = apply_filter(raster)
        clear = out.cloud_shadow_mask == 0
        assert np.array_equal(out.filtered.data[clear], raster.data[clear])
        assert out.filtered.data.shape == raster.data.shape
        assert out.affected_fraction == float((~clear).mean())


def test_filter_is_deterministic():
    raster = generate_corpus(11, 2, 1.0)[0].raster
    a = apply_filter(raster)
    b = apply_filter(raster)
    assert a.filtered.same_pixels(b.filtered)
    assert np.array_equal(a.cloud_shadow_mask, b.cloud_shadow_mask)


def test_fixed_threshold_mode():
    rng = np.random.default_rng(1)
    v, delta = inject_swath(np.full((256, 256), 160, np.uint8), rng, (128, 128), 88, +40)
    cfg = FilterConfig(mask_mode="fixed", fixed_t=50)
    mask = detect_mask(gray3(v), cfg) == 255
    assert mask[delta != 0].mean() >= 0.80
    assert apply_filter(gray3(np.full((32, 32), 9, np.uint8)), cfg).affected_fraction == 0.0


def test_benefit_is_monotone_on_hazy_scenes():
    for scene in generate_corpus(20260816, 12, 0.5):
        before = accuracy(scene.raster, scene.labels)
        after = accuracy(apply_filter(scene.raster).filtered, scene.labels)
        if scene.hazy:
            assert after > before, scene.scene_id
        else:
            assert after >= 0.999, scene.scene_id
