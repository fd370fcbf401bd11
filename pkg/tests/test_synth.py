import numpy as np
import pytest

from icelabel.raster import ClassId
from icelabel.segmentation import ROSS_SEA_SUMMER, segment
from icelabel.synth import V_BANDS, feather_disc, generate_corpus, generate_scene, inject_swath


def test_same_seed_same_corpus():
    a = generate_corpus(42, 8, 0.5)
    b = generate_corpus(42, 8, 0.5)
    for sa, sb in zip(a, b):
        assert sa.raster.same_pixels(sb.raster)
        assert np.array_equal(sa.labels.data, sb.labels.data)
        assert np.array_equal(sa.delta, sb.delta)
        assert sa.hazy == sb.hazy and sa.scene_id == sb.scene_id


def test_different_seeds_differ():
    a = generate_corpus(1, 4, 0.0)
    b = generate_corpus(2, 4, 0.0)
    assert any(not sa.raster.same_pixels(sb.raster) for sa, sb in zip(a, b))


def test_haze_count_is_exact():
    assert sum(s.hazy for s in generate_corpus(7, 10, 0.3)) == 3
    assert sum(s.hazy for s in generate_corpus(7, 10, 0.0)) == 0
    assert sum(s.hazy for s in generate_corpus(7, 10, 1.0)) == 10
    with pytest.raises(ValueError):
        generate_corpus(7, 10, 1.5)


def test_clean_corpus_segments_perfectly():
    for scene in generate_corpus(5, 6, 0.0):
        assert not scene.hazy
        assert (scene.delta == 0).all()
        labels = segment(scene.raster, ROSS_SEA_SUMMER)
        assert np.array_equal(labels.data, scene.labels.data)


def test_levels_sit_inside_class_bands():
    for scene in generate_corpus(13, 6, 0.0):
        v = scene.raster.data[:, :, 0]
        for cls in ClassId:
            sel = scene.labels.data == cls
            if sel.any():
                lo, hi = V_BANDS[cls]
                assert lo <= v[sel].min() and v[sel].max() <= hi


def test_hazy_scene_is_single_class_with_swath():
    for scene in generate_corpus(21, 6, 1.0):
        assert scene.hazy
        assert len(np.unique(scene.labels.data)) == 1
        assert (scene.delta != 0).mean() > 0.10  # swath is a real feature, not a speck


def test_scenes_are_gray():
    scene = generate_scene(3, 0, hazy=True)
    data = scene.raster.data
    assert np.array_equal(data[:, :, 0], data[:, :, 1])
    assert np.array_equal(data[:, :, 0], data[:, :, 2])
    assert scene.scene_id == "scene-0000"


def test_scene_size_parameter():
    scene = generate_scene(3, 1, size=128)
    assert scene.raster.data.shape == (128, 128, 3)
    assert scene.labels.data.shape == (128, 128)


def test_feather_disc_profile():
    f = feather_disc((128, 128), (64, 64), 40)
    assert f.min() >= 0.0 and f.max() <= 1.0
    assert f[64, 64] == 1.0
    assert f[64, 64 - 40 + 24] == 1.0  # solid core reaches radius minus feather width
    assert f[64, 64 + 41] == 0.0
    assert f[0, 0] == 0.0


def test_inject_swath_is_local_and_accounted():
    rng = np.random.default_rng(0)
    v = np.full((128, 128), 100, np.uint8)
    out, delta = inject_swath(v, rng, (64, 64), 40, +50)
    yy, xx = np.indices(v.shape)
    outside = np.hypot(yy - 64, xx - 64) > 40.5
    assert (delta[outside] == 0).all()
    assert np.array_equal(out.astype(np.int16), v.astype(np.int16) + delta)
    assert (v == 100).all()  # input untouched
