"""Inference and checkpoint round trips, using the shared toy model."""

import numpy as np
import pytest
import torch

from icetrain import (decode_labels, infer_dir, infer_mask, load_model,
                      read_png, save_model, write_png)


def test_white_scene_is_all_thick_ice(toy_result):
    white = np.full((64, 64, 3), 255, np.uint8)
    mask = infer_mask(toy_result.model, white)
    assert mask.shape == (64, 64)
    assert mask.dtype == np.uint8
    assert (mask == 0).all()


def test_dark_scene_is_all_open_water(toy_result):
    dark = np.full((64, 64, 3), 10, np.uint8)
    assert (infer_mask(toy_result.model, dark) == 2).all()


def test_ragged_scene_keeps_its_dimensions(toy_result):
    rng = np.random.default_rng(12)
    scene = rng.integers(0, 256, (100, 150, 3)).astype(np.uint8)
    mask = infer_mask(toy_result.model, scene)
    assert mask.shape == (100, 150)
    assert set(np.unique(mask)) <= {0, 1, 2}


def test_inference_is_deterministic(toy_result):
    scene = np.random.default_rng(13).integers(0, 256, (64, 64, 3)).astype(np.uint8)
    assert np.array_equal(infer_mask(toy_result.model, scene),
                          infer_mask(toy_result.model, scene))


def test_infer_mask_rejects_wrong_shape(toy_result):
    with pytest.raises(ValueError, match="expected"):
        infer_mask(toy_result.model, np.zeros((64, 64), np.uint8))


def test_checkpoint_round_trip(toy_result, tmp_path):
    path = str(tmp_path / "model.pt")
    save_model(path, toy_result.model)
    loaded = load_model(path)
    assert loaded.spec == toy_result.model.spec
    scene = np.random.default_rng(14).integers(0, 256, (64, 64, 3)).astype(np.uint8)
    assert np.array_equal(infer_mask(loaded, scene),
                          infer_mask(toy_result.model, scene))


def test_load_model_missing_path():
    with pytest.raises(ValueError, match="does not exist"):
        load_model("/nonexistent/model.pt")


def test_load_model_rejects_garbage_bytes(tmp_path):
    path = tmp_path / "junk.pt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError, match="not a model checkpoint"):
        load_model(str(path))


def test_load_model_rejects_wrong_payload(tmp_path):
    path = str(tmp_path / "odd.pt")
    torch.save({"weights": 1}, path)
    with pytest.raises(ValueError, match="not a model checkpoint"):
        load_model(path)


def test_infer_dir_writes_decodable_labels(toy_result, tmp_path):
    images = tmp_path / "scenes"
    images.mkdir()
    rng = np.random.default_rng(15)
    for stem in ("a", "b"):
        write_png(str(images / f"{stem}.png"),
                  rng.integers(0, 256, (64, 64, 3)).astype(np.uint8))
    out = tmp_path / "predicted"
    stems = infer_dir(toy_result.model, str(images), str(out))
    assert stems == ["a", "b"]
    for stem in stems:
        mask = decode_labels(read_png(str(out / f"{stem}.png")))
        assert mask.shape == (64, 64)


def test_infer_dir_empty_directory_is_loud(toy_result, tmp_path):
    empty = tmp_path / "none"
    empty.mkdir()
    with pytest.raises(ValueError, match="no scene PNGs"):
        infer_dir(toy_result.model, str(empty), str(tmp_path / "out"))
