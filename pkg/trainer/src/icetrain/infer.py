"""Checkpoints and inference: tiles in, class masks out.

Inference runs in eval mode under no_grad, so dropout is off and the
same input always yields the same mask. Scenes larger than the model's
tile size are cut, predicted per tile, and stitched back.
"""

from __future__ import annotations

import os

import numpy as np
import torch

from .data import cut_tiles, encode_labels, read_png, scene_stems, stitch_tiles, write_png
from .model import UNet, UNetSpec


def save_model(path: str, model: UNet) -> None:
    torch.save({"spec": model.spec.to_dict(), "state": model.state_dict()}, path)


def load_model(path: str) -> UNet:
    if not os.path.isfile(path):
        raise ValueError(f"model checkpoint does not exist: {path}")
    try:
        payload = torch.load(path, map_location="cpu")
    except Exception as exc:
        raise ValueError(f"not a model checkpoint: {path} ({exc})") from exc
    if not isinstance(payload, dict) or not {"spec", "state"} <= payload.keys():
        raise ValueError(f"not a model checkpoint: {path}")
    model = UNet(UNetSpec.from_dict(payload["spec"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def infer_mask(model: UNet, image: np.ndarray) -> np.ndarray:
    """Class-index mask for an (h, w, 3) uint8 image of any size."""
    if image.ndim != 3 or image.shape[2] != model.spec.in_channels:
        raise ValueError(f"expected (h, w, {model.spec.in_channels}) image, "
                         f"got shape {image.shape}")
    size = model.spec.input_size
    model.eval()
    predicted = []
    with torch.no_grad():
        for tile, row, col in cut_tiles(image, size):
            x = torch.from_numpy(tile).permute(2, 0, 1).unsqueeze(0).float() / 255.0
            mask = model.probabilities(x)[0].argmax(dim=0).numpy().astype(np.uint8)
            predicted.append((mask, row, col))
    return stitch_tiles(predicted, image.shape[0], image.shape[1])


def infer_dir(model: UNet, images_dir: str, out_dir: str) -> list:
    """Predict a color label PNG for every scene PNG. Returns stems."""
    stems = scene_stems(images_dir)
    if not stems:
        raise ValueError(f"no scene PNGs under {images_dir}")
    os.makedirs(out_dir, exist_ok=True)
    for stem in stems:
        mask = infer_mask(model, read_png(os.path.join(images_dir, f"{stem}.png")))
        write_png(os.path.join(out_dir, f"{stem}.png"), encode_labels(mask))
    return stems
