"""File interface to the labeling pipeline's output layout.

The trainer never imports the labeling package; everything arrives as
files. A run directory holds ``manifest.json`` plus ``filtered/`` and
``labels/`` with one PNG per scene, paired by file stem. Label images
use one flat RGB color per class:

    index 0, thick ice:  (255, 0, 0)
    index 1, thin ice:   (0, 0, 255)
    index 2, open water: (0, 255, 0)
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

CLASS_COLORS = ((255, 0, 0), (0, 0, 255), (0, 255, 0))


def read_png(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_png(path: str, data: np.ndarray) -> None:
    if data.dtype != np.uint8:
        raise ValueError(f"expected uint8 image data, got {data.dtype}")
    Image.fromarray(data, "RGB").save(path, "PNG")


def decode_labels(img: np.ndarray, path: str = "") -> np.ndarray:
    """Color image -> int64 class-index mask. Unknown colors are loud."""
    mask = np.full(img.shape[:2], -1, np.int64)
    for idx, color in enumerate(CLASS_COLORS):
        mask[(img == np.asarray(color, np.uint8)).all(axis=-1)] = idx
    if (mask < 0).any():
        y, x = np.argwhere(mask < 0)[0]
        raise ValueError(f"{path or 'label image'}: unknown label color "
                         f"{tuple(int(v) for v in img[y, x])} at row {y}, col {x}")
    return mask


def encode_labels(mask: np.ndarray) -> np.ndarray:
    """Class-index mask -> color image, inverse of decode_labels."""
    if mask.min() < 0 or mask.max() >= len(CLASS_COLORS):
        raise ValueError(f"class index out of range: {int(mask.min())}..{int(mask.max())}")
    lut = np.asarray(CLASS_COLORS, np.uint8)
    return lut[mask]


def cut_tiles(img: np.ndarray, size: int) -> list:
    """(tile, row, col) squares covering the image, zero-padded at the
    ragged edges. Works for both (h, w, 3) images and (h, w) masks."""
    h, w = img.shape[:2]
    tiles = []
    for row, y in enumerate(range(0, h, size)):
        for col, x in enumerate(range(0, w, size)):
            tile = np.zeros((size, size) + img.shape[2:], img.dtype)
            piece = img[y:y + size, x:x + size]
            tile[:piece.shape[0], :piece.shape[1]] = piece
            tiles.append((tile, row, col))
    return tiles


def stitch_tiles(tiles: list, height: int, width: int) -> np.ndarray:
    """Inverse of cut_tiles for (tile, row, col) lists; crops the padding."""
    if not tiles:
        raise ValueError("no tiles to stitch")
    size = tiles[0][0].shape[0]
    rows = 1 + max(r for _, r, _ in tiles)
    cols = 1 + max(c for _, _, c in tiles)
    canvas = np.zeros((rows * size, cols * size) + tiles[0][0].shape[2:],
                      tiles[0][0].dtype)
    for tile, row, col in tiles:
        canvas[row * size:(row + 1) * size, col * size:(col + 1) * size] = tile
    return canvas[:height, :width]


def scene_stems(directory: str) -> list:
    return sorted(os.path.splitext(n)[0] for n in os.listdir(directory)
                  if n.lower().endswith(".png"))


def load_pairs(images_dir: str, labels_dir: str, tile_size: int) -> list:
    """(image tile, class mask tile) pairs cut from every scene, paired
    by file stem. A scene without a matching label image is an error."""
    pairs = []
    for stem in scene_stems(images_dir):
        image_path = os.path.join(images_dir, f"{stem}.png")
        label_path = os.path.join(labels_dir, f"{stem}.png")
        if not os.path.isfile(label_path):
            raise ValueError(f"no label image for scene {stem!r}: {label_path}")
        image = read_png(image_path)
        mask = decode_labels(read_png(label_path), label_path)
        if image.shape[:2] != mask.shape:
            raise ValueError(f"{stem}: image {image.shape[:2]} and label "
                             f"{mask.shape} sizes differ")
        for (tile, row, col), (mtile, _, _) in zip(cut_tiles(image, tile_size),
                                                   cut_tiles(mask, tile_size)):
            pairs.append((tile, mtile))
    if not pairs:
        raise ValueError(f"no scenes under {images_dir}")
    return pairs


def load_run(run_dir: str, tile_size: int) -> list:
    """Pairs from a pipeline run directory, located via its manifest."""
    manifest_path = os.path.join(run_dir, "manifest.json")
    outputs = {}
    if os.path.isfile(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            outputs = json.load(fh).get("outputs", {})
    images_dir = os.path.join(run_dir, outputs.get("filtered", "filtered"))
    labels_dir = os.path.join(run_dir, outputs.get("labels", "labels"))
    for d in (images_dir, labels_dir):
        if not os.path.isdir(d):
            raise ValueError(f"run directory is missing {d}")
    return load_pairs(images_dir, labels_dir, tile_size)


def train_val_split(pairs: list, val_fraction: float, seed: int) -> tuple:
    """Deterministic shuffle, then an 80/20-style split. The validation
    side may be empty for tiny corpora; the training side never is."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction out of range: {val_fraction}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    n_val = int(round(len(pairs) * val_fraction))
    n_val = min(n_val, len(pairs) - 1)
    val_idx = set(order[:n_val].tolist())
    train = [pairs[i] for i in range(len(pairs)) if i not in val_idx]
    val = [pairs[i] for i in sorted(val_idx)]
    return train, val
