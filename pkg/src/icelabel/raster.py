"""Core raster types and the 8-bit RGB/HSV conversions shared by every stage.

HSV convention (fixed, bit-exact contract):
  * V = max(r, g, b)
  * S = 0 when V = 0, else round(255 * (V - min) / V)
  * H = hexagonal hue in degrees [0, 360), halved and rounded into [0, 179],
    with 180 wrapping to 0.
  * every rounding is half-away-from-zero.

Hue lives on the half-degree scale so it fits a uint8 sample. Upstream color
bounds quoted with hue above 179 are clamped to 179 (hue is pass-all in the
shipped scheme anyway, the V bands carry the class signal).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


def round_half_up(x: np.ndarray | float) -> np.ndarray | float:
    """Round half away from zero. Callers only pass nonnegative values."""
    return np.floor(x + 0.5)


class ClassId(enum.IntEnum):
    """Surface classes, ordered by precedence (also the tie-break order)."""

    THICK_ICE = 0
    THIN_ICE = 1
    OPEN_WATER = 2


# Render colors: thick ice red, thin ice blue, open water green.
CLASS_COLORS: dict[ClassId, tuple[int, int, int]] = {
    ClassId.THICK_ICE: (255, 0, 0),
    ClassId.THIN_ICE: (0, 0, 255),
    ClassId.OPEN_WATER: (0, 255, 0),
}

COLOR_TO_CLASS: dict[tuple[int, int, int], ClassId] = {
    color: cls for cls, color in CLASS_COLORS.items()
}


@dataclass(eq=False)
class SceneRaster:
    """8-bit interleaved RGB raster plus the scene it came from."""

    data: np.ndarray
    scene_id: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {self.data.dtype}")
        if self.data.shape[0] == 0 or self.data.shape[1] == 0:
            raise ValueError("empty raster")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def same_pixels(self, other: "SceneRaster") -> bool:
        return np.array_equal(self.data, other.data)


@dataclass(eq=False)
class Tile:
    """One square tile cut from a scene, addressed by its grid position."""

    raster: SceneRaster
    scene_id: str
    grid_row: int
    grid_col: int

    def __post_init__(self) -> None:
        if self.raster.width != self.raster.height:
            raise ValueError(
                f"tile raster must be square, got {self.raster.width}x{self.raster.height}"
            )
        if self.grid_row < 0 or self.grid_col < 0:
            raise ValueError("grid position must be nonnegative")


@dataclass(eq=False)
class HsvRaster:
    """Per-pixel (h, s, v) triples in the 8-bit convention (h <= 179)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {self.data.dtype}")
        if self.data[..., 0].max(initial=0) > 179:
            raise ValueError("hue channel exceeds 179")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(eq=False)
class LabelMask:
    """Per-pixel ClassId; every pixel carries exactly one class."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"expected 2-d array, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"expected uint8 class ids, got {self.data.dtype}")
        if self.data.max(initial=0) > max(ClassId):
            raise ValueError("class id out of range")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def same_labels(self, other: "LabelMask") -> bool:
        return np.array_equal(self.data, other.data)


def rgb_to_hsv(r: int, g: int, b: int) -> tuple[int, int, int]:
    """Convert one 8-bit RGB sample to the package HSV convention."""
    v = max(r, g, b)
    mn = min(r, g, b)
    c = v - mn
    s = 0 if v == 0 else int(np.floor(255.0 * c / v + 0.5))
    if c == 0:
        h = 0
    else:
        if v == r:
            hdeg = (60.0 * (g - b) / c) % 360.0
        elif v == g:
            hdeg = 60.0 * (b - r) / c + 120.0
        else:
            hdeg = 60.0 * (r - g) / c + 240.0
        h = int(np.floor(hdeg / 2.0 + 0.5))
        if h == 180:
            h = 0
    return h, s, v


def hsv_to_rgb(h: int, s: int, v: int) -> tuple[int, int, int]:
    """Invert rgb_to_hsv up to quantization of the stored hue/saturation."""
    if s == 0:
        return v, v, v
    hdeg = 2.0 * h
    sector = int(hdeg // 60.0) % 6
    f = hdeg / 60.0 - hdeg // 60.0
    sf = s / 255.0
    p = int(np.floor(v * (1.0 - sf) + 0.5))
    q = int(np.floor(v * (1.0 - sf * f) + 0.5))
    t = int(np.floor(v * (1.0 - sf * (1.0 - f)) + 0.5))
    return (
        (v, t, p),
        (q, v, p),
        (p, v, t),
        (p, q, v),
        (t, p, v),
        (v, p, q),
    )[sector]


def convert_raster(raster: SceneRaster) -> HsvRaster:
    """Vectorized per-pixel rgb_to_hsv over a whole raster."""
    rgb = raster.data.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    c = v - mn

    s = np.zeros_like(v)
    nz = v > 0
    s[nz] = np.floor(255.0 * c[nz] / v[nz] + 0.5)

    h = np.zeros_like(v)
    chroma = c > 0
    # Guard the divisions; masked-out lanes are discarded by np.select.
    safe_c = np.where(chroma, c, 1.0)
    hdeg = np.select(
        [v == r, v == g],
        [
            np.mod(60.0 * (g - b) / safe_c, 360.0),
            60.0 * (b - r) / safe_c + 120.0,
        ],
        default=60.0 * (r - g) / safe_c + 240.0,
    )
    half = np.floor(hdeg / 2.0 + 0.5)
    half[half == 180.0] = 0.0
    h[chroma] = half[chroma]

    out = np.stack([h, s, v], axis=-1).astype(np.uint8)
    return HsvRaster(out)
