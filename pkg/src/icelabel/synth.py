"""Deterministic synthetic sea-ice corpus with exact ground truth.

Scenes are flat-level class regions whose V values sit inside each class
band, so a clean scene segments back to its construction labels exactly.
Injected haze and shadow are feathered level swaths carrying a faint dot
texture: the texture is what the detector keys on, the level shift is
what breaks labeling, and hazy scenes stay single-class so every repaired
pixel's truth is the dominant class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import ClassId, LabelMask, SceneRaster

# Flat-region levels per class.  Band edges stay well clear of the
# segmentation V boundaries (30/31, 204/205) so neither the swath feather
# nor the repair arithmetic can push a clean pixel across a class line.
V_BANDS = {
    ClassId.THICK_ICE: (225, 242),
    ClassId.THIN_ICE: (150, 165),
    ClassId.OPEN_WATER: (6, 22),
}

FEATHER_PX = 24
DOT_PERIOD = 4
DOT_AMPLITUDE = 6
TEXTURE_MIN_F = 0.35  # texture rides only where the swath is solid


@dataclass(frozen=True)
class SynthScene:
    raster: SceneRaster
    labels: LabelMask
    delta: np.ndarray  # int16 per-pixel V change applied by the injection
    hazy: bool

    @property
    def scene_id(self) -> str:
        return self.raster.scene_id


def feather_disc(shape: tuple[int, int], center: tuple[float, float], radius: float,
                 width: float = FEATHER_PX) -> np.ndarray:
    """1 inside, cos^2 rolloff across the outer `width` ring, 0 beyond."""
    yy, xx = np.ogrid[: shape[0], : shape[1]]
    r = np.hypot(yy - center[0], xx - center[1])
    t = np.clip((r - (radius - width)) / width, 0.0, 1.0)
    f = np.cos(0.5 * np.pi * t) ** 2
    f[t >= 1.0] = 0.0  # cos(pi/2) leaves a float residue; the tail is exactly zero
    return f


def inject_swath(v: np.ndarray, rng: np.random.Generator, center: tuple[float, float],
                 radius: float, delta: int, width: float = FEATHER_PX,
                 dot_amp: int = DOT_AMPLITUDE, dot_period: int = DOT_PERIOD,
                 texture_min: float = TEXTURE_MIN_F) -> tuple[np.ndarray, np.ndarray]:
    """Overlay one feathered haze/shadow swath on a V field.

    The solid part carries a sparse grid of brighter dots.  The grid pitch
    sits between the small and large filter windows, which is what lets a
    dilate-median background ride the swath level while a 3x3 median never
    sees a dot majority, so the swath registers everywhere it is solid.
    Returns the perturbed field and the int16 map of changes actually
    applied (clamping and rounding included).
    """
    f = feather_disc(v.shape, center, radius, width)
    oy = int(rng.integers(dot_period))
    ox = int(rng.integers(dot_period))
    yy, xx = np.indices(v.shape)
    dots = (yy % dot_period == oy) & (xx % dot_period == ox) & (f > texture_min)
    shifted = v.astype(np.float64) + delta * f + dot_amp * dots
    out = np.clip(np.rint(shifted), 0, 255).astype(np.uint8)
    return out, out.astype(np.int16) - v.astype(np.int16)


def _band_level(rng: np.random.Generator, cls: ClassId) -> int:
    lo, hi = V_BANDS[cls]
    return int(rng.integers(lo, hi + 1))


def _paint_minority_discs(rng: np.random.Generator, v: np.ndarray, labels: np.ndarray,
                          dominant: ClassId) -> None:
    placed: list[tuple[int, int, int]] = []
    others = [c for c in ClassId if c != dominant]
    size = v.shape[0]
    for _ in range(int(rng.integers(0, 3))):
        cls = others[int(rng.integers(len(others)))]
        level = _band_level(rng, cls)
        for _ in range(20):
            r = int(rng.integers(30, 61))
            cy, cx = int(rng.integers(size)), int(rng.integers(size))
            # discs never touch, so the only sharp boundaries are disc vs field
            if all(np.hypot(cy - py, cx - px) >= r + pr + 10 for py, px, pr in placed):
                yy, xx = np.ogrid[:size, :size]
                inside = np.hypot(yy - cy, xx - cx) <= r
                v[inside] = level
                labels[inside] = cls
                placed.append((cy, cx, r))
                break


def generate_scene(seed: int, index: int, size: int = 256, hazy: bool = False) -> SynthScene:
    """One scene, reproducible from (seed, index) alone."""
    rng = np.random.default_rng([seed, index])
    dominant = ClassId(int(rng.integers(len(ClassId))))
    base = _band_level(rng, dominant)
    v = np.full((size, size), base, np.uint8)
    labels = np.full((size, size), int(dominant), np.uint8)
    delta = np.zeros((size, size), np.int16)
    if hazy:
        cy = int(rng.integers(round(0.35 * size), round(0.65 * size)))
        cx = int(rng.integers(round(0.35 * size), round(0.65 * size)))
        radius = int(rng.integers(82, 96))
        if dominant is ClassId.THICK_ICE:
            sign, lo = -1, 40  # shadow: only darkening can unseat thick ice
        elif dominant is ClassId.THIN_ICE:
            sign, lo = 1, max(40, 205 - base)  # haze strong enough to cross 205
        else:
            sign, lo = 1, 40
        magnitude = int(rng.integers(lo, 61))
        v, delta = inject_swath(v, rng, (cy, cx), radius, sign * magnitude)
    else:
        _paint_minority_discs(rng, v, labels, dominant)
    raster = SceneRaster(np.repeat(v[:, :, None], 3, axis=2), f"scene-{index:04d}")
    return SynthScene(raster, LabelMask(labels), delta, hazy)


def generate_corpus(seed: int, count: int, haze_fraction: float,
                    size: int = 256) -> list[SynthScene]:
    """`count` scenes; exactly round(haze_fraction * count) carry a swath."""
    if not 0.0 <= haze_fraction <= 1.0:
        raise ValueError(f"haze_fraction out of range: {haze_fraction}")
    if count < 0:
        raise ValueError(f"count must be nonnegative: {count}")
    flags = np.zeros(count, bool)
    flags[: int(round(haze_fraction * count))] = True
    np.random.default_rng([seed]).shuffle(flags)
    return [generate_scene(seed, i, size, hazy=bool(flags[i])) for i in range(count)]
