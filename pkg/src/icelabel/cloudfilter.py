"""Thin-cloud and shadow repair for sea-ice tiles.

Detection compares a lightly denoised luminance image against a coarse
illumination surface; pixels whose difference stands out are re-centered
at the scene median, everything else is copied through verbatim.  Both
stages compose the primitives in kernels.py, so the filter inherits
their determinism, and clear pixels survive bit-exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .raster import SceneRaster, round_half_up

MASK_OTSU = "otsu"
MASK_FIXED = "fixed"


@dataclass(frozen=True)
class FilterConfig:
    """Window sizes and thresholding policy for detection and repair.

    diff_truncate pre-clamps the difference image before normalization so
    a handful of extreme pixels (sharp class boundaries) cannot swallow
    the dynamic range that faint haze needs to register.
    """

    bg_dilate_k: int = 7
    bg_median_k: int = 21
    noise_median_k: int = 3
    mask_mode: str = MASK_OTSU
    fixed_t: int = 128
    diff_truncate: bool = False
    truncate_t: int = 16

    def __post_init__(self) -> None:
        for name in ("bg_dilate_k", "bg_median_k", "noise_median_k"):
            k = getattr(self, name)
            if not (isinstance(k, int) and k >= 3 and k % 2 == 1):
                raise ValueError(f"{name} must be an odd int >= 3, got {k!r}")
        if self.mask_mode not in (MASK_OTSU, MASK_FIXED):
            raise ValueError(f"mask_mode must be {MASK_OTSU!r} or {MASK_FIXED!r}")
        for name in ("fixed_t", "truncate_t"):
            t = getattr(self, name)
            if not 0 <= t <= 255:
                raise ValueError(f"{name} out of range: {t}")

    def to_dict(self) -> dict:
        return {
            "bg_dilate_k": self.bg_dilate_k,
            "bg_median_k": self.bg_median_k,
            "noise_median_k": self.noise_median_k,
            "mask_mode": self.mask_mode,
            "fixed_t": self.fixed_t,
            "diff_truncate": self.diff_truncate,
            "truncate_t": self.truncate_t,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FilterConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)


@dataclass(frozen=True)
class FilterOutput:
    filtered: SceneRaster
    cloud_shadow_mask: np.ndarray
    affected_fraction: float

    def __post_init__(self) -> None:
        if self.cloud_shadow_mask.shape != self.filtered.data.shape[:2]:
            raise ValueError("mask dimensions must match the raster")
        if not 0.0 <= self.affected_fraction <= 1.0:
            raise ValueError(f"affected_fraction out of range: {self.affected_fraction}")


def estimate_background(channel: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """Coarse illumination surface: grow bright structure, then smooth hard."""
    return kernels.median_blur(kernels.dilate(channel, cfg.bg_dilate_k), cfg.bg_median_k)


def detect_mask(raster: SceneRaster, cfg: FilterConfig) -> np.ndarray:
    """255 where luminance departs from the local illumination surface."""
    gray = raster.data.max(axis=2)  # the HSV value channel
    smooth = kernels.median_blur(gray, cfg.noise_median_k)
    d = kernels.absdiff(smooth, estimate_background(gray, cfg))
    if cfg.diff_truncate:
        d = kernels.threshold_truncate(d, cfg.truncate_t)
    d_n = kernels.minmax_normalize(d)
    t = kernels.otsu_threshold(d_n) if cfg.mask_mode == MASK_OTSU else cfg.fixed_t
    return kernels.threshold_binary(d_n, t)


def apply_filter(raster: SceneRaster, cfg: FilterConfig | None = None) -> FilterOutput:
    """Repair masked pixels channel-wise; leave the rest bit-identical.

    A masked pixel keeps its local texture (value minus background) but is
    re-centered at the scene channel median, clamped to [0, 255].
    """
    cfg = cfg or FilterConfig()
    mask = detect_mask(raster, cfg)
    affected = mask == 255
    out = raster.data.copy()
    if affected.any():
        for ch in range(3):
            c = raster.data[:, :, ch]
            bg = estimate_background(c, cfg).astype(np.int32)
            center = int(round_half_up(float(np.median(c))))
            fixed = np.clip(c.astype(np.int32) - bg + center, 0, 255).astype(np.uint8)
            out[:, :, ch] = np.where(affected, fixed, c)
    fraction = float(affected.sum()) / affected.size
    return FilterOutput(SceneRaster(out, raster.scene_id), mask, fraction)
