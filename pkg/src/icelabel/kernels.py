"""Bit-exact single-channel image kernels used by the haze/shadow filter.

A "gray raster" is any 2-d uint8 numpy array. Windowed ops use odd square
windows and replicate the edge row/column at the borders, so output size
always equals input size. Every function is deterministic and pure.

The two windowed kernels delegate to OpenCV (bit-identical to the naive
per-pixel definition, verified by the brute-force oracle tests); OpenCV's
internal threading is disabled so parallelism stays at the tile level.
"""

from __future__ import annotations

import cv2
import numpy as np

# Tile-level processes are the unit of parallelism; keep kernels single-threaded.
cv2.setNumThreads(1)

AND = "AND"
OR = "OR"
XOR = "XOR"
NOT = "NOT"


def _check_gray(img: np.ndarray, name: str = "img") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"{name}: expected 2-d array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"{name}: expected uint8, got {img.dtype}")
    return img


def _check_window(img: np.ndarray, k: int) -> None:
    if k < 3 or k % 2 == 0:
        raise ValueError(f"window size must be odd and >= 3, got {k}")
    if k > min(img.shape):
        raise ValueError(f"window {k} exceeds image extent {img.shape}")


def median_blur(img: np.ndarray, k: int) -> np.ndarray:
    """Median over each k x k neighborhood, edges replicated."""
    img = _check_gray(img)
    _check_window(img, k)
    return cv2.medianBlur(img, k)


def dilate(img: np.ndarray, k: int) -> np.ndarray:
    """Maximum over each k x k neighborhood, edges replicated."""
    img = _check_gray(img)
    _check_window(img, k)
    kernel = np.ones((k, k), np.uint8)
    return cv2.dilate(img, kernel, borderType=cv2.BORDER_REPLICATE)


def absdiff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel |a - b|."""
    a = _check_gray(a, "a")
    b = _check_gray(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.abs(a.astype(np.int16) - b.astype(np.int16)).astype(np.uint8)


def minmax_normalize(img: np.ndarray) -> np.ndarray:
    """Stretch to the full [0, 255] range; constant images map to all zeros."""
    img = _check_gray(img)
    lo = int(img.min())
    hi = int(img.max())
    if hi == lo:
        return np.zeros_like(img)
    scaled = 255.0 * (img.astype(np.float64) - lo) / (hi - lo)
    return np.floor(scaled + 0.5).astype(np.uint8)


def otsu_threshold(img: np.ndarray) -> int:
    """Threshold maximizing between-class variance; smallest t wins ties.

    Pixels <= t form class 0. Comparisons are done in exact integer
    arithmetic so the winning t never depends on float rounding:
    sigma^2(t) is proportional to (s0*n1 - s1*n0)^2 / (n0*n1).
    """
    img = _check_gray(img)
    hist = np.bincount(img.ravel(), minlength=256)
    counts = [int(x) for x in hist]
    sums = [i * c for i, c in enumerate(counts)]
    n_total = sum(counts)
    s_total = sum(sums)

    best_t = 0
    best_num = 0  # (s0*n1 - s1*n0)^2
    best_den = 1  # n0*n1
    n0 = 0
    s0 = 0
    for t in range(256):
        n0 += counts[t]
        s0 += sums[t]
        n1 = n_total - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = s_total - s0
        num = (s0 * n1 - s1 * n0) ** 2
        den = n0 * n1
        # num/den > best_num/best_den without division
        if num * best_den > best_num * den:
            best_num = num
            best_den = den
            best_t = t
    return best_t


def threshold_binary(img: np.ndarray, t: int) -> np.ndarray:
    """255 where pixel > t, else 0."""
    img = _check_gray(img)
    return np.where(img > t, np.uint8(255), np.uint8(0))


def threshold_truncate(img: np.ndarray, t: int) -> np.ndarray:
    """Clamp pixels above t down to t."""
    img = _check_gray(img)
    return np.minimum(img, np.uint8(t))


def bitwise(a: np.ndarray, b: np.ndarray | None, op: str) -> np.ndarray:
    """Per-pixel bitwise combination; b is ignored for NOT."""
    a = _check_gray(a, "a")
    if op == NOT:
        return ~a
    if b is None:
        raise ValueError(f"op {op} needs two operands")
    b = _check_gray(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == AND:
        return a & b
    if op == OR:
        return a | b
    if op == XOR:
        return a ^ b
    raise ValueError(f"unknown bitwise op {op!r}")
