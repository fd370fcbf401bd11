"""Evaluation of predicted label masks against reference masks.

The confusion convention is counts[A][B] = pixels predicted A whose
reference class is B, so precision reads along rows and recall along
columns, and the percentage view normalizes each reference column to
100.  SSIM is the single-scale Wang et al. form (11x11 Gaussian window,
sigma 1.5, k1=0.01, k2=0.03) averaged over valid window positions and
then over channels; zero-denominator rates are defined as 0 so reports
are always total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .raster import ClassId, LabelMask, SceneRaster

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, np.int64)
        n = len(ClassId)
        if counts.shape != (n, n):
            raise ValueError(f"expected {n}x{n} counts, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def percent(self) -> np.ndarray:
        """Column-percentage view: each reference column sums to 100."""
        col = self.counts.sum(axis=0, keepdims=True).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(col > 0, 100.0 * self.counts / col, 0.0)
        return pct

    def format_percent(self) -> str:
        names = [c.name for c in ClassId]
        width = max(len(n) for n in names) + 2
        lines = ["pred \\ ref".ljust(width) + "".join(n.rjust(width) for n in names)]
        for i, row in enumerate(self.percent()):
            lines.append(names[i].ljust(width) + "".join(f"{v:.2f}".rjust(width) for v in row))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ConfusionMatrix":
        return cls(np.asarray(data["counts"], np.int64))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: tuple
    recall: tuple
    f1: tuple
    macro_precision: float
    macro_recall: float
    macro_f1: float
    pixels: int
    ssim: float | None = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "pixels": self.pixels,
            "ssim": self.ssim,
        }

    def to_csv(self) -> str:
        cols = ["accuracy"]
        vals = [self.accuracy]
        for c in ClassId:
            for metric in ("precision", "recall", "f1"):
                cols.append(f"{metric}_{c.name}")
                vals.append(getattr(self, metric)[int(c)])
        cols += ["macro_precision", "macro_recall", "macro_f1", "pixels", "ssim"]
        vals += [self.macro_precision, self.macro_recall, self.macro_f1, self.pixels,
                 "" if self.ssim is None else self.ssim]
        return ",".join(cols) + "\n" + ",".join(str(v) for v in vals) + "\n"


def confusion(pred: LabelMask, ref: LabelMask) -> ConfusionMatrix:
    if pred.data.shape != ref.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {ref.data.shape}")
    n = len(ClassId)
    flat = pred.data.astype(np.int64).ravel() * n + ref.data.ravel()
    return ConfusionMatrix(np.bincount(flat, minlength=n * n).reshape(n, n))


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def report(cm: ConfusionMatrix, ssim_score: float | None = None) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    counts = cm.counts
    precision, recall, f1 = [], [], []
    for c in range(len(ClassId)):
        tp = float(counts[c, c])
        p = _safe_div(tp, float(counts[c, :].sum()))
        r = _safe_div(tp, float(counts[:, c].sum()))
        precision.append(p)
        recall.append(r)
        f1.append(_safe_div(2 * p * r, p + r))
    return MetricsReport(
        accuracy=float(np.trace(counts)) / cm.total,
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        pixels=cm.total,
        ssim=ssim_score,
    )


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: SceneRaster, b: SceneRaster) -> float:
    """Mean single-scale SSIM over valid window positions and channels."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    scores = []
    for ch in range(3):
        x = a.data[:, :, ch].astype(np.float64)
        y = b.data[:, :, ch].astype(np.float64)
        mu_x = convolve2d(x, kernel, mode="valid")
        mu_y = convolve2d(y, kernel, mode="valid")
        var_x = convolve2d(x * x, kernel, mode="valid") - mu_x**2
        var_y = convolve2d(y * y, kernel, mode="valid") - mu_y**2
        cov = convolve2d(x * y, kernel, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
