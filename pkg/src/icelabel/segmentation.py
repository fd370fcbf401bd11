"""HSV color-range segmentation of sea-ice scenes.

Each class owns an inclusive (h, s, v) box.  The shipped preset keeps hue
and saturation pass-all and splits the V axis, so class membership reduces
to brightness; custom schemes may restrict any channel.  Overlaps resolve
by class precedence (thick ice, then thin ice, then open water); schemes
whose V intervals leave a gap are rejected when the scheme is built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import CLASS_COLORS, ClassId, HsvRaster, LabelMask, SceneRaster, convert_raster

HSV_MAX = (179, 255, 255)


@dataclass(frozen=True)
class ColorRange:
    """Inclusive HSV box for one class.  Hue bounds clamp to [0, 179]."""

    class_id: ClassId
    lower: tuple[int, int, int]
    upper: tuple[int, int, int]

    def __post_init__(self) -> None:
        lo = tuple(int(v) for v in self.lower)
        up = tuple(int(v) for v in self.upper)
        if len(lo) != 3 or len(up) != 3:
            raise ValueError("lower and upper must be (h, s, v) triples")
        lo = (min(lo[0], 179), lo[1], lo[2])
        up = (min(up[0], 179), up[1], up[2])
        for name, (a, b), cap in zip(("h", "s", "v"), zip(lo, up), HSV_MAX):
            if not (0 <= a <= b <= cap):
                raise ValueError(f"{name} bounds [{a}, {b}] invalid, need 0 <= lower <= upper <= {cap}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "class_id", ClassId(self.class_id))

    def contains(self, hsv: np.ndarray) -> np.ndarray:
        """Boolean membership mask for an (h, w, 3) HSV array."""
        lo = np.asarray(self.lower, np.uint8)
        up = np.asarray(self.upper, np.uint8)
        return np.logical_and(hsv >= lo, hsv <= up).all(axis=-1)


@dataclass(frozen=True)
class SegmentationScheme:
    """One ColorRange per class.  The V intervals must jointly cover [0, 255]."""

    name: str
    ranges: tuple[ColorRange, ...]

    def __post_init__(self) -> None:
        ranges = tuple(self.ranges)
        if {r.class_id for r in ranges} != set(ClassId) or len(ranges) != len(ClassId):
            raise ValueError("scheme needs exactly one range per class")
        # precedence order is class order, regardless of how ranges were listed
        ranges = tuple(sorted(ranges, key=lambda r: r.class_id))
        covered = np.zeros(256, bool)
        for r in ranges:
            covered[r.lower[2] : r.upper[2] + 1] = True
        if not covered.all():
            gap = int(np.flatnonzero(~covered)[0])
            raise ValueError(f"V intervals leave a gap: value {gap} belongs to no class")
        object.__setattr__(self, "ranges", ranges)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "ranges": [
                {"class": r.class_id.name, "lower": list(r.lower), "upper": list(r.upper)}
                for r in self.ranges
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SegmentationScheme":
        try:
            ranges = tuple(
                ColorRange(ClassId[r["class"]], tuple(r["lower"]), tuple(r["upper"]))
                for r in data["ranges"]
            )
            return cls(str(data["name"]), ranges)
        except KeyError as exc:
            raise ValueError(f"scheme dict missing field {exc}") from exc


# V >= 205 reads thick ice, 31..204 thin ice, <= 30 open water; hue and
# saturation pass everything.  Tuned for austral-summer Ross Sea imagery.
ROSS_SEA_SUMMER = SegmentationScheme(
    "ross-sea-summer",
    (
        ColorRange(ClassId.THICK_ICE, (0, 0, 205), (179, 255, 255)),
        ColorRange(ClassId.THIN_ICE, (0, 0, 31), (179, 255, 204)),
        ColorRange(ClassId.OPEN_WATER, (0, 0, 0), (179, 255, 30)),
    ),
)

PRESETS = {ROSS_SEA_SUMMER.name: ROSS_SEA_SUMMER}


def get_preset(name: str) -> SegmentationScheme:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown scheme preset {name!r}, have {sorted(PRESETS)}") from None


def class_mask(hsv: HsvRaster, color_range: ColorRange) -> np.ndarray:
    """255 where the pixel falls inside the range, 0 elsewhere."""
    return np.where(color_range.contains(hsv.data), 255, 0).astype(np.uint8)


def segment(raster: SceneRaster, scheme: SegmentationScheme) -> LabelMask:
    """Assign every pixel the first class (in precedence order) whose range holds it."""
    hsv = convert_raster(raster).data
    conds = [r.contains(hsv) for r in scheme.ranges]
    labels = np.select(conds, [r.class_id for r in scheme.ranges], default=255)
    if (labels == 255).any():
        ys, xs = np.nonzero(labels == 255)
        raise ValueError(
            f"scheme {scheme.name!r} matches no class at row={ys[0]}, col={xs[0]}"
        )
    return LabelMask(labels.astype(np.uint8))


def render_labels(mask: LabelMask) -> SceneRaster:
    """Paint a label mask with the class colormap."""
    lut = np.array([CLASS_COLORS[c] for c in ClassId], np.uint8)
    return SceneRaster(lut[mask.data])


def parse_labels(raster: SceneRaster, snap: bool = False) -> LabelMask:
    """Invert render_labels.

    With snap=True each pixel takes the class whose color is nearest in RGB
    (ties go to the earlier class); otherwise any off-colormap pixel is an
    error naming its coordinates.
    """
    colors = np.array([CLASS_COLORS[c] for c in ClassId], np.int64)
    flat = raster.data.reshape(-1, 3).astype(np.int64)
    dist = ((flat[:, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
    nearest = dist.argmin(axis=1)  # argmin keeps the first minimum: class order
    if not snap:
        exact = dist[np.arange(flat.shape[0]), nearest] == 0
        if not exact.all():
            bad = int(np.flatnonzero(~exact)[0])
            y, x = divmod(bad, raster.width)
            r, g, b = (int(v) for v in flat[bad])
            raise ValueError(
                f"pixel at row={y}, col={x} is ({r}, {g}, {b}), not a colormap color"
            )
    return LabelMask(nearest.reshape(raster.data.shape[:2]).astype(np.uint8))
