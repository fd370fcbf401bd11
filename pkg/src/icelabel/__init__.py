"""Auto-labeling pipeline for polar sea-ice RGB imagery.

Splits scenes into tiles, corrects thin haze and cloud shadows, segments
every pixel into thick ice / thin ice / open water by HSV color ranges,
and scales the per-tile work over local processes or TCP workers.
"""

from icelabel.raster import (
    ClassId,
    HsvRaster,
    LabelMask,
    SceneRaster,
    Tile,
    convert_raster,
    hsv_to_rgb,
    rgb_to_hsv,
)

__all__ = [
    "ClassId",
    "HsvRaster",
    "LabelMask",
    "SceneRaster",
    "Tile",
    "convert_raster",
    "hsv_to_rgb",
    "rgb_to_hsv",
]

__version__ = "0.1.0"
