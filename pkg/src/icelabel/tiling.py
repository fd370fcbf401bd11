"""Scene tiling, PNG io, and run manifests.

Scenes split row-major into square tiles; partial edge tiles are padded
with zeros and the true extent lives in the grid so stitching can crop
back losslessly.  A run manifest is a JSON document recording everything
needed to audit or re-run a job: inputs, configs, engine settings,
per-tile status, and phase timings.  Unknown top-level manifest fields
survive a read/write cycle untouched.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .cloudfilter import FilterConfig
from .raster import SceneRaster, Tile
from .segmentation import SegmentationScheme

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

STATUS_OK = "ok"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class TileGrid:
    scene_id: str
    scene_width: int
    scene_height: int
    tile_size: int = 256
    rows: int = field(init=False)
    cols: int = field(init=False)

    def __post_init__(self) -> None:
        if self.tile_size < 1:
            raise ValueError(f"tile_size must be >= 1, got {self.tile_size}")
        if self.scene_width < 1 or self.scene_height < 1:
            raise ValueError("scene extent must be positive")
        object.__setattr__(self, "rows", math.ceil(self.scene_height / self.tile_size))
        object.__setattr__(self, "cols", math.ceil(self.scene_width / self.tile_size))

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "scene_width": self.scene_width,
            "scene_height": self.scene_height,
            "tile_size": self.tile_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TileGrid":
        try:
            return cls(data["scene_id"], data["scene_width"],
                       data["scene_height"], data["tile_size"])
        except KeyError as exc:
            raise ValueError(f"tile grid missing field {exc}") from exc


def split_scene(scene: SceneRaster, tile_size: int = 256) -> tuple[list[Tile], TileGrid]:
    """Cut a scene into row-major tiles, zero-padding the ragged edges."""
    grid = TileGrid(scene.scene_id, scene.width, scene.height, tile_size)
    tiles = []
    for row in range(grid.rows):
        for col in range(grid.cols):
            block = scene.data[row * tile_size : (row + 1) * tile_size,
                               col * tile_size : (col + 1) * tile_size]
            if block.shape[:2] != (tile_size, tile_size):
                padded = np.zeros((tile_size, tile_size, 3), np.uint8)
                padded[: block.shape[0], : block.shape[1]] = block
                block = padded
            else:
                block = block.copy()
            tiles.append(Tile(SceneRaster(block, scene.scene_id), scene.scene_id, row, col))
    return tiles, grid


def stitch_scene(tiles: list[Tile], grid: TileGrid) -> SceneRaster:
    """Reassemble tiles into the original scene, cropping edge padding."""
    ts = grid.tile_size
    seen: dict[tuple[int, int], Tile] = {}
    for tile in tiles:
        key = (tile.grid_row, tile.grid_col)
        if not (0 <= tile.grid_row < grid.rows and 0 <= tile.grid_col < grid.cols):
            raise ValueError(f"tile ({tile.grid_row},{tile.grid_col}) outside {grid.rows}x{grid.cols} grid")
        if key in seen:
            raise ValueError(f"duplicate tile ({tile.grid_row},{tile.grid_col})")
        if tile.raster.data.shape != (ts, ts, 3):
            raise ValueError(f"tile ({tile.grid_row},{tile.grid_col}) is not {ts}x{ts}")
        seen[key] = tile
    missing = [(r, c) for r in range(grid.rows) for c in range(grid.cols) if (r, c) not in seen]
    if missing:
        raise ValueError("missing tile " + ", ".join(f"({r},{c})" for r, c in missing))
    canvas = np.zeros((grid.rows * ts, grid.cols * ts, 3), np.uint8)
    for (row, col), tile in seen.items():
        canvas[row * ts : (row + 1) * ts, col * ts : (col + 1) * ts] = tile.raster.data
    return SceneRaster(canvas[: grid.scene_height, : grid.scene_width].copy(), grid.scene_id)


def read_image(path: str, promote_gray: bool = False) -> SceneRaster:
    """Load an 8-bit PNG as RGB.

    Alpha is stripped with a warning; grayscale is promoted to RGB only
    when promote_gray is set, otherwise it is an error.
    """
    with open(path, "rb") as fh:
        head = fh.read(26)
    if head[:8] != PNG_SIGNATURE:
        raise ValueError(f"{path}: not a PNG file")
    bit_depth = head[24]
    if bit_depth != 8:
        raise ValueError(f"{path}: {bit_depth}-bit PNG unsupported, need 8-bit")
    with Image.open(path) as img:
        mode = img.mode
        if mode in ("RGBA", "LA"):
            warnings.warn(f"{path}: stripping alpha channel", stacklevel=2)
        if mode in ("L", "LA"):
            if not promote_gray:
                raise ValueError(f"{path}: grayscale PNG needs promote_gray=True")
            gray = np.asarray(img.convert("L"))
            data = np.repeat(gray[:, :, None], 3, axis=2)
        elif mode in ("RGB", "RGBA"):
            data = np.asarray(img)[:, :, :3]
        else:
            raise ValueError(f"{path}: unsupported PNG mode {mode!r}")
    scene_id = os.path.splitext(os.path.basename(path))[0]
    return SceneRaster(np.ascontiguousarray(data), scene_id)


def write_image(path: str, raster: SceneRaster) -> None:
    Image.fromarray(raster.data, "RGB").save(path, format="PNG")


@dataclass
class PhaseTiming:
    load_s: float = 0.0
    map_s: float = 0.0
    reduce_s: float = 0.0
    tiles_processed: int = 0
    workers: int = 0

    def __post_init__(self) -> None:
        if min(self.load_s, self.map_s, self.reduce_s) < 0:
            raise ValueError("phase durations must be nonnegative")

    def to_dict(self) -> dict:
        return {"load_s": self.load_s, "map_s": self.map_s, "reduce_s": self.reduce_s,
                "tiles_processed": self.tiles_processed, "workers": self.workers}

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseTiming":
        return cls(float(data.get("load_s", 0.0)), float(data.get("map_s", 0.0)),
                   float(data.get("reduce_s", 0.0)), int(data.get("tiles_processed", 0)),
                   int(data.get("workers", 0)))


@dataclass
class TileStatus:
    scene_id: str
    row: int
    col: int
    status: str = STATUS_OK
    outputs: dict = field(default_factory=dict)
    error: str = ""

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "row": self.row, "col": self.col,
                "status": self.status, "outputs": self.outputs, "error": self.error}

    @classmethod
    def from_dict(cls, data: dict, index: int) -> "TileStatus":
        try:
            return cls(data["scene_id"], int(data["row"]), int(data["col"]),
                       data.get("status", STATUS_OK), dict(data.get("outputs", {})),
                       str(data.get("error", "")))
        except KeyError as exc:
            raise ValueError(f"tile record {index} missing field {exc}") from exc


@dataclass
class RunManifest:
    run_id: str
    filter_config: FilterConfig
    scheme: SegmentationScheme
    inputs: list = field(default_factory=list)
    engine: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    tiles: list = field(default_factory=list)
    timing: PhaseTiming | None = None
    extra: dict = field(default_factory=dict)

    def check_complete(self, grid: TileGrid) -> None:
        """Every grid cell must appear exactly once among this scene's records."""
        counts: dict[tuple[int, int], int] = {}
        for t in self.tiles:
            if t.scene_id == grid.scene_id:
                counts[(t.row, t.col)] = counts.get((t.row, t.col), 0) + 1
        problems = []
        for r in range(grid.rows):
            for c in range(grid.cols):
                n = counts.pop((r, c), 0)
                if n != 1:
                    problems.append(f"({r},{c}) appears {n} times")
        problems += [f"({r},{c}) outside grid" for r, c in counts]
        if problems:
            raise ValueError(f"run {self.run_id} incomplete for {grid.scene_id}: "
                             + "; ".join(problems))

    def to_dict(self) -> dict:
        data = {
            "run_id": self.run_id,
            "filter": self.filter_config.to_dict(),
            "scheme": self.scheme.to_dict(),
            "inputs": list(self.inputs),
            "engine": dict(self.engine),
            "outputs": dict(self.outputs),
            "tiles": [t.to_dict() for t in self.tiles],
        }
        if self.timing is not None:
            data["timing"] = self.timing.to_dict()
        data.update(self.extra)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        known = {"run_id", "filter", "scheme", "inputs", "engine", "outputs",
                 "tiles", "timing"}
        for name in ("run_id", "filter", "scheme"):
            if name not in data:
                raise ValueError(f"manifest missing field '{name}'")
        return cls(
            run_id=str(data["run_id"]),
            filter_config=FilterConfig.from_dict(data["filter"]),
            scheme=SegmentationScheme.from_dict(data["scheme"]),
            inputs=list(data.get("inputs", [])),
            engine=dict(data.get("engine", {})),
            outputs=dict(data.get("outputs", {})),
            tiles=[TileStatus.from_dict(t, i) for i, t in enumerate(data.get("tiles", []))],
            timing=PhaseTiming.from_dict(data["timing"]) if "timing" in data else None,
            extra={k: v for k, v in data.items() if k not in known},
        )


def write_manifest(manifest: RunManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_manifest(path: str) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: manifest must be a JSON object")
    return RunManifest.from_dict(data)


def make_run_dirs(out_dir: str, run_id: str) -> dict:
    """Create and return the run directory layout."""
    root = os.path.join(out_dir, run_id)
    layout = {"root": root}
    for name in ("tiles", "filtered", "labels", "reports"):
        layout[name] = os.path.join(root, name)
        os.makedirs(layout[name], exist_ok=True)
    return layout
