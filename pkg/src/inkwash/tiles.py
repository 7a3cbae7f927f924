"""Tile store: slicing, persistence, rescaling and reassembly of slide images.

A slide is cut into a grid of fixed-size tiles. Edge tiles keep their true
(remainder) size so that reassembly is lossless; zero padding to the square
model input size happens only on the way into a model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .errors import IncompleteManifest, InvalidConfig, InvalidInput, InvalidState

DEFAULT_TILE_SIZE = 1578
MIN_TILE_SIZE = 64
MIN_RESCALE_TARGET = 32
MANIFEST_SCHEMA = 1


class TileStatus(str, Enum):
    UNPROCESSED = "unprocessed"
    CLEAN = "clean"
    BACKGROUND_INK = "background_ink"
    FOREGROUND_INK = "foreground_ink"
    RESTORED = "restored"


# Legal moves in the tile lifecycle; restored is reachable only from an ink status.
STATUS_TRANSITIONS = {
    TileStatus.UNPROCESSED: {TileStatus.CLEAN, TileStatus.BACKGROUND_INK,
                             TileStatus.FOREGROUND_INK},
    TileStatus.CLEAN: set(),
    TileStatus.BACKGROUND_INK: {TileStatus.RESTORED},
    TileStatus.FOREGROUND_INK: {TileStatus.RESTORED},
    TileStatus.RESTORED: set(),
}


def _check_pixels(pixels) -> np.ndarray:
    if not isinstance(pixels, np.ndarray) or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidInput("tile pixels must be an HxWx3 array")
    if pixels.dtype != np.uint8:
        raise InvalidInput(f"tile pixels must be uint8, got {pixels.dtype}")
    if pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise InvalidInput("tile pixels are empty")
    return pixels


@dataclass
class Tile:
    """One RGB crop of a slide with its grid position and processing status."""

    slide_id: str
    row: int
    col: int
    pixels: np.ndarray
    native_size: int = DEFAULT_TILE_SIZE
    status: TileStatus = TileStatus.UNPROCESSED

    def __post_init__(self):
        _check_pixels(self.pixels)
        if self.row < 0 or self.col < 0:
            raise InvalidInput("tile grid coordinates must be non-negative")
        h, w = self.pixels.shape[:2]
        if h > self.native_size or w > self.native_size:
            raise InvalidInput(
                f"tile pixels {h}x{w} exceed native size {self.native_size}")
        self.status = TileStatus(self.status)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def advance_status(self, new_status: TileStatus) -> None:
        new_status = TileStatus(new_status)
        if new_status not in STATUS_TRANSITIONS[self.status]:
            raise InvalidState(
                f"illegal status transition {self.status.value} -> {new_status.value}")
        self.status = new_status

    def with_pixels(self, pixels: np.ndarray) -> "Tile":
        return replace(self, pixels=_check_pixels(pixels))

    def key(self) -> tuple[int, int]:
        return (self.row, self.col)


def pad_to_native(tile: Tile) -> np.ndarray:
    """Zero-pad an edge tile to native_size x native_size for model input."""
    h, w = tile.pixels.shape[:2]
    s = tile.native_size
    if h == s and w == s:
        return tile.pixels
    canvas = np.zeros((s, s, 3), dtype=np.uint8)
    canvas[:h, :w] = tile.pixels
    return canvas


def resize_rgb(pixels: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of an RGB array to target x target; no-op is bit-exact."""
    if pixels.shape[0] == target and pixels.shape[1] == target:
        return pixels.copy()
    return cv2.resize(pixels, (target, target), interpolation=cv2.INTER_LINEAR)


def rescale_tile(tile: Tile, target: int) -> np.ndarray:
    """Rescale a tile to the square working resolution of a consuming model.

    Edge tiles are zero-padded to the native square before resizing. The
    input tile is left untouched.
    """
    if target < MIN_RESCALE_TARGET:
        raise InvalidConfig(f"rescale target {target} below minimum {MIN_RESCALE_TARGET}")
    return resize_rgb(pad_to_native(tile), target)


class TileSet:
    """Tiles of one slide keyed by (row, col)."""

    def __init__(self, tiles=()):
        self._tiles: dict[tuple[int, int], Tile] = {}
        for t in tiles:
            self.add(t)

    def add(self, tile: Tile) -> None:
        self._tiles[tile.key()] = tile

    def get(self, row: int, col: int) -> Tile:
        return self._tiles[(row, col)]

    def __contains__(self, key) -> bool:
        return key in self._tiles

    def __len__(self) -> int:
        return len(self._tiles)

    def __iter__(self):
        return iter(sorted(self._tiles.values(), key=Tile.key))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for tile in self:
            name = f"{tile.slide_id}_r{tile.row}_c{tile.col}.png"
            Image.fromarray(tile.pixels).save(directory / name)

    @classmethod
    def load(cls, directory, manifest: "SlideManifest") -> "TileSet":
        directory = Path(directory)
        tiles = cls()
        for rec in manifest.records():
            name = f"{manifest.slide_id}_r{rec.row}_c{rec.col}.png"
            path = directory / name
            if not path.exists():
                raise IncompleteManifest(f"missing tile image {name}")
            pixels = np.asarray(Image.open(path).convert("RGB"))
            tiles.add(Tile(slide_id=manifest.slide_id, row=rec.row, col=rec.col,
                           pixels=pixels, native_size=manifest.tile_size,
                           status=TileStatus(rec.status)))
        return tiles


@dataclass
class TileRecord:
    row: int
    col: int
    status: TileStatus = TileStatus.UNPROCESSED
    boxes: list[BoundingBox] = field(default_factory=list)
    metrics: dict | None = None
    background_replaced: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        d = {
            "row": self.row,
            "col": self.col,
            "status": TileStatus(self.status).value,
            "boxes": [b.to_dict() for b in self.boxes],
            "metrics": self.metrics,
        }
        if self.background_replaced:
            d["background_replaced"] = True
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TileRecord":
        return cls(row=int(d["row"]), col=int(d["col"]), status=TileStatus(d["status"]),
                   boxes=[BoundingBox.from_dict(b) for b in d.get("boxes", [])],
                   metrics=d.get("metrics"),
                   background_replaced=bool(d.get("background_replaced", False)),
                   error=d.get("error"))


class SlideManifest:
    """Persistent per-slide ledger of tile statuses, boxes and metrics."""

    def __init__(self, slide_id: str, grid_rows: int, grid_cols: int, tile_size: int):
        self.slide_id = slide_id
        self.grid_rows = grid_rows
        self.grid_cols = grid_cols
        self.tile_size = tile_size
        self._records = {
            (r, c): TileRecord(row=r, col=c)
            for r in range(grid_rows) for c in range(grid_cols)
        }

    def record(self, row: int, col: int) -> TileRecord:
        return self._records[(row, col)]

    def records(self) -> list[TileRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def __len__(self) -> int:
        return len(self._records)

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "slide_id": self.slide_id,
            "tile_size": self.tile_size,
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "tiles": [rec.to_dict() for rec in self.records()],
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "SlideManifest":
        if d.get("schema") != MANIFEST_SCHEMA:
            raise InvalidInput(f"unsupported manifest schema {d.get('schema')!r}")
        m = cls(slide_id=d["slide_id"], grid_rows=int(d["grid_rows"]),
                grid_cols=int(d["grid_cols"]), tile_size=int(d["tile_size"]))
        seen = set()
        for rec_d in d["tiles"]:
            rec = TileRecord.from_dict(rec_d)
            key = (rec.row, rec.col)
            if key in seen:
                raise InvalidInput(f"duplicate tile record {key}")
            if key not in m._records:
                raise InvalidInput(f"tile record {key} outside the grid")
            seen.add(key)
            m._records[key] = rec
        if len(seen) != len(m._records):
            raise IncompleteManifest(
                f"manifest lists {len(seen)} of {len(m._records)} tile records")
        return m

    @classmethod
    def load(cls, path) -> "SlideManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def slice_slide(image: np.ndarray, tile_size: int, slide_id: str = "slide"):
    """Cut a flat RGB raster into a grid of non-overlapping tiles.

    Returns (TileSet, SlideManifest). Edge tiles keep the remainder size so
    the slide can be reassembled exactly.
    """
    if image is None or not isinstance(image, np.ndarray) or image.size == 0:
        raise InvalidInput("empty slide image")
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInput("slide image must be HxWx3 RGB")
    if image.dtype != np.uint8:
        raise InvalidInput(f"slide image must be uint8, got {image.dtype}")
    if tile_size < MIN_TILE_SIZE:
        raise InvalidConfig(f"tile_size {tile_size} below minimum {MIN_TILE_SIZE}")

    h, w = image.shape[:2]
    grid_rows = -(-h // tile_size)
    grid_cols = -(-w // tile_size)
    tiles = TileSet()
    for r in range(grid_rows):
        for c in range(grid_cols):
            y0, x0 = r * tile_size, c * tile_size
            crop = np.ascontiguousarray(image[y0:y0 + tile_size, x0:x0 + tile_size])
            tiles.add(Tile(slide_id=slide_id, row=r, col=c, pixels=crop,
                           native_size=tile_size))
    manifest = SlideManifest(slide_id=slide_id, grid_rows=grid_rows,
                             grid_cols=grid_cols, tile_size=tile_size)
    return tiles, manifest


def reassemble(tiles: TileSet, manifest: SlideManifest) -> np.ndarray:
    """Stitch tiles back into the full slide raster.

    Tiles are stored unpadded, so concatenating them reproduces the original
    dimensions exactly.
    """
    rows = []
    for r in range(manifest.grid_rows):
        strips = []
        for c in range(manifest.grid_cols):
            if (r, c) not in tiles:
                raise IncompleteManifest(f"missing tile at grid position ({r}, {c})")
            strips.append(tiles.get(r, c).pixels)
        heights = {s.shape[0] for s in strips}
        if len(heights) != 1:
            raise InvalidInput(f"inconsistent tile heights in grid row {r}: {sorted(heights)}")
        rows.append(np.concatenate(strips, axis=1))
    widths = {row.shape[1] for row in rows}
    if len(widths) != 1:
        raise InvalidInput(f"inconsistent row widths: {sorted(widths)}")
    return np.concatenate(rows, axis=0)
