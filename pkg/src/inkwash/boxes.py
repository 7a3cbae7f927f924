"""Class-labelled axis-aligned bounding boxes in tile pixel space.

Coordinates follow the manifest convention: origin at the tile's top-left
corner, x growing rightward, y growing downward. `w` and `h` are extents in
pixels, so a box spans columns [x, x+w) and rows [y, y+h).
"""

from __future__ import annotations

from dataclasses import dataclass

BOX_CLASSES = ("ink", "cluster")


@dataclass(frozen=True)
class BoundingBox:
    cls: str
    x: int
    y: int
    w: int
    h: int
    conf: float = 1.0

    def __post_init__(self):
        if self.cls not in BOX_CLASSES:
            raise ValueError(f"unknown box class {self.cls!r}, expected one of {BOX_CLASSES}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def to_dict(self) -> dict:
        return {"cls": self.cls, "x": self.x, "y": self.y, "w": self.w, "h": self.h,
                "conf": round(float(self.conf), 6)}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(cls=d["cls"], x=int(d["x"]), y=int(d["y"]), w=int(d["w"]), h=int(d["h"]),
                   conf=float(d.get("conf", 1.0)))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when either is degenerate."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def clip_box(box: BoundingBox, width: int, height: int) -> BoundingBox | None:
    """Clip a box to [0, width) x [0, height); None if nothing remains."""
    x1 = max(0, box.x)
    y1 = max(0, box.y)
    x2 = min(width, box.x2)
    y2 = min(height, box.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return BoundingBox(cls=box.cls, x=x1, y=y1, w=x2 - x1, h=y2 - y1, conf=box.conf)
