"""YOLO-format box annotations: ``class cx cy w h`` per line, normalised."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class LabelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float, class_id: int = 0) -> BoundingBox:
        return cls(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def clipped(self) -> BoundingBox | None:
        """Clip extents to the unit square; None if nothing is left."""
        x1, y1, x2, y2 = self.corners
        x1, y1 = max(x1, 0.0), max(y1, 0.0)
        x2, y2 = min(x2, 1.0), min(y2, 1.0)
        if x2 <= x1 or y2 <= y1:
            return None
        if (x1, y1, x2, y2) == self.corners:
            return self
        return BoundingBox.from_corners(x1, y1, x2, y2, self.class_id)

    def to_pixels(self, width: int, height: int) -> tuple[float, float, float, float]:
        x1, y1, x2, y2 = self.corners
        return (x1 * width, y1 * height, x2 * width, y2 * height)


def parse_labels(text: str, source: str = "<string>") -> list[BoundingBox]:
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise LabelFormatError(f"{source}:{lineno}: expected 5 fields, got {len(fields)}")
        try:
            class_id = int(fields[0])
            cx, cy, w, h = (float(v) for v in fields[1:])
        except ValueError as exc:
            raise LabelFormatError(f"{source}:{lineno}: {exc}") from None
        if class_id < 0:
            raise LabelFormatError(f"{source}:{lineno}: negative class id {class_id}")
        if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
            raise LabelFormatError(f"{source}:{lineno}: coordinates must lie in [0, 1]")
        if w <= 0 or h <= 0:
            raise LabelFormatError(f"{source}:{lineno}: zero-size box")
        boxes.append(BoundingBox(class_id, cx, cy, w, h))
    return boxes


# six-decimal rounding can leave an edge box this far outside the frame
_EDGE_TOL = 1e-6


def _inside(box: BoundingBox, tol: float) -> bool:
    x1, y1, x2, y2 = box.corners
    return x1 >= -tol and y1 >= -tol and x2 <= 1 + tol and y2 <= 1 + tol


def format_labels(boxes: Iterable[BoundingBox]) -> str:
    """Canonical text: clipped boxes, six decimals, single spaces, trailing newline.

    Boxes already inside the frame up to rounding are not re-clipped, so
    formatting parsed canonical text reproduces it exactly.
    """
    lines = []
    for box in boxes:
        clipped = box if _inside(box, _EDGE_TOL) else box.clipped()
        if clipped is None or round(clipped.w, 6) <= 0 or round(clipped.h, 6) <= 0:
            continue
        lines.append(f"{clipped.class_id:d} {clipped.cx:.6f} {clipped.cy:.6f} {clipped.w:.6f} {clipped.h:.6f}")
    return "".join(line + "\n" for line in lines)


def read_labels(path: str | Path) -> list[BoundingBox]:
    path = Path(path)
    return parse_labels(path.read_text(), str(path))


def write_labels(boxes: Iterable[BoundingBox], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_labels(boxes))
    return path
