"""Axis-aligned rectangle and interval algebra, plus the two box metrics.

Coordinates are continuous with the image origin at the top-left corner;
pixel i covers [i, i+1), so a valid image-sized box is contained in
[0, H] x [0, W].  Boxes are stored as (top, bottom, left, right).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NumericError

ROWS = "rows"
COLUMNS = "columns"


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise NumericError(f"interval lo {self.lo} > hi {self.hi}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def intersect(self, other: "Interval") -> "Interval":
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi:
            return Interval(lo, lo)
        return Interval(lo, hi)

    def shift(self, d: float) -> "Interval":
        return Interval(self.lo + d, self.hi + d)


@dataclass(frozen=True)
class Box:
    top: float
    bottom: float
    left: float
    right: float

    def __post_init__(self):
        if self.top > self.bottom or self.left > self.right:
            raise NumericError(
                f"invalid box (top={self.top}, bottom={self.bottom}, "
                f"left={self.left}, right={self.right})"
            )

    @property
    def height(self) -> float:
        return self.bottom - self.top

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def area(self) -> float:
        return self.height * self.width

    def rows(self) -> Interval:
        return Interval(self.top, self.bottom)

    def cols(self) -> Interval:
        return Interval(self.left, self.right)

    def interval(self, axis: str) -> Interval:
        return self.rows() if axis == ROWS else self.cols()

    def contains(self, other: "Box") -> bool:
        return self.rows().contains(other.rows()) and self.cols().contains(other.cols())

    def shift(self, dy: float, dx: float) -> "Box":
        return Box(self.top + dy, self.bottom + dy, self.left + dx, self.right + dx)

    def is_integer(self) -> bool:
        return all(
            float(v).is_integer() for v in (self.top, self.bottom, self.left, self.right)
        )

    @staticmethod
    def from_intervals(rows: Interval, cols: Interval) -> "Box":
        return Box(rows.lo, rows.hi, cols.lo, cols.hi)

    def as_tuple(self):
        return (self.top, self.bottom, self.left, self.right)


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area; 0 when the union has zero area."""
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    iw = min(a.right, b.right) - max(a.left, b.left)
    inter = max(ih, 0.0) * max(iw, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def boundary_error(a: Box, b: Box) -> float:
    """Mean absolute per-side boundary distance, in pixels."""
    return (
        abs(a.top - b.top)
        + abs(a.bottom - b.bottom)
        + abs(a.left - b.left)
        + abs(a.right - b.right)
    ) / 4.0


def box_union(boxes) -> Box:
    """Smallest box containing every input box."""
    boxes = list(boxes)
    if not boxes:
        raise NumericError("empty stack")
    return Box(
        min(b.top for b in boxes),
        max(b.bottom for b in boxes),
        min(b.left for b in boxes),
        max(b.right for b in boxes),
    )
