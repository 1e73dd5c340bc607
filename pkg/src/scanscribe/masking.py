"""Rectangular object-mask extraction from directional intensity sums.

A slice's object is approximated by the first/last rows and columns whose
pixel-value sums strictly exceed a threshold.  The threshold is either a
fraction of the per-axis maximum sum (relative mode, scale invariant) or a
raw sum (absolute mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, NumericError
from .geometry import Box, COLUMNS, ROWS

RELATIVE = "relative"
ABSOLUTE = "absolute"


@dataclass(frozen=True)
class ThresholdPolicy:
    mode: str = RELATIVE
    value: float = 0.05

    def __post_init__(self):
        if self.mode not in (RELATIVE, ABSOLUTE):
            raise NumericError(f"unknown threshold mode {self.mode!r}")
        if self.value < 0:
            raise NumericError("threshold value must be non-negative")
        if self.mode == RELATIVE and self.value > 1:
            raise NumericError("relative threshold must be in [0, 1]")

    def resolve(self, sums: np.ndarray) -> float:
        if self.mode == RELATIVE:
            return self.value * float(sums.max())
        return self.value


def directional_sums(slice_: np.ndarray, axis: str) -> np.ndarray:
    """Row sums (length H) or column sums (length W) of a 2D raster."""
    arr = np.asarray(slice_, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise NumericError(f"expected a 2D raster, got shape {arr.shape}")
    if axis == ROWS:
        return arr.sum(axis=1)
    if axis == COLUMNS:
        return arr.sum(axis=0)
    raise NumericError(f"unknown axis {axis!r}")


def _span(sums: np.ndarray, tau: float):
    idx = np.nonzero(sums > tau)[0]
    if idx.size == 0:
        raise EmptyMaskError("empty object mask")
    return float(idx[0]), float(idx[-1] + 1)


def extract_object_mask(slice_: np.ndarray, policy: ThresholdPolicy = ThresholdPolicy()) -> Box:
    """Bounding box of rows/columns whose sums surpass the threshold.

    Raises EmptyMaskError when no row or no column surpasses it.
    """
    row_sums = directional_sums(slice_, ROWS)
    col_sums = directional_sums(slice_, COLUMNS)
    top, bottom = _span(row_sums, policy.resolve(row_sums))
    left, right = _span(col_sums, policy.resolve(col_sums))
    return Box(top, bottom, left, right)
