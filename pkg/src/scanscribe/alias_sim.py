"""Brute-force wrap-around (fold-over) simulator on an integer pixel grid.

Sampling a window of integer width W maps source pixel i into bin
(i - f0) mod W, where f0 is the window's low edge.  Everything here is
exhaustive enumeration; it serves as the independent correctness oracle
for the closed-form solver in fov.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .geometry import Box, Interval, ROWS


@dataclass(frozen=True)
class FoldResult:
    folded: np.ndarray            # length-W summed intensities
    contributions: tuple          # per-bin tuple of source pixel indices


@dataclass(frozen=True)
class Verdicts:
    contains_roi: bool
    roi_alias_free: bool
    is_minimal: bool

    def all_true(self) -> bool:
        return self.contains_roi and self.roi_alias_free and self.is_minimal


def _int_window(fov: Interval):
    if not float(fov.lo).is_integer() or not float(fov.hi).is_integer():
        raise NumericError("oracle requires integer grid")
    f0, f1 = int(fov.lo), int(fov.hi)
    w = f1 - f0
    if w < 1:
        raise NumericError(f"window width must be >= 1, got {w}")
    return f0, w


def wrap_sum(signal, fov: Interval) -> FoldResult:
    """Fold a 1D signal into the sampling window [f0, f0+W)."""
    sig = np.asarray(signal)
    if sig.ndim != 1 or sig.size < 1:
        raise NumericError(f"expected a non-empty 1D signal, got shape {sig.shape}")
    f0, w = _int_window(fov)
    folded = np.zeros(w, dtype=sig.dtype)
    contribs = [[] for _ in range(w)]
    for i in range(sig.size):
        j = (i - f0) % w
        folded[j] += sig[i]
        contribs[j].append(i)
    return FoldResult(folded, tuple(tuple(c) for c in contribs))


def brute_alias_free(object_support, fov: Interval) -> set:
    """Object pixels whose fold bin receives only their own contribution."""
    support = set(int(i) for i in object_support)
    f0, w = _int_window(fov)
    counts = {}
    for i in support:
        j = (i - f0) % w
        counts[j] = counts.get(j, 0) + 1
    return {i for i in support if counts[(i - f0) % w] == 1}


def _pixels(interval: Interval):
    return range(int(interval.lo), int(interval.hi))


def _phase_alias_free(obj: Interval, roi: Interval, width: int) -> bool:
    """True iff every integer ROI pixel receives only its own signal.

    An ROI pixel outside the object is clean iff no object pixel shares its
    residue class; collisions depend only on the width, not the window
    position.
    """
    support = set(_pixels(obj))
    residues = {}
    for i in support:
        residues[i % width] = residues.get(i % width, 0) + 1
    for p in _pixels(roi):
        n = residues.get(p % width, 0)
        if p in support:
            if n != 1:
                return False
        elif n != 0:
            return False
    return True


def verify_prescription(object_box: Box, roi: Box, fov: Box, phase_encode_axis: str = ROWS) -> Verdicts:
    """Exhaustively check a prescribed window against an object and ROI.

    contains_roi: the ROI fits inside the window (both axes).
    roi_alias_free: along the phase axis no object signal folds onto any
        integer ROI pixel other than itself.
    is_minimal: at phase width W-1 every placement that still contains the
        ROI aliases into it (or no placement contains it at all).
    """
    for b in (object_box, roi, fov):
        if not b.is_integer():
            raise NumericError("oracle requires integer grid")
    obj1d = object_box.interval(phase_encode_axis)
    roi1d = roi.interval(phase_encode_axis)
    fov1d = fov.interval(phase_encode_axis)
    _, width = _int_window(fov1d)

    contains = fov.contains(roi)
    alias_free = _phase_alias_free(obj1d, roi1d, width)

    narrower = width - 1
    if narrower < 1 or narrower < roi1d.width:
        minimal = True
    else:
        minimal = True
        r0, r1 = int(roi1d.lo), int(roi1d.hi)
        for f0 in range(r1 - narrower, r0 + 1):
            if _phase_alias_free(obj1d, roi1d, narrower):
                minimal = False
                break
    return Verdicts(contains, alias_free, minimal)
