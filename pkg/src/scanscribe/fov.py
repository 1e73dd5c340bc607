"""Closed-form smallest alias-free sampling window from an object mask and ROI.

Along the phase-encode axis the object wraps around at multiples of the
window width, so the width must be large enough that both wrap copies land
outside the ROI.  With object width y and signed object-to-ROI margins
a <= b, the minimal width is y - a (clamped below by the ROI width when the
ROI sticks out of the object).  Along the readout axis the window simply
crops to the ROI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import alias_sim, masking
from .errors import EmptyMaskError, NoObjectError, NumericError
from .geometry import Box, COLUMNS, Interval, ROWS, box_union


@dataclass(frozen=True)
class FovInputs1D:
    object: Interval
    roi: Interval

    @property
    def y(self) -> float:
        return self.object.width

    @property
    def margin_lo(self) -> float:
        return self.roi.lo - self.object.lo

    @property
    def margin_hi(self) -> float:
        return self.object.hi - self.roi.hi

    @property
    def a(self) -> float:
        return min(self.margin_lo, self.margin_hi)

    @property
    def b(self) -> float:
        return max(self.margin_lo, self.margin_hi)


def smallest_fov_1d(inputs: FovInputs1D) -> Interval:
    """Narrowest window containing the ROI with no wrap copy inside it.

    The preferred placement puts the window edge on the tighter-margin side
    halfway between the object edge and the ROI edge (centering the
    alias-free region); it is then clamped so the ROI stays inside.
    """
    if inputs.y <= 0:
        raise NumericError("degenerate object interval")
    width = max(inputs.y - inputs.a, inputs.roi.width)
    if inputs.margin_lo <= inputs.margin_hi:
        lo = inputs.object.lo + inputs.a / 2.0
    else:
        lo = inputs.object.hi - inputs.a / 2.0 - width
    # any placement with roi inside is acceptable; clamp into that range
    lo = min(max(lo, inputs.roi.hi - width), inputs.roi.lo)
    integral = all(float(v).is_integer() for v in (
        inputs.object.lo, inputs.object.hi, inputs.roi.lo, inputs.roi.hi))
    if integral:
        # odd margins land the midpoint on a half pixel; any integer
        # placement at the same width is equally alias-free
        lo = min(max(math.floor(lo), inputs.roi.hi - width), inputs.roi.lo)
    return Interval(lo, lo + width)


def alias_free_interval(obj: Interval, fov_width: float) -> Interval:
    """Region of the object receiving no wrap-around signal at this width.

    Closed form (obj.hi - W, obj.lo + W) intersected with the object; valid
    for W > y/2, which always holds when the ROI lies inside the object.
    The brute-force simulator remains the ground truth for smaller widths.
    """
    if fov_width <= 0:
        raise NumericError("window width must be positive")
    lo = obj.hi - fov_width
    hi = obj.lo + fov_width
    if lo >= hi:
        return Interval(obj.lo, obj.lo)
    return Interval(lo, hi).intersect(obj)


def prescribe_slice(mask: Box, roi: Box, phase_encode_axis: str = ROWS) -> Box:
    """Per-slice window: minimal alias-free interval along the phase axis,
    exact crop to the ROI along the readout axis."""
    if phase_encode_axis == ROWS:
        rows = smallest_fov_1d(FovInputs1D(mask.rows(), roi.rows()))
        cols = roi.cols()
    elif phase_encode_axis == COLUMNS:
        rows = roi.rows()
        cols = smallest_fov_1d(FovInputs1D(mask.cols(), roi.cols()))
    else:
        raise NumericError(f"unknown phase-encode axis {phase_encode_axis!r}")
    return Box.from_intervals(rows, cols)


@dataclass(frozen=True)
class SliceReport:
    index: int
    mask: Box
    fov: Box
    minimal_width: float
    alias_free: Interval
    verdicts: alias_sim.Verdicts | None


@dataclass(frozen=True)
class PrescriptionReport:
    fov: Box
    roi: Box
    phase_encode_axis: str
    slices: tuple
    skipped: tuple = field(default=())  # indices of empty-mask slices


def snap_outward(box: Box) -> Box:
    return Box(
        math.floor(box.top), math.ceil(box.bottom),
        math.floor(box.left), math.ceil(box.right),
    )


def prescribe_stack(
    slices,
    roi: Box,
    policy: masking.ThresholdPolicy = masking.ThresholdPolicy(),
    phase_encode_axis: str = ROWS,
) -> PrescriptionReport:
    """Mask every slice, prescribe per slice, and take the bounding union.

    Slices with an empty object mask are skipped and recorded.  The ROI is
    snapped outward to the integer grid first so the brute-force verdicts
    are exact for the reported windows (thresholded masks are integral by
    construction; scanners prescribe on a discrete grid anyway).
    """
    slices = list(slices)
    if not slices:
        raise NoObjectError("no object found")
    roi_int = snap_outward(roi)
    reports = []
    skipped = []
    for k, sl in enumerate(slices):
        try:
            mask = masking.extract_object_mask(np.asarray(sl), policy)
        except EmptyMaskError:
            skipped.append(k)
            continue
        fov = prescribe_slice(mask, roi_int, phase_encode_axis)
        phase_obj = mask.interval(phase_encode_axis)
        width = fov.interval(phase_encode_axis).width
        verdicts = None
        if mask.is_integer() and fov.is_integer():
            verdicts = alias_sim.verify_prescription(mask, roi_int, fov, phase_encode_axis)
        reports.append(SliceReport(
            index=k,
            mask=mask,
            fov=fov,
            minimal_width=width,
            alias_free=alias_free_interval(phase_obj, width),
            verdicts=verdicts,
        ))
    if not reports:
        raise NoObjectError("no object found")
    return PrescriptionReport(
        fov=box_union(r.fov for r in reports),
        roi=roi_int,
        phase_encode_axis=phase_encode_axis,
        slices=tuple(reports),
        skipped=tuple(skipped),
    )
