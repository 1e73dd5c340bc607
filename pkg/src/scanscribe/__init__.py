"""Localizer-stack ROI prediction and minimal alias-free FOV prescription."""

__version__ = "0.1.0"

from .geometry import Box, Interval, boundary_error, box_union, iou  # noqa: F401
