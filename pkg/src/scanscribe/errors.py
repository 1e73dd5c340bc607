"""Exception types shared across the package.

Each distinct failure mode that callers are expected to branch on gets its
own class; everything inherits from ScanscribeError so the CLI can map
errors to exit codes in one place.
"""


class ScanscribeError(Exception):
    pass


class DataError(ScanscribeError):
    """Bad or inconsistent input data (files, manifests, boxes)."""


class NumericError(ScanscribeError):
    """Numeric contract violation (shapes, degenerate inputs)."""


class EmptyMaskError(DataError):
    """No row or column sum surpasses the threshold."""


class NoObjectError(DataError):
    """Every slice in a stack produced an empty object mask."""


class ShapeError(NumericError):
    """Tensor/array shape mismatch; message carries both shapes."""


class ManifestError(DataError):
    """Malformed dataset manifest."""


class MissingSliceError(DataError):
    """Manifest references a slice file that does not exist."""


class LabelBoundsError(DataError):
    """Label box lies outside the image bounds."""


class SplitOverlapError(DataError):
    """The same record id appears in more than one split."""


class WeightsFormatError(DataError):
    """Weights file cannot be parsed at all."""


class BadMagicError(WeightsFormatError):
    pass


class VersionMismatchError(WeightsFormatError):
    pass


class TruncatedFileError(WeightsFormatError):
    pass


class MissingTensorError(DataError):
    """A tensor required by the architecture is absent from the file."""


class ArchitectureMismatchError(DataError):
    """Loaded weights declare a different architecture/config."""
