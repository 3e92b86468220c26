"""Exception types shared across the package."""


class DualAlignError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(DualAlignError):
    pass


class SpacingMismatch(DualAlignError):
    pass


class LabelOutOfRange(DualAlignError):
    pass


class NonFiniteData(DualAlignError):
    pass


class DegenerateVolume(DualAlignError):
    pass


class RoiOutOfBounds(DualAlignError):
    pass


class UnsupportedFormat(DualAlignError):
    pass


class CorruptHeader(DualAlignError):
    pass


class EmptyDataset(DualAlignError):
    pass


class NonFiniteLoss(DualAlignError):
    pass


class ArchMismatch(DualAlignError):
    pass


class CorruptCheckpoint(DualAlignError):
    pass


class EmptyLog(DualAlignError):
    pass
