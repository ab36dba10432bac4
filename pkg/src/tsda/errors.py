"""Exception hierarchy shared across the package."""


class TSDAError(Exception):
    """Base class for all package errors."""


class ArgumentError(TSDAError, ValueError):
    """An argument violates an operation's preconditions."""


class SegmentationError(ArgumentError):
    pass


class SplitError(ArgumentError):
    pass


class LoadError(TSDAError):
    """A dataset directory could not be loaded."""


class MissingFileError(LoadError, FileNotFoundError):
    pass


class ShapeMismatchError(LoadError):
    pass


class LabelRangeError(LoadError):
    pass


class SelectionError(TSDAError):
    """No candidate is eligible for selection."""


class SweepError(TSDAError):
    """A sweep could not proceed (I/O or plan problems)."""


class LabelLeakError(TSDAError):
    """Target labels were read where the protocol forbids it."""
