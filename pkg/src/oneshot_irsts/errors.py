"""Exception hierarchy shared by every module."""


class IrstsError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IrstsError, ValueError):
    """Array or window sizes are incompatible."""


class BoundsError(IrstsError, ValueError):
    """A coordinate falls outside its host raster."""


class ParameterError(IrstsError, ValueError):
    """A numeric parameter is out of its valid range."""


class EmptyTargetError(IrstsError, ValueError):
    """A target mask or masked feature grid has no support."""


class BackendError(IrstsError, RuntimeError):
    """A model backend failed to load, run, or honour its shape contract."""


class ValidationError(IrstsError, ValueError):
    """An input file (manifest, annotation, config) is malformed."""


class FrameError(IrstsError, RuntimeError):
    """Segmentation of a single frame failed."""

    def __init__(self, frame_index, message):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index
