"""Exception types raised by the reconstruction toolkit."""


class VeinmosaicError(Exception):
    """Base class for all toolkit errors."""


class DegenerateDepthError(VeinmosaicError):
    """Projection depth is (numerically) zero for an off-axis point."""


class SensorDomainError(VeinmosaicError, ValueError):
    """Force differences exceed the arcsine domain of the tilt model.

    Signals a sensor fault or a wrong Hooke constant.
    """


class GrazingTiltError(VeinmosaicError, ValueError):
    """Tilt normal is too close to the image plane to define a depth field."""


class FoldOverError(VeinmosaicError):
    """The radial correction factor is non-positive somewhere in the image.

    The load is so large that the deformation model inverts; usually a sign
    of bad calibration constants.
    """


class ImageTooSmallError(VeinmosaicError, ValueError):
    """Feature detection needs at least a 32x32 valid region."""


class DegenerateConfigurationError(VeinmosaicError):
    """Point configuration is rank-deficient (e.g. collinear) for a solver."""


class InsufficientInliersError(VeinmosaicError):
    """Robust estimation could not find a consensus set of minimal size."""


class CheiralityError(VeinmosaicError):
    """No pose candidate places a majority of points in front of both cameras."""


class SingularHomographyError(VeinmosaicError):
    """The plane projection of a pose is non-invertible."""


class TrackingLossError(VeinmosaicError):
    """A frame could not be registered against the current reconstruction."""


class InsufficientExcitationError(VeinmosaicError, ValueError):
    """Calibration input carries no usable signal (zero angles or zero load)."""


class NoMatchesError(VeinmosaicError):
    """Feature matching between a calibration pair produced no correspondences."""


class TiltedCaptureError(VeinmosaicError, ValueError):
    """A calibration capture was taken at a non-normal probe angle."""


class FrameMismatchError(VeinmosaicError, ValueError):
    """Two per-frame records do not cover the same frame ids."""


class OutOfBoundsFootprintError(VeinmosaicError, ValueError):
    """A scripted scanner footprint leaves the phantom surface."""


class DatasetError(VeinmosaicError):
    """A dataset directory is missing files or contains malformed records."""
