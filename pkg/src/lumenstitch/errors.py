"""Exception hierarchy shared across the package."""


class LumenstitchError(Exception):
    """Base class for all package-specific failures."""


class ImageFormatError(LumenstitchError):
    """Raised when an image file cannot be decoded or has invalid shape."""


class SingularTransformError(LumenstitchError):
    """Raised when a homography is singular or a point maps to infinity."""


class InsufficientOverlapError(LumenstitchError):
    """Raised when too few pixels of the static image land inside the moving one."""


class DegenerateEntropyError(LumenstitchError):
    """Raised when the joint entropy vanishes and NMI is undefined."""


class FeatureInitError(LumenstitchError):
    """Raised when the feature stage cannot produce an initial transform."""


class DegenerateConfigurationError(LumenstitchError):
    """Raised when a point configuration cannot constrain a homography."""


class NoModelError(LumenstitchError):
    """Raised when robust fitting finds no model with enough inliers."""


class DegenerateDescriptorError(LumenstitchError):
    """Raised when a descriptor projects to the zero vector."""


class RankDeficientError(LumenstitchError):
    """Raised when a training corpus cannot support the requested basis size."""


class GateRejectedError(LumenstitchError):
    """Raised when an image pair fails the similarity admission gate."""


class MapTooLargeError(LumenstitchError):
    """Raised when the stitching canvas would exceed its configured maximum."""


class InfeasibleSynthError(LumenstitchError):
    """Raised when no valid synthetic pair can be drawn from the source image."""
