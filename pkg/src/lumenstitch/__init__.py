"""Registration and 2D map stitching for low-texture image sequences.

The pipeline pairs a scale-invariant feature stage (PCA-projected SIFT
descriptors refined by likelihood-based outlier removal) with a normalized
mutual-information refinement driven by a damped-Newton search in a
multiscale pyramid, then accumulates registered frames into seam-blended
map segments.
"""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
