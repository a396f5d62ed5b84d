"""Pre-registration enhancement and the SSIM pair-admission gate.

Consecutive frames are only registered when their structural similarity
exceeds a threshold (default 0.70); dissimilar pairs start a new map
segment instead of forcing a bogus alignment.

Enhancement is a pluggable substitute for the original preprocessing:
contrast-limited adaptive histogram equalization followed by an unsharp
mask whose smoother is edge-preserving, which stretches the narrow
intensity band typical of endoscopic frames without haloing edges.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

# SSIM constants: 11x11 Gaussian window, sigma 1.5, K1/K2 stabilizers on a
# unit dynamic range.
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 5.0 / SSIM_SIGMA  # 11x11 support
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0

DEFAULT_SSIM_THRESHOLD = 0.70

EQUALIZE_BINS = 256
EQUALIZE_CLIP = 2.0        # histogram clip, in multiples of the mean bin count
EQUALIZE_STRENGTH = 0.6    # blend between stretched input and equalized map
UNSHARP_AMOUNT = 0.5
BILATERAL_SPATIAL_SIGMA = 3.0
BILATERAL_RANGE_SIGMA = 0.1


@dataclass(frozen=True)
class GateDecision:
    """Outcome of the pair-admission check."""

    ssim: float
    admitted: bool
    threshold: float


def ssim(a, b):
    """Mean local structural similarity of two equally sized images.

    Gaussian-weighted local statistics; result is in [-1, 1] and equals 1
    exactly only for identical inputs.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    x, y = a.data, b.data

    def smooth(img):
        return gaussian_filter(img, SSIM_SIGMA, truncate=SSIM_TRUNCATE,
                               mode="reflect")

    mu_x = smooth(x)
    mu_y = smooth(y)
    var_x = smooth(x * x) - mu_x * mu_x
    var_y = smooth(y * y) - mu_y * mu_y
    cov = smooth(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def gate(a, b, threshold=DEFAULT_SSIM_THRESHOLD):
    """Admit a pair for registration iff ssim(a, b) > threshold."""
    value = ssim(a, b)
    return GateDecision(ssim=value, admitted=value > threshold,
                        threshold=threshold)


def _equalize(data, clip=EQUALIZE_CLIP, bins=EQUALIZE_BINS,
              strength=EQUALIZE_STRENGTH):
    """Clipped global histogram equalization, blended with the input.

    The histogram is clipped at `clip` times the mean bin count (excess
    redistributed uniformly) so near-empty bins cannot explode, and the
    resulting CDF remap is blended with the identity at `strength`. The
    remap is a single monotone intensity map for the whole frame, so it
    reshapes the histogram without injecting any frame-locked spatial
    structure (and mutual-information scores are insensitive to it).
    """
    quant = np.minimum((data * bins).astype(np.intp), bins - 1)
    hist = np.bincount(quant.ravel(), minlength=bins).astype(np.float64)
    limit = clip * data.size / bins
    excess = np.sum(np.maximum(hist - limit, 0.0))
    hist = np.minimum(hist, limit) + excess / bins
    cdf = np.cumsum(hist)
    cdf /= cdf[-1]
    return (1.0 - strength) * data + strength * cdf[quant]


def _bilateral(data, spatial_sigma=BILATERAL_SPATIAL_SIGMA,
               range_sigma=BILATERAL_RANGE_SIGMA):
    """Edge-preserving smoother via shift-and-accumulate bilateral filtering."""
    radius = int(np.ceil(2.0 * spatial_sigma))
    pad = np.pad(data, radius, mode="reflect")
    h, w = data.shape
    acc = np.zeros_like(data)
    norm = np.zeros_like(data)
    inv_2ss = 1.0 / (2.0 * spatial_sigma * spatial_sigma)
    inv_2rs = 1.0 / (2.0 * range_sigma * range_sigma)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sw = np.exp(-(dx * dx + dy * dy) * inv_2ss)
            shifted = pad[radius + dy:radius + dy + h,
                          radius + dx:radius + dx + w]
            rw = np.exp(-((shifted - data) ** 2) * inv_2rs)
            wgt = sw * rw
            acc += wgt * shifted
            norm += wgt
    return acc / norm


STRETCH_PERCENTILES = (0.5, 99.5)


def _stretch(data):
    lo, hi = np.percentile(data, STRETCH_PERCENTILES)
    if hi - lo < 1e-9:
        return data
    return np.clip((data - lo) / (hi - lo), 0.0, 1.0)


def enhance(img):
    """Contrast-stretch, equalize and sharpen a frame.

    Percentile stretch opens up the narrow global band, the clipped
    equalization reshapes the histogram, and the bilateral-based unsharp
    mask accentuates structure without amplifying flat-region noise.
    Output stays in [0, 1].
    """
    from .imgcore import Image

    eq = _equalize(_stretch(img.data))
    smooth = _bilateral(eq)
    out = eq + UNSHARP_AMOUNT * (eq - smooth)
    return Image(np.clip(out, 0.0, 1.0))
