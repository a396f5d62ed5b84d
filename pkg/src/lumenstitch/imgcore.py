"""Image buffers, pyramids, homography algebra and projective warping.

Conventions used throughout the package:

* images are 2D float64 arrays of intensities in [0, 1], indexed ``[y, x]``;
* pixel coordinates are zero-based with the origin at the top-left pixel
  center, so an image of width W covers x in [0, W-1];
* a homography maps points of the *first* image's frame into the second
  one's, and its bottom-right entry is pinned to 1 (8 free parameters).
"""

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .errors import ImageFormatError, SingularTransformError

# Anti-alias blur applied before each dyadic downsampling step.
PYRAMID_SMOOTH_SIGMA = 0.85

_MIN_DET = 1e-12


@dataclass(frozen=True)
class Image:
    """Single-channel intensity raster with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 2 or arr.size == 0:
            raise ImageFormatError("image data must be a non-empty 2D array")
        if not np.all(np.isfinite(arr)):
            raise ImageFormatError("image data contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageFormatError("image samples must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    @property
    def diagonal(self):
        return float(np.hypot(self.width, self.height))


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform with the bottom-right entry normalized to 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise SingularTransformError("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) < _MIN_DET:
            raise SingularTransformError("cannot normalize: a33 is (near) zero")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _MIN_DET:
            raise SingularTransformError("homography matrix is singular")
        object.__setattr__(self, "matrix", np.ascontiguousarray(m))

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    @classmethod
    def from_params(cls, mu):
        """Build from the 8-vector (a11, a12, a13, a21, a22, a23, a31, a32)."""
        mu = np.asarray(mu, dtype=np.float64)
        if mu.shape != (8,):
            raise SingularTransformError("parameter vector must have length 8")
        m = np.append(mu, 1.0).reshape(3, 3)
        return cls(m)

    @property
    def params(self):
        """The 8 free parameters, row-major, excluding the fixed a33."""
        return self.matrix.ravel()[:8].copy()


def load_image(path):
    """Decode a PNG/JPEG file into a normalized intensity Image.

    Color inputs are converted to luminance; 8-bit values are mapped onto
    [0, 1] by dividing by 255.
    """
    try:
        with PILImage.open(path) as im:
            im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot decode image file {path!r}: {exc}") from exc
    if arr.size == 0:
        raise ImageFormatError(f"zero-sized image: {path!r}")
    return Image(arr / 255.0)


def save_image(img, path):
    """Write an Image as an 8-bit grayscale PNG/JPEG (by file extension)."""
    arr = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path)


@dataclass(frozen=True)
class Pyramid:
    """Dyadic image pyramid, coarsest level first, finest level last."""

    levels: tuple = field(default_factory=tuple)

    @property
    def num_levels(self):
        return len(self.levels)

    @property
    def finest(self):
        return self.levels[-1]

    @property
    def coarsest(self):
        return self.levels[0]


def _halve(img):
    smoothed = gaussian_filter(img.data, PYRAMID_SMOOTH_SIGMA, mode="nearest")
    h2, w2 = img.height // 2, img.width // 2
    return Image(np.clip(smoothed[: 2 * h2 : 2, : 2 * w2 : 2], 0.0, 1.0))


def build_pyramid(img, min_dim=32, num_levels=None):
    """Build a coarse-to-fine pyramid by Gaussian smoothing + floor halving.

    Levels are generated until the next one would drop below `min_dim` in
    either dimension (or until `num_levels` is reached when given). The
    finest level is the input image itself.
    """
    if min_dim < 8:
        raise ValueError("min_dim must be at least 8")
    if min(img.width, img.height) < min_dim:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than min_dim={min_dim}"
        )
    levels = [img]
    while min(levels[-1].width, levels[-1].height) // 2 >= min_dim:
        if num_levels is not None and len(levels) >= num_levels:
            break
        levels.append(_halve(levels[-1]))
    return Pyramid(tuple(reversed(levels)))


def pyramid_levels_for(width, height, min_dim=32):
    """Number of pyramid levels build_pyramid would produce for this extent."""
    n, d = 1, min(width, height)
    while d // 2 >= min_dim:
        d //= 2
        n += 1
    return n


def apply_point(h, p):
    """Map a single 2D point through a homography."""
    x, y = float(p[0]), float(p[1])
    m = h.matrix
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < _MIN_DET:
        raise SingularTransformError("point maps to the line at infinity")
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def apply_points(h, pts):
    """Map an (N, 2) array of points through a homography."""
    pts = np.asarray(pts, dtype=np.float64)
    m = h.matrix
    w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if np.any(np.abs(w) < _MIN_DET):
        raise SingularTransformError("some points map to the line at infinity")
    out = np.empty_like(pts)
    out[:, 0] = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]) / w
    out[:, 1] = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]) / w
    return out


def compose(h1, h2):
    """Homography equal to applying h2 first, then h1."""
    return Homography(h1.matrix @ h2.matrix)


def invert(h):
    try:
        inv = np.linalg.inv(h.matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularTransformError("homography is not invertible") from exc
    return Homography(inv)


def sample_bilinear(data, u, v):
    """Bilinearly sample `data` at float coordinates, with an inside mask.

    Points outside [0, W-1] x [0, H-1] get value 0 and mask False. The
    returned derivative pair is the exact gradient of the interpolant.
    """
    h, w = data.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = (u >= 0.0) & (u <= w - 1.0) & (v >= 0.0) & (v <= h - 1.0)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    x0 = np.minimum(uc.astype(np.intp), w - 2)
    y0 = np.minimum(vc.astype(np.intp), h - 2)
    fx = uc - x0
    fy = vc - y0
    f00 = data[y0, x0]
    f01 = data[y0, x0 + 1]
    f10 = data[y0 + 1, x0]
    f11 = data[y0 + 1, x0 + 1]
    top = f00 + fx * (f01 - f00)
    bot = f10 + fx * (f11 - f10)
    val = np.where(inside, top + fy * (bot - top), 0.0)
    du = np.where(inside, (1.0 - fy) * (f01 - f00) + fy * (f11 - f10), 0.0)
    dv = np.where(inside, (1.0 - fx) * (f10 - f00) + fx * (f11 - f01), 0.0)
    return val, du, dv, inside


def warp(src, h, extent=None, fill=0.0):
    """Warp `src` into a new frame so that out(x) = src(h^-1 x).

    `h` maps source coordinates into output coordinates. Returns the warped
    image and a boolean mask flagging pixels whose preimage fell inside the
    source bounds; everything else takes `fill`.
    """
    if extent is None:
        extent = (src.width, src.height)
    out_w, out_h = int(extent[0]), int(extent[1])
    hinv = invert(h).matrix
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    w = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    tiny = np.abs(w) < _MIN_DET
    w = np.where(tiny, 1.0, w)
    u = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / w
    v = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / w
    val, _, _, inside = sample_bilinear(src.data, u, v)
    inside &= ~tiny
    out = np.where(inside, val, fill)
    return Image(np.clip(out, 0.0, 1.0)), inside
