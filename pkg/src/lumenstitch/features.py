"""Scale-invariant keypoints, descriptors, and ratio-test matching.

Detection follows the classic difference-of-Gaussians recipe: build a
Gaussian scale space, locate 3D extrema of the DoG stack, refine them to
subpixel accuracy with a quadratic fit, reject low-contrast and edge-like
candidates, then assign dominant gradient orientations.

Two descriptors are provided: the 128-dimensional oriented gradient
histogram, and a compact descriptor obtained by projecting a normalized
39x39 gradient patch (3042 values) onto a learned principal-component
basis. The basis is trained offline from harvested patches and can be
shipped as a small binary sidecar.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (DegenerateDescriptorError, LumenstitchError,
                     RankDeficientError)

# Scale-space construction
BASE_SIGMA = 1.6
ASSUMED_BLUR = 0.5
INTERVALS = 3
MIN_OCTAVE_DIM = 16

# Keypoint acceptance
CONTRAST_THRESHOLD = 0.03  # on [0, 1] intensities, applied per interval
EDGE_RATIO = 10.0
BORDER = 5
MAX_REFINE_STEPS = 5
MAX_KEYPOINTS = 1000

# Orientation assignment
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
ORI_PEAK_RATIO = 0.8

# SIFT descriptor geometry
DESCR_WIDTH = 4
DESCR_BINS = 8
DESCR_SCALE_FACTOR = 3.0
DESCR_CLAMP = 0.2

# PCA descriptor geometry
PATCH_GRID = 41          # sampled intensities; gradients use the inner 39x39
PATCH_DIM = 2 * 39 * 39  # 3042
PATCH_SPACING = 0.3      # grid step in units of the keypoint scale
DEFAULT_PCA_DIM = 36

DEFAULT_RATIO_THRESHOLD = 0.80

PCA_MAGIC = b"LPCB"


@dataclass(frozen=True)
class Keypoint:
    """Subpixel scale-space extremum with dominant orientation."""

    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass(frozen=True)
class Match:
    """Nearest-neighbour correspondence with its ambiguity ratio."""

    index_a: int
    index_b: int
    d1: float
    d2: float

    @property
    def ratio(self):
        return self.d1 / self.d2 if self.d2 > 0 else 1.0


@dataclass(frozen=True)
class PcaBasis:
    """Principal-component projection for gradient patches."""

    mean: np.ndarray   # (PATCH_DIM,)
    basis: np.ndarray  # (d, PATCH_DIM), orthonormal rows
    d: int


# ---------------------------------------------------------------------------
# Detection


def _scale_space(data):
    """Gaussian octaves and their DoG stacks."""
    k = 2.0 ** (1.0 / INTERVALS)
    n_scales = INTERVALS + 3
    sigmas = BASE_SIGMA * k ** np.arange(n_scales)
    increments = [np.sqrt(max(BASE_SIGMA**2 - ASSUMED_BLUR**2, 0.01))]
    increments += [
        float(np.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2))
        for i in range(1, n_scales)
    ]

    octaves = []
    base = ndimage.gaussian_filter(data, increments[0], mode="nearest")
    while min(base.shape) >= MIN_OCTAVE_DIM:
        stack = [base]
        for s in range(1, n_scales):
            stack.append(
                ndimage.gaussian_filter(stack[-1], increments[s], mode="nearest")
            )
        octaves.append(np.stack(stack))
        base = stack[INTERVALS][::2, ::2].copy()
    dogs = [o[1:] - o[:-1] for o in octaves]
    return octaves, dogs, sigmas


def _local_extrema(dog):
    """Boolean mask of 26-neighbourhood extrema of a DoG stack."""
    n, h, w = dog.shape
    pre = CONTRAST_THRESHOLD / (2.0 * INTERVALS)
    mx = ndimage.maximum_filter(dog, size=3, mode="constant", cval=-np.inf)
    mn = ndimage.minimum_filter(dog, size=3, mode="constant", cval=np.inf)
    cand = ((dog == mx) | (dog == mn)) & (np.abs(dog) > pre)
    cand[0] = cand[-1] = False
    cand[:, :BORDER, :] = cand[:, -BORDER:, :] = False
    cand[:, :, :BORDER] = cand[:, :, -BORDER:] = False
    return cand


def _refine(dog, s, y, x):
    """Quadratic subpixel refinement; returns (offset, value, hessian_xy)."""
    h, w = dog.shape[1:]
    for _ in range(MAX_REFINE_STEPS):
        cube = dog[s - 1:s + 2, y - 1:y + 2, x - 1:x + 2]
        g = 0.5 * np.array([
            cube[1, 1, 2] - cube[1, 1, 0],
            cube[1, 2, 1] - cube[1, 0, 1],
            cube[2, 1, 1] - cube[0, 1, 1],
        ])
        dxx = cube[1, 1, 2] - 2 * cube[1, 1, 1] + cube[1, 1, 0]
        dyy = cube[1, 2, 1] - 2 * cube[1, 1, 1] + cube[1, 0, 1]
        dss = cube[2, 1, 1] - 2 * cube[1, 1, 1] + cube[0, 1, 1]
        dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
        dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
        dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            offset = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = cube[1, 1, 1] + 0.5 * np.dot(g, offset)
            return offset, value, (dxx, dyy, dxy)
        x += int(np.round(offset[0]))
        y += int(np.round(offset[1]))
        s += int(np.round(offset[2]))
        if (s < 1 or s > dog.shape[0] - 2 or x < BORDER or x >= w - BORDER
                or y < BORDER or y >= h - BORDER):
            return None
    return None


def _orientations(gauss, x, y, sigma_oct):
    """Dominant gradient orientations around a point of one octave image."""
    h, w = gauss.shape
    radius = int(round(ORI_RADIUS_FACTOR * ORI_SIGMA_FACTOR * sigma_oct))
    xi, yi = int(round(x)), int(round(y))
    x0, x1 = max(xi - radius, 1), min(xi + radius + 1, w - 1)
    y0, y1 = max(yi - radius, 1), min(yi + radius + 1, h - 1)
    if x1 - x0 < 2 or y1 - y0 < 2:
        return []
    gx = 0.5 * (gauss[y0:y1, x0 + 1:x1 + 1] - gauss[y0:y1, x0 - 1:x1 - 1])
    gy = 0.5 * (gauss[y0 + 1:y1 + 1, x0:x1] - gauss[y0 - 1:y1 - 1, x0:x1])
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % (2 * np.pi)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    wgt = np.exp(-((xs - x) ** 2 + (ys - y) ** 2)
                 / (2 * (ORI_SIGMA_FACTOR * sigma_oct) ** 2))
    bins = (ang * ORI_BINS / (2 * np.pi)).astype(np.intp) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=(mag * wgt).ravel(),
                       minlength=ORI_BINS)
    for _ in range(2):  # circular [1, 4, 6, 4, 1]/16 smoothing, applied twice
        hist = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
                + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    peak = hist.max()
    if peak <= 0:
        return []
    out = []
    for i in np.nonzero(
        (hist >= ORI_PEAK_RATIO * peak)
        & (hist > np.roll(hist, 1))
        & (hist > np.roll(hist, -1))
    )[0]:
        left, mid, right = hist[i - 1], hist[i], hist[(i + 1) % ORI_BINS]
        denom = left - 2 * mid + right
        shift = 0.5 * (left - right) / denom if abs(denom) > 1e-12 else 0.0
        out.append(((i + shift) * 2 * np.pi / ORI_BINS) % (2 * np.pi))
    return out


def detect_keypoints(img, max_keypoints=MAX_KEYPOINTS):
    """Difference-of-Gaussians extrema, subpixel-refined and filtered.

    Deterministic for identical inputs; strongest `max_keypoints` kept,
    ordered by decreasing response then position.
    """
    if min(img.width, img.height) < MIN_OCTAVE_DIM:
        raise LumenstitchError(
            f"image {img.width}x{img.height} too small for detection"
        )
    octaves, dogs, sigmas = _scale_space(img.data)
    k = 2.0 ** (1.0 / INTERVALS)
    keypoints = []
    edge_limit = (EDGE_RATIO + 1.0) ** 2 / EDGE_RATIO
    for oct_idx, dog in enumerate(dogs):
        cand = _local_extrema(dog)
        for s, y, x in np.argwhere(cand):
            res = _refine(dog, s, y, x)
            if res is None:
                continue
            offset, value, (dxx, dyy, dxy) = res
            if abs(value) < CONTRAST_THRESHOLD / INTERVALS:
                continue
            tr = dxx + dyy
            det = dxx * dyy - dxy * dxy
            if det <= 0 or tr * tr / det >= edge_limit:
                continue
            scale_mult = 2.0 ** oct_idx
            sigma_oct = BASE_SIGMA * k ** (s + offset[2])
            xo = (x + offset[0]) * scale_mult
            yo = (y + offset[1]) * scale_mult
            if not (0 <= xo < img.width and 0 <= yo < img.height):
                continue
            gauss = octaves[oct_idx][int(round(np.clip(s + offset[2], 0,
                                                       INTERVALS + 2)))]
            for theta in _orientations(gauss, x + offset[0], y + offset[1],
                                       sigma_oct):
                keypoints.append(Keypoint(
                    x=float(xo), y=float(yo),
                    scale=float(sigma_oct * scale_mult),
                    orientation=float(theta),
                    response=float(abs(value)),
                ))
    keypoints.sort(key=lambda kp: (-kp.response, kp.y, kp.x, kp.scale))
    seen = set()
    unique = []
    for kp in keypoints:
        key = (round(kp.x, 2), round(kp.y, 2), round(kp.scale, 2),
               round(kp.orientation, 3))
        if key not in seen:
            seen.add(key)
            unique.append(kp)
    return unique[:max_keypoints]


# ---------------------------------------------------------------------------
# Descriptors


def _smoothed_cache(img):
    """Lazily blurred copies of the image, keyed by quantized scale."""
    cache = {}

    def get(scale):
        key = round(float(scale), 2)
        if key not in cache:
            extra = np.sqrt(max(key**2 - ASSUMED_BLUR**2, 0.01))
            cache[key] = ndimage.gaussian_filter(img.data, extra,
                                                 mode="nearest")
        return cache[key]

    return get


def describe_sift(img, kp, _smoothed=None):
    """128-d oriented gradient histogram descriptor, L2-normalized.

    Gradients are taken at the keypoint scale, rotated into its
    orientation frame, soft-assigned trilinearly into a 4x4x8 histogram,
    clamped at 0.2 and renormalized.
    """
    data = (_smoothed or _smoothed_cache(img))(kp.scale)
    h, w = data.shape
    cell = DESCR_SCALE_FACTOR * kp.scale
    radius = int(round(cell * np.sqrt(2) * (DESCR_WIDTH + 1) * 0.5))
    xi, yi = int(round(kp.x)), int(round(kp.y))
    x0, x1 = max(xi - radius, 1), min(xi + radius + 1, w - 1)
    y0, y1 = max(yi - radius, 1), min(yi + radius + 1, h - 1)
    if x1 <= x0 or y1 <= y0:
        raise LumenstitchError("descriptor support lies outside the image")
    gx = 0.5 * (data[y0:y1, x0 + 1:x1 + 1] - data[y0:y1, x0 - 1:x1 - 1])
    gy = 0.5 * (data[y0 + 1:y1 + 1, x0:x1] - data[y0 - 1:y1 - 1, x0:x1])
    mag = np.hypot(gx, gy).ravel()
    ang = (np.arctan2(gy, gx).ravel() - kp.orientation) % (2 * np.pi)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = (xs.ravel() - kp.x)
    dy = (ys.ravel() - kp.y)
    ct, st = np.cos(kp.orientation), np.sin(kp.orientation)
    rx = (ct * dx + st * dy) / cell
    ry = (-st * dx + ct * dy) / cell
    # bin coordinates centered on the 4x4 grid
    bx = rx + DESCR_WIDTH / 2 - 0.5
    by = ry + DESCR_WIDTH / 2 - 0.5
    keep = (bx > -1) & (bx < DESCR_WIDTH) & (by > -1) & (by < DESCR_WIDTH)
    bx, by, mag, ang = bx[keep], by[keep], mag[keep], ang[keep]
    rr = rx[keep] ** 2 + ry[keep] ** 2
    wgt = mag * np.exp(-rr / (0.5 * DESCR_WIDTH**2))
    bo = ang * DESCR_BINS / (2 * np.pi)

    hist = np.zeros((DESCR_WIDTH + 2, DESCR_WIDTH + 2, DESCR_BINS))
    x_0 = np.floor(bx).astype(np.intp)
    y_0 = np.floor(by).astype(np.intp)
    o_0 = np.floor(bo).astype(np.intp)
    fx = bx - x_0
    fy = by - y_0
    fo = bo - o_0
    for dyb in (0, 1):
        wy = np.where(dyb == 0, 1 - fy, fy)
        for dxb in (0, 1):
            wx = np.where(dxb == 0, 1 - fx, fx)
            for dob in (0, 1):
                wo = np.where(dob == 0, 1 - fo, fo)
                np.add.at(
                    hist,
                    (y_0 + dyb + 1, x_0 + dxb + 1, (o_0 + dob) % DESCR_BINS),
                    wgt * wy * wx * wo,
                )
    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        raise DegenerateDescriptorError("zero gradient energy at keypoint")
    vec = np.minimum(vec / norm, DESCR_CLAMP)
    vec /= np.linalg.norm(vec)
    return vec


def describe_sift_all(img, keypoints):
    """Batch SIFT description sharing one blurred-image cache."""
    smoothed = _smoothed_cache(img)
    out = []
    kept = []
    for kp in keypoints:
        try:
            out.append(describe_sift(img, kp, _smoothed=smoothed))
            kept.append(kp)
        except (LumenstitchError, DegenerateDescriptorError):
            continue
    return kept, np.array(out) if out else np.zeros((0, 128))


def extract_patch_vector(img, kp, _smoothed=None):
    """Normalized gradient patch (3042 values) around a keypoint.

    A 41x41 grid aligned with the keypoint orientation is sampled at
    spacing proportional to the scale; x/y gradients of the inner 39x39
    region are concatenated and scaled to unit L2 norm.
    """
    data = (_smoothed or _smoothed_cache(img))(kp.scale)
    h, w = data.shape
    half = (PATCH_GRID - 1) / 2.0
    step = PATCH_SPACING * kp.scale
    grid = (np.arange(PATCH_GRID) - half) * step
    gx, gy = np.meshgrid(grid, grid)
    ct, st = np.cos(kp.orientation), np.sin(kp.orientation)
    sx = kp.x + ct * gx - st * gy
    sy = kp.y + st * gx + ct * gy
    if (sx.min() < -half * step or sx.max() > w - 1 + half * step
            or sy.min() < -half * step or sy.max() > h - 1 + half * step):
        raise LumenstitchError("patch support lies outside the image")
    patch = ndimage.map_coordinates(data, [sy, sx], order=1, mode="nearest")
    dx = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2])
    dy = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1])
    vec = np.concatenate([dx.ravel(), dy.ravel()])
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        raise DegenerateDescriptorError("zero gradient energy in patch")
    return vec / norm


def describe_pca_sift(img, kp, basis, _smoothed=None):
    """Project the keypoint's normalized gradient patch onto the basis."""
    vec = extract_patch_vector(img, kp, _smoothed=_smoothed)
    out = basis.basis @ (vec - basis.mean)
    norm = np.linalg.norm(out)
    if norm < 1e-12:
        raise DegenerateDescriptorError("patch projects to the zero vector")
    return out / norm


def describe_pca_sift_all(img, keypoints, basis):
    """Batch PCA description sharing one blurred-image cache."""
    smoothed = _smoothed_cache(img)
    out = []
    kept = []
    for kp in keypoints:
        try:
            out.append(describe_pca_sift(img, kp, basis, _smoothed=smoothed))
            kept.append(kp)
        except (LumenstitchError, DegenerateDescriptorError):
            continue
    return kept, np.array(out) if out else np.zeros((0, basis.d))


# ---------------------------------------------------------------------------
# PCA basis


def train_pca_basis(patches, d=DEFAULT_PCA_DIM):
    """Top-d principal directions of a centered patch corpus.

    Requires at least 10*d patches; raises RankDeficientError when the
    corpus cannot support d directions. Row signs are fixed so the largest
    magnitude entry of each row is positive (determinism).
    """
    patches = np.asarray(patches, dtype=np.float64)
    n = patches.shape[0]
    if n < 10 * d:
        raise RankDeficientError(f"need at least {10 * d} patches, got {n}")
    mean = patches.mean(axis=0)
    centered = patches - mean
    cov = centered.T @ centered / (n - 1)
    dim = cov.shape[0]
    from scipy.linalg import eigh

    vals, vecs = eigh(cov, subset_by_index=(dim - d, dim - 1))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals[-1] <= 1e-12 * max(vals[0], 1e-30):
        raise RankDeficientError(f"corpus rank below requested dimension {d}")
    basis = vecs.T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaBasis(mean=mean, basis=basis, d=d)


def save_pca_basis(basis, path):
    """Write the sidecar: magic, u32 d, u32 patch_dim, then float64 LE
    mean followed by the row-major basis."""
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC)
        fh.write(struct.pack("<II", basis.d, basis.mean.size))
        fh.write(basis.mean.astype("<f8").tobytes())
        fh.write(basis.basis.astype("<f8").tobytes())


def load_pca_basis(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PCA_MAGIC:
            raise LumenstitchError(f"{path!r} is not a PCA basis sidecar")
        d, patch_dim = struct.unpack("<II", fh.read(8))
        mean = np.frombuffer(fh.read(8 * patch_dim), dtype="<f8").copy()
        basis = np.frombuffer(fh.read(8 * d * patch_dim), dtype="<f8").copy()
    return PcaBasis(mean=mean, basis=basis.reshape(d, patch_dim), d=d)


def harvest_patches(images, max_per_image=400, max_keypoints=MAX_KEYPOINTS):
    """Collect normalized gradient patches from a list of images."""
    out = []
    for img in images:
        kps = detect_keypoints(img, max_keypoints=max_keypoints)
        smoothed = _smoothed_cache(img)
        taken = 0
        for kp in kps:
            if taken >= max_per_image:
                break
            try:
                out.append(extract_patch_vector(img, kp, _smoothed=smoothed))
                taken += 1
            except (LumenstitchError, DegenerateDescriptorError):
                continue
    return np.array(out) if out else np.zeros((0, PATCH_DIM))


# ---------------------------------------------------------------------------
# Matching


def match_descriptors(set_a, set_b, ratio_threshold=DEFAULT_RATIO_THRESHOLD,
                      accept_singletons=False):
    """Mutual-best nearest-neighbour matches passing the ambiguity ratio.

    For every descriptor of `set_a` the nearest and second-nearest
    neighbours in `set_b` are found by Euclidean distance; a match is kept
    iff d1/d2 <= ratio_threshold and it is also the best match for its
    target. With fewer than two descriptors in `set_b` the ratio is
    undefined and everything is rejected unless `accept_singletons`.
    """
    set_a = np.asarray(set_a, dtype=np.float64)
    set_b = np.asarray(set_b, dtype=np.float64)
    if set_a.size == 0 or set_b.size == 0:
        raise LumenstitchError("cannot match empty descriptor sets")
    if set_b.shape[0] < 2:
        if not accept_singletons:
            warnings.warn("second-nearest neighbour undefined; no matches kept")
            return []
        d = np.linalg.norm(set_a - set_b[0], axis=1)
        i = int(np.argmin(d))
        return [Match(index_a=i, index_b=0, d1=float(d[i]), d2=float("inf"))]

    sq = (
        np.sum(set_a**2, axis=1)[:, None]
        + np.sum(set_b**2, axis=1)[None, :]
        - 2.0 * set_a @ set_b.T
    )
    np.maximum(sq, 0.0, out=sq)
    order = np.argpartition(sq, 1, axis=1)[:, :2]
    row = np.arange(sq.shape[0])
    d_pair = np.sqrt(np.take_along_axis(sq, order, axis=1))
    swap = d_pair[:, 0] > d_pair[:, 1]
    d_pair[swap] = d_pair[swap][:, ::-1]
    order[swap] = order[swap][:, ::-1]
    best_for_b = np.argmin(sq, axis=0)

    matches = []
    for i in row:
        j = int(order[i, 0])
        d1, d2 = float(d_pair[i, 0]), float(d_pair[i, 1])
        if d2 <= 0.0:
            continue  # duplicate targets: ambiguity is maximal
        if d1 / d2 > ratio_threshold:
            continue
        if best_for_b[j] != i:
            continue
        matches.append(Match(index_a=int(i), index_b=j, d1=d1, d2=d2))
    return matches


def keypoint_array(keypoints):
    """(N, 2) array of keypoint positions."""
    return np.array([[kp.x, kp.y] for kp in keypoints], dtype=np.float64)
