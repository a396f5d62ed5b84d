"""Robust homography estimation over candidate matches.

Four interchangeable outlier filters: coarse similarity-pose voting (HT),
consensus counting (RANSAC), truncated-quadratic scoring (MSAC), and the
likelihood of a Gaussian-inlier/uniform-outlier mixture with the mixing
weight fitted by EM (MLESAC). All of them finish with a least-squares DLT
refit on the selected inliers, and classify inliers by the symmetric
transfer error (RMS over both transfer directions) under the refitted
model.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateConfigurationError, FeatureInitError,
                     NoModelError, SingularTransformError)
from .features import (DEFAULT_RATIO_THRESHOLD, describe_pca_sift_all,
                       detect_keypoints, keypoint_array, match_descriptors)
from .imgcore import Homography, apply_points, invert

DEFAULT_INLIER_THRESHOLD = 2.0   # px, symmetric transfer error
DEFAULT_MLESAC_SIGMA = 1.0       # px
DEFAULT_EM_ITERS = 5
DEFAULT_GAMMA0 = 0.5
DEFAULT_HYPOTHESES = 500
MIN_MATCHES = 8
COLLINEARITY_AREA_FRACTION = 1e-6

HT_TRANSLATION_DIVISOR = 8       # bin size = image extent / 8
HT_ROTATION_BIN = np.deg2rad(15.0)
HT_LOG_SCALE_BIN = 0.5 * np.log(2.0)  # scale bins at factors of sqrt(2)
HT_MAX_PAIR_SAMPLES = 2000


class OutlierMethod:
    """Enumeration of the supported outlier-removal algorithms."""

    HT = "ht"
    RANSAC = "ransac"
    MSAC = "msac"
    MLESAC = "mlesac"
    ALL = (HT, RANSAC, MSAC, MLESAC)


@dataclass(frozen=True)
class RobustConfig:
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD
    mlesac_sigma: float = DEFAULT_MLESAC_SIGMA
    em_iters: int = DEFAULT_EM_ITERS
    gamma0: float = DEFAULT_GAMMA0
    n_hypotheses: int = DEFAULT_HYPOTHESES
    seed: int = 0
    extent: tuple = (256, 256)  # image extent, sets the outlier density


@dataclass(frozen=True)
class RobustResult:
    inliers: tuple            # subset of the input matches
    model: Homography
    score: float
    iterations_used: int
    inlier_indices: tuple = ()


def correct_rate(c, f, a):
    """Filter quality in percent: ((c - f) / a) * 100.

    c, f: remaining correct/false matches; a: all correct matches.
    """
    if a <= 0:
        raise ValueError("total correct-match count must be positive")
    if c < 0 or f < 0:
        raise ValueError("counts must be non-negative")
    return (c - f) / a * 100.0


def estimate_homography_dlt(points_a, points_b):
    """Least-squares homography from >= 4 correspondences.

    Both point sets are Hartley-normalized (centroid at the origin, mean
    distance sqrt(2)) before building the 2N x 9 system; the smallest
    right singular vector gives the transform, denormalized and pinned to
    a33 = 1.
    """
    pa = np.asarray(points_a, dtype=np.float64)
    pb = np.asarray(points_b, dtype=np.float64)
    n = pa.shape[0]
    if n < 4 or pb.shape[0] != n:
        raise DegenerateConfigurationError("need at least 4 correspondences")

    def normalizer(pts):
        c = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)),
                                   1e-12)
        t = np.array([[scale, 0.0, -scale * c[0]],
                      [0.0, scale, -scale * c[1]],
                      [0.0, 0.0, 1.0]])
        return (pts - c) * scale, t

    na, ta = normalizer(pa)
    nb, tb = normalizer(pb)
    a = np.zeros((2 * n, 9))
    x, y = na[:, 0], na[:, 1]
    u, v = nb[:, 0], nb[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, s, vt = np.linalg.svd(a)
    if s[-2] <= 1e-10 * s[0]:
        raise DegenerateConfigurationError("rank-deficient correspondence set")
    hn = vt[-1].reshape(3, 3)
    try:
        h = np.linalg.inv(tb) @ hn @ ta
        return Homography(h)
    except (np.linalg.LinAlgError, SingularTransformError) as exc:
        raise DegenerateConfigurationError(str(exc)) from exc


def symmetric_transfer_error(h, points_a, points_b):
    """Per-pair RMS of the forward and inverse transfer residuals."""
    fwd = apply_points(h, points_a) - points_b
    bwd = apply_points(invert(h), points_b) - points_a
    return np.sqrt(0.5 * (np.sum(fwd**2, axis=1) + np.sum(bwd**2, axis=1)))


def _hypotheses(points_a, points_b, cfg, rng):
    """Seeded minimal-sample hypotheses with batched residuals.

    Returns (models (H, 3, 3), errors (H, n)); failed samples (collinear,
    singular) are dropped. Coordinates are scaled by the extent diagonal
    before the 8x8 minimal solves for conditioning.
    """
    n = points_a.shape[0]
    diag = float(np.hypot(*cfg.extent))
    m = cfg.n_hypotheses
    sel = np.empty((m, 4), dtype=np.intp)
    for i in range(m):
        sel[i] = rng.choice(n, size=4, replace=False)

    qa = points_a[sel] / diag  # (m, 4, 2)
    qb = points_b[sel] / diag

    # collinearity: all four triangles of the sample need some area
    limit = COLLINEARITY_AREA_FRACTION
    ok = np.ones(m, dtype=bool)
    for skip in range(4):
        tri = qa[:, [i for i in range(4) if i != skip], :]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        ok &= area >= limit

    # minimal DLT with a33 pinned to 1: 8x8 solve per sample
    a = np.zeros((m, 8, 8))
    b = np.empty((m, 8))
    x, y = qa[..., 0], qa[..., 1]
    u, v = qb[..., 0], qb[..., 1]
    a[:, 0::2, 0] = x
    a[:, 0::2, 1] = y
    a[:, 0::2, 2] = 1.0
    a[:, 0::2, 6] = -u * x
    a[:, 0::2, 7] = -u * y
    a[:, 1::2, 3] = x
    a[:, 1::2, 4] = y
    a[:, 1::2, 5] = 1.0
    a[:, 1::2, 6] = -v * x
    a[:, 1::2, 7] = -v * y
    b[:, 0::2] = u
    b[:, 1::2] = v
    dets = np.abs(np.linalg.det(a))
    ok &= dets > 1e-16
    a[~ok] = np.eye(8)
    h8 = np.linalg.solve(a, b[..., None])[..., 0]
    models = np.concatenate([h8, np.ones((m, 1))], axis=1).reshape(m, 3, 3)
    ok &= np.abs(np.linalg.det(models)) > 1e-12
    models = models[ok]
    if models.shape[0] == 0:
        return models, np.empty((0, n))
    # back to pixel coordinates: H_px = S^-1 H S with S = diag(1/D, 1/D, 1)
    s = np.diag([1.0 / diag, 1.0 / diag, 1.0])
    s_inv = np.diag([diag, diag, 1.0])
    models = np.einsum("ij,mjk,kl->mil", s_inv, models, s)
    models /= models[:, 2:3, 2:3]

    err = _batched_symmetric_error(models, points_a, points_b)
    good = np.all(np.isfinite(err), axis=1)
    return models[good], err[good]


def _batched_symmetric_error(models, points_a, points_b):
    """Symmetric transfer error (RMS of both directions) per model/match."""
    n = points_a.shape[0]
    pa_h = np.column_stack([points_a, np.ones(n)])
    pb_h = np.column_stack([points_b, np.ones(n)])
    fwd = np.einsum("mij,nj->mni", models, pa_h)
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd = fwd[..., :2] / fwd[..., 2:3]
        inv = np.linalg.inv(models)
        bwd = np.einsum("mij,nj->mni", inv, pb_h)
        bwd = bwd[..., :2] / bwd[..., 2:3]
        d2 = 0.5 * (np.sum((fwd - points_b) ** 2, axis=2)
                    + np.sum((bwd - points_a) ** 2, axis=2))
    return np.sqrt(d2)


def _mlesac_nll(err, cfg):
    """Mixture negative log-likelihood per hypothesis, EM-fitted gamma.

    err has shape (H, n); the Gaussian inlier component uses the 2D
    residual density, the outlier component is uniform with density
    1/diag^2 over the image extent.
    """
    sigma2 = cfg.mlesac_sigma**2
    diag2 = cfg.extent[0] ** 2 + cfg.extent[1] ** 2
    p_in = np.exp(-0.5 * err**2 / sigma2) / (2.0 * np.pi * sigma2)
    p_out = 1.0 / diag2
    gamma = np.full(err.shape[0], cfg.gamma0)
    for _ in range(cfg.em_iters):
        num = gamma[:, None] * p_in
        z = num / (num + (1.0 - gamma)[:, None] * p_out)
        gamma = np.clip(z.mean(axis=1), 1e-6, 1.0 - 1e-6)
    mix = gamma[:, None] * p_in + (1.0 - gamma)[:, None] * p_out
    return -np.sum(np.log(mix), axis=1)


def _ht_vote(points_a, points_b, cfg, rng):
    """Similarity-pose voting over sampled match pairs.

    Each sampled pair of matches determines a 4-DOF similarity
    (scale, rotation, translation); votes land in coarse bins and the
    densest bin nominates its contributing matches.
    """
    n = points_a.shape[0]
    pairs = []
    max_pairs = min(HT_MAX_PAIR_SAMPLES, n * (n - 1) // 2)
    seen = set()
    attempts = 0
    while len(pairs) < max_pairs and attempts < 10 * max_pairs:
        attempts += 1
        i, j = rng.choice(n, size=2, replace=False)
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        pairs.append(key)
    tx_bin = cfg.extent[0] / HT_TRANSLATION_DIVISOR
    ty_bin = cfg.extent[1] / HT_TRANSLATION_DIVISOR
    votes = {}
    for i, j in pairs:
        da = points_a[j] - points_a[i]
        db = points_b[j] - points_b[i]
        la, lb = np.linalg.norm(da), np.linalg.norm(db)
        if la < 1e-9 or lb < 1e-9:
            continue
        scale = lb / la
        rot = np.arctan2(db[1], db[0]) - np.arctan2(da[1], da[0])
        ct, st = scale * np.cos(rot), scale * np.sin(rot)
        t = points_b[i] - np.array([ct * points_a[i][0] - st * points_a[i][1],
                                    st * points_a[i][0] + ct * points_a[i][1]])
        key = (
            int(np.floor(np.log(scale) / HT_LOG_SCALE_BIN)),
            int(np.floor((rot % (2 * np.pi)) / HT_ROTATION_BIN)),
            int(np.floor(t[0] / tx_bin)),
            int(np.floor(t[1] / ty_bin)),
        )
        votes.setdefault(key, set()).update((i, j))
    if not votes:
        return np.arange(n)
    best = max(sorted(votes), key=lambda k: len(votes[k]))
    members = np.array(sorted(votes[best]), dtype=np.intp)
    return members if members.size >= 4 else np.arange(n)


def filter_outliers(matches, points_a, points_b, method=OutlierMethod.MLESAC,
                    config=None):
    """Select matches consistent with one homography.

    Hypotheses are drawn with a seeded generator shared by all scoring
    rules; the best-scoring model (first winner on ties) selects a
    candidate inlier set which is refit by DLT, and the final inliers are
    those within the threshold of the refit. Fewer than MIN_MATCHES inputs
    short-circuits: everything is kept (with a warning) around a plain
    DLT fit.
    """
    cfg = config or RobustConfig()
    matches = list(matches)
    points_a = np.asarray(points_a, dtype=np.float64)
    points_b = np.asarray(points_b, dtype=np.float64)
    n = len(matches)
    if n < 4:
        raise NoModelError(f"cannot fit a homography to {n} matches")
    if n < MIN_MATCHES:
        warnings.warn(f"only {n} matches; keeping all as inliers")
        model = estimate_homography_dlt(points_a, points_b)
        return RobustResult(inliers=tuple(matches), model=model, score=0.0,
                            iterations_used=0,
                            inlier_indices=tuple(range(n)))

    rng = np.random.default_rng(cfg.seed)
    t = cfg.inlier_threshold

    if method == OutlierMethod.HT:
        member_idx = _ht_vote(points_a, points_b, cfg, rng)
        candidate = member_idx
        score = float(len(member_idx))
        iterations = 1
    else:
        models, errs = _hypotheses(points_a, points_b, cfg, rng)
        if models.shape[0] == 0:
            raise NoModelError("no valid hypotheses could be drawn")
        if method == OutlierMethod.RANSAC:
            scores = -np.sum(errs <= t, axis=1).astype(np.float64)
        elif method == OutlierMethod.MSAC:
            scores = np.sum(np.minimum(errs**2, t**2), axis=1)
        elif method == OutlierMethod.MLESAC:
            scores = _mlesac_nll(errs, cfg)
        else:
            raise ValueError(f"unknown outlier method {method!r}")
        pick = int(np.argmin(scores))  # ties: lowest hypothesis index
        candidate = np.nonzero(errs[pick] <= t)[0]
        score = float(scores[pick])
        iterations = models.shape[0]
        if candidate.size < 4:
            raise NoModelError("no model with at least 4 inliers")

    try:
        model = estimate_homography_dlt(points_a[candidate],
                                        points_b[candidate])
    except DegenerateConfigurationError as exc:
        raise NoModelError(str(exc)) from exc
    final_err = symmetric_transfer_error(model, points_a, points_b)
    final_idx = np.nonzero(final_err <= t)[0]
    if final_idx.size < 4:
        raise NoModelError("no model with at least 4 inliers after refit")
    model = estimate_homography_dlt(points_a[final_idx], points_b[final_idx])
    final_err = symmetric_transfer_error(model, points_a, points_b)
    final_idx = np.nonzero(final_err <= t)[0]
    if final_idx.size < 4:
        raise NoModelError("inlier set collapsed during refit")
    return RobustResult(
        inliers=tuple(matches[i] for i in final_idx),
        model=model,
        score=score,
        iterations_used=iterations,
        inlier_indices=tuple(int(i) for i in final_idx),
    )


def initial_transform(img_a, img_b, basis, config=None,
                      ratio_threshold=DEFAULT_RATIO_THRESHOLD,
                      method=OutlierMethod.MLESAC):
    """Feature-based preregistration: detect, describe, match, filter.

    Returns (Homography mapping img_a coordinates into img_b, RobustResult).
    Raises FeatureInitError when fewer than MIN_MATCHES survive the ratio
    test (callers may fall back to the identity seed).
    """
    cfg = config or RobustConfig(extent=(img_a.width, img_a.height))
    kps_a = detect_keypoints(img_a)
    kps_b = detect_keypoints(img_b)
    if not kps_a or not kps_b:
        raise FeatureInitError("feature-init-failed: no keypoints detected")
    kept_a, desc_a = describe_pca_sift_all(img_a, kps_a, basis)
    kept_b, desc_b = describe_pca_sift_all(img_b, kps_b, basis)
    if desc_a.shape[0] == 0 or desc_b.shape[0] < 2:
        raise FeatureInitError("feature-init-failed: no descriptors")
    matches = match_descriptors(desc_a, desc_b, ratio_threshold)
    if len(matches) < MIN_MATCHES:
        raise FeatureInitError(
            f"feature-init-failed: only {len(matches)} matches retained"
        )
    pa = keypoint_array(kept_a)[[m.index_a for m in matches]]
    pb = keypoint_array(kept_b)[[m.index_b for m in matches]]
    try:
        result = filter_outliers(matches, pa, pb, method=method, config=cfg)
    except NoModelError as exc:
        raise FeatureInitError(f"feature-init-failed: {exc}") from exc
    return result.model, result
