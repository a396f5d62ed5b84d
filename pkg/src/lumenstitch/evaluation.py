"""Synthetic ground-truth pairs, MED/CR scoring, and the benchmark harness.

Benchmark pairs are produced by cropping a source image twice: the first
crop directly, the second from a projectively manipulated copy (rotation,
scale, shear, shift, projection), with the exact crop-frame homography
relating the two retained as ground truth. Accuracy is the mean Euclidean
distance (MED) between homologous pixel positions under the estimated and
true transforms; outlier filters are scored by the correct rate
CR = ((c - f) / a) * 100 against the planted transform.
"""

import csv
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import FeatureInitError, InfeasibleSynthError, NoModelError
from .features import (describe_pca_sift_all, describe_sift_all,
                       detect_keypoints, harvest_patches, keypoint_array,
                       match_descriptors, train_pca_basis)
from .imgcore import Homography, Image, apply_points, compose, invert, warp
from .optimizer import multiscale_register
from .quality import enhance
from .robust import (OutlierMethod, RobustConfig, filter_outliers,
                     initial_transform, symmetric_transfer_error)

MED_GRID_STEP = 4
CR_CORRECT_TOLERANCE = 2.0  # px against the planted transform

DEFAULT_CROP = 256
DEFAULT_PAIRS = 200

REGISTRATION_METHODS = ("feature", "nmi", "hybrid")


@dataclass(frozen=True)
class SynthParams:
    """Manipulation ranges for synthetic pair generation (all half-widths
    except the explicit intervals); distances in pixels, angles in rad."""

    rotation: float = np.deg2rad(15.0)
    scale: tuple = (0.9, 1.1)
    shift: float = 20.0
    shear: float = 0.05
    projective: float = 1e-4
    overlap: tuple = (0.5, 0.9)
    seed: int = 0
    crop: int = DEFAULT_CROP
    noise_sigma: float = 0.0
    gamma_jitter: float = 0.0

    def __post_init__(self):
        if not (0.2 < self.overlap[0] <= self.overlap[1] < 0.95):
            raise ValueError("overlap ratios must lie inside (0.2, 0.95)")
        for name in ("rotation", "shift", "shear", "projective"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} range must be finite")


@dataclass(frozen=True)
class BenchmarkRow:
    """One aggregated line of the benchmark report."""

    method: str
    med_mean: float = float("nan")
    med_sd: float = float("nan")
    time_mean: float = float("nan")
    time_sd: float = float("nan")
    cr: float = float("nan")
    pairs_ok: int = 0
    pairs_failed: int = 0

    def __post_init__(self):
        if np.isfinite(self.med_sd) and self.med_sd < 0:
            raise ValueError("standard deviation must be non-negative")


def med(h_est, h_gt, extent, step=MED_GRID_STEP):
    """Mean Euclidean distance between homologous grid points."""
    xs, ys = np.meshgrid(
        np.arange(0, extent[0], step, dtype=np.float64),
        np.arange(0, extent[1], step, dtype=np.float64),
    )
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    d = apply_points(h_est, pts) - apply_points(h_gt, pts)
    return float(np.linalg.norm(d, axis=1).mean())


def synthetic_corpus(n, size=512, seed=0, fine_detail=0.05):
    """Low-texture source images: smooth blobby structure in a narrow
    intensity band with faint fine detail, mimicking endoscopic frames."""
    out = []
    for i in range(n):
        rng = np.random.default_rng(seed + 1000 * i)
        blobs = gaussian_filter(rng.normal(size=(size, size)), 16.0)
        mid = gaussian_filter(rng.normal(size=(size, size)), 5.0)
        fine = gaussian_filter(rng.normal(size=(size, size)), 1.6)
        x = (blobs / blobs.std() + 0.55 * mid / mid.std()
             + fine_detail * fine / fine.std())
        x = 0.5 + 0.05 * x / x.std()
        yy, xx = np.mgrid[0:size, 0:size]
        r2 = ((xx - size / 2) ** 2 + (yy - size / 2) ** 2) / (size / 2) ** 2
        x -= 0.06 * r2  # radial falloff
        out.append(Image(np.clip(x, 0.0, 1.0)))
    return out


def _draw_homography(params, rng, center):
    rot = rng.uniform(-params.rotation, params.rotation)
    s = rng.uniform(*params.scale)
    shear = rng.uniform(-params.shear, params.shear)
    proj = rng.uniform(-params.projective, params.projective, size=2)
    c, sn = np.cos(rot), np.sin(rot)
    lin = np.array([[c, -sn], [sn, c]]) @ np.array([[s, s * shear], [0.0, s]])
    m = np.eye(3)
    m[:2, :2] = lin
    m[2, :2] = proj
    t1 = Homography.translation(-center[0], -center[1])
    t2 = Homography.translation(center[0], center[1])
    return compose(t2, compose(Homography(m), t1))


def _measured_overlap(h_gt, crop, step=8):
    """Fraction of the first crop whose image lands inside the second."""
    xs, ys = np.meshgrid(np.arange(0, crop, step, dtype=np.float64),
                         np.arange(0, crop, step, dtype=np.float64))
    pts = apply_points(h_gt, np.column_stack([xs.ravel(), ys.ravel()]))
    inside = ((pts[:, 0] >= 0) & (pts[:, 0] <= crop - 1)
              & (pts[:, 1] >= 0) & (pts[:, 1] <= crop - 1))
    return float(inside.mean())


def synth_pair(src, params, pair_seed=None, displacement=None):
    """Crop-and-manipulate a source image into a registered pair.

    The first crop is taken directly; the second is cut from the warped
    source at an offset chosen so the measured overlap approaches a drawn
    target (the offset magnitude is capped by `params.shift`, and can be
    forced with `displacement` for controlled geometry). Returns
    (img_a, img_b, H_gt) with H_gt mapping img_a pixel coordinates into
    img_b coordinates exactly; deterministic for a given seed.
    """
    seed = params.seed if pair_seed is None else pair_seed
    rng = np.random.default_rng(seed)
    c = params.crop
    if min(src.width, src.height) < c + 8:
        raise InfeasibleSynthError("source too small for the requested crop")
    corners = np.array([[0, 0], [c - 1, 0], [0, c - 1], [c - 1, c - 1]],
                       dtype=np.float64)
    for _ in range(64):
        margin_x = src.width - c
        margin_y = src.height - c
        o_a = np.array([rng.integers(0, margin_x + 1),
                        rng.integers(0, margin_y + 1)], dtype=np.float64)
        center = o_a + (c - 1) / 2.0
        h_src = _draw_homography(params, rng, center)

        def gt_for(offset):
            o_b = np.rint(o_a + offset)
            h = compose(Homography.translation(-o_b[0], -o_b[1]),
                        compose(h_src, Homography.translation(o_a[0], o_a[1])))
            return o_b, h

        if displacement is not None:
            o_b, h_gt = gt_for(np.asarray(displacement, dtype=np.float64))
        else:
            target = rng.uniform(*params.overlap)
            theta = rng.uniform(0.0, 2.0 * np.pi)
            direction = np.array([np.cos(theta), np.sin(theta)])
            lo, hi = 0.0, 1.5 * c
            if _measured_overlap(gt_for(np.zeros(2))[1], c) <= target:
                hi = 0.0  # warp alone already reaches the target
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if _measured_overlap(gt_for(mid * direction)[1], c) > target:
                    lo = mid
                else:
                    hi = mid
            mag = min(0.5 * (lo + hi), params.shift)
            o_b, h_gt = gt_for(mag * direction)

        window_b = compose(Homography.translation(-o_b[0], -o_b[1]), h_src)
        pre = apply_points(invert(window_b), corners)
        if (pre.min() < 0 or pre[:, 0].max() > src.width - 1
                or pre[:, 1].max() > src.height - 1):
            continue
        img_a = Image(src.data[int(o_a[1]):int(o_a[1]) + c,
                               int(o_a[0]):int(o_a[0]) + c])
        img_b, _ = warp(src, window_b, extent=(c, c))
        if params.gamma_jitter > 0:
            gamma = np.exp(rng.uniform(-params.gamma_jitter,
                                       params.gamma_jitter))
            img_b = Image(np.clip(img_b.data**gamma, 0.0, 1.0))
        if params.noise_sigma > 0:
            img_b = Image(np.clip(
                img_b.data + rng.normal(0, params.noise_sigma, img_b.shape),
                0.0, 1.0,
            ))
        return img_a, img_b, h_gt
    raise InfeasibleSynthError("no feasible crop found for the drawn warp")


def default_benchmark_basis(seed=0, n_textures=8, max_per_image=400, d=36):
    """PCA basis trained on patches harvested from procedural textures.

    Harvesting happens on enhanced frames, matching the descriptors the
    pipeline later extracts.
    """
    corpus = synthetic_corpus(n_textures, size=384, seed=seed + 77)
    patches = harvest_patches([enhance(img) for img in corpus],
                              max_per_image=max_per_image)
    return train_pca_basis(patches, d=d)


def _cr_for_matches(matches, pa, pb, kept_idx, h_gt):
    """Correct rate of a retained subset against the planted transform."""
    err = symmetric_transfer_error(h_gt, pa, pb)
    correct = err <= CR_CORRECT_TOLERANCE
    a = int(np.sum(correct))
    if a == 0:
        return None
    kept = np.zeros(len(matches), dtype=bool)
    kept[list(kept_idx)] = True
    c = int(np.sum(kept & correct))
    f = int(np.sum(kept & ~correct))
    return (c - f) / a * 100.0


def evaluate_pair(src, params, pair_seed, basis, methods,
                  cr_combos=False, robust_config=None, enhanced=True):
    """Run the configured methods on one synthetic pair.

    Both crops are enhanced first (as the pipeline does) unless
    `enhanced=False`. Returns {"med": {method: (value, seconds)},
    "cr": {(detector, method): value}, "failed": {method: reason}}.
    """
    img_a, img_b, h_gt = synth_pair(src, params, pair_seed)
    if enhanced:
        img_a, img_b = enhance(img_a), enhance(img_b)
    extent = (img_a.width, img_a.height)
    rcfg = robust_config or RobustConfig(extent=extent, seed=pair_seed)
    out = {"med": {}, "cr": {}, "failed": {}}

    feature_mu = None
    feature_time = 0.0
    need_features = bool({"feature", "hybrid"} & set(methods)) or cr_combos
    if need_features:
        t0 = time.perf_counter()
        try:
            feature_mu, _ = initial_transform(img_a, img_b, basis, rcfg)
        except FeatureInitError as exc:
            out["failed"]["feature"] = str(exc)
        feature_time = time.perf_counter() - t0

    if "feature" in methods and feature_mu is not None:
        out["med"]["feature"] = (med(feature_mu, h_gt, extent), feature_time)

    if "nmi" in methods:
        t0 = time.perf_counter()
        mu, report = multiscale_register(img_a, img_b, Homography.identity())
        dt = time.perf_counter() - t0
        if report["failed"]:
            out["failed"]["nmi"] = "unscorable"
        else:
            out["med"]["nmi"] = (med(mu, h_gt, extent), dt)

    if "hybrid" in methods:
        t0 = time.perf_counter()
        seed_mu = feature_mu or Homography.identity()
        mu, report = multiscale_register(img_a, img_b, seed_mu)
        dt = time.perf_counter() - t0 + feature_time
        if report["failed"]:
            out["failed"]["hybrid"] = "unscorable"
        else:
            out["med"]["hybrid"] = (med(mu, h_gt, extent), dt)

    if cr_combos:
        kps_a = detect_keypoints(img_a)
        kps_b = detect_keypoints(img_b)
        describers = {
            "sift": describe_sift_all,
            "pca-sift": lambda im, kp: describe_pca_sift_all(im, kp, basis),
        }
        for det, fn in describers.items():
            kept_a, da = fn(img_a, kps_a)
            kept_b, db = fn(img_b, kps_b)
            if da.shape[0] == 0 or db.shape[0] < 2:
                continue
            matches = match_descriptors(da, db)
            if len(matches) < 4:
                continue
            pa = keypoint_array(kept_a)[[m.index_a for m in matches]]
            pb = keypoint_array(kept_b)[[m.index_b for m in matches]]
            for method in OutlierMethod.ALL:
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        res = filter_outliers(matches, pa, pb, method, rcfg)
                except NoModelError:
                    continue
                cr = _cr_for_matches(matches, pa, pb, res.inlier_indices,
                                     h_gt)
                if cr is not None:
                    out["cr"][(det, method)] = cr
    return out


def benchmark(corpus, n_pairs=DEFAULT_PAIRS, methods=REGISTRATION_METHODS,
              params=None, basis=None, cr_combos=False, seed=0,
              progress=None):
    """Aggregate MED/time/CR rows over a batch of synthetic pairs.

    Per-pair failures are counted and excluded from the means. Rows for
    the registration methods come first, then (detector x filter) CR rows
    when requested.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    params = params or SynthParams(seed=seed)
    if basis is None:
        basis = default_benchmark_basis(seed=seed)
    med_acc = {m: [] for m in methods}
    time_acc = {m: [] for m in methods}
    fail_acc = {m: 0 for m in methods}
    cr_acc = {}
    for i in range(n_pairs):
        src = corpus[i % len(corpus)]
        res = evaluate_pair(src, params, seed + 31 * i + 1, basis, methods,
                            cr_combos=cr_combos)
        for m in methods:
            if m in res["med"]:
                v, dt = res["med"][m]
                med_acc[m].append(v)
                time_acc[m].append(dt)
            else:
                fail_acc[m] += 1
        for key, v in res["cr"].items():
            cr_acc.setdefault(key, []).append(v)
        if progress is not None:
            progress(i + 1, n_pairs)

    rows = []
    for m in methods:
        vals = np.array(med_acc[m])
        ts = np.array(time_acc[m])
        rows.append(BenchmarkRow(
            method=m,
            med_mean=float(vals.mean()) if vals.size else float("nan"),
            med_sd=float(vals.std()) if vals.size else float("nan"),
            time_mean=float(ts.mean()) if ts.size else float("nan"),
            time_sd=float(ts.std()) if ts.size else float("nan"),
            pairs_ok=int(vals.size),
            pairs_failed=fail_acc[m],
        ))
    for (det, method) in sorted(cr_acc):
        vals = np.array(cr_acc[(det, method)])
        rows.append(BenchmarkRow(
            method=f"cr:{det}+{method}",
            cr=float(vals.mean()),
            pairs_ok=int(vals.size),
            pairs_failed=n_pairs - int(vals.size),
        ))
    return rows


def write_benchmark_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "med_mean", "med_sd", "time_mean",
                         "time_sd", "cr", "pairs_ok", "pairs_failed"])
        for r in rows:
            writer.writerow([r.method, r.med_mean, r.med_sd, r.time_mean,
                             r.time_sd, r.cr, r.pairs_ok, r.pairs_failed])
