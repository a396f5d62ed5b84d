"""Normalized mutual information over B-spline Parzen joint histograms.

The joint histogram of a static image and a projectively resampled moving
image is accumulated with cubic B-spline windows on both intensity axes,
which makes the distribution - and therefore MI, joint entropy and NMI -
differentiable in the eight transform parameters. Entropies are in bits.

Derivative layout: parameter k indexes (a11, a12, a13, a21, a22, a23,
a31, a32) of the homography, matching `Homography.params`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateEntropyError, InsufficientOverlapError

LN2 = np.log(2.0)

# Minimum number of overlap samples for a scorable pair.
MIN_OVERLAP_SAMPLES = 256

DEFAULT_BINS = 64


@dataclass(frozen=True)
class HistogramConfig:
    """Sizing of the joint Parzen histogram.

    The scaling factors eps map [0, 1] intensities onto continuous bin
    coordinates and are pinned to 1/bins; only the cubic window is
    supported.
    """

    bins_a: int = DEFAULT_BINS
    bins_b: int = DEFAULT_BINS
    spline_order: int = 3

    def __post_init__(self):
        if self.bins_a < 8 or self.bins_b < 8:
            raise ValueError("need at least 8 bins per axis")
        if self.spline_order != 3:
            raise ValueError("only the cubic B-spline window is supported")

    @property
    def eps_a(self):
        return 1.0 / self.bins_a

    @property
    def eps_b(self):
        return 1.0 / self.bins_b


@dataclass(frozen=True)
class JointHistogram:
    """Normalized joint distribution, marginals, and parameter derivatives."""

    p: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray
    dp_dmu: np.ndarray = field(default=None, repr=False)
    sample_count: int = 0
    mass: float = 0.0  # unnormalized total, used to scale derivative passes


def joint_histogram(f_a, f_b, mu, cfg=None, mask_a=None, want_gradient=True,
                    backend=None):
    """Accumulate the Parzen joint histogram over the overlap of a pair.

    Parameters
    ----------
    f_a : Image
        Static image; its (masked) pixels drive the accumulation.
    f_b : Image
        Moving image, sampled bilinearly at mu(x, y).
    mu : Homography
        Transform from f_a pixel coordinates into f_b coordinates.
    cfg : HistogramConfig, optional
    mask_a : bool array, optional
        Restricts the eligible static pixels (e.g. warp validity).
    want_gradient : bool
        Also accumulate the 8 derivative planes dp/dmu.

    Raises
    ------
    InsufficientOverlapError
        If fewer than MIN_OVERLAP_SAMPLES static pixels land inside f_b.
    """
    cfg = cfg or HistogramConfig()
    if mask_a is None:
        mask_a = np.ones(f_a.shape, dtype=bool)
    h, dh, count = kernels.parzen_joint_hist(
        f_a.data, mask_a, f_b.data, mu.matrix, cfg.bins_a, cfg.bins_b,
        want_gradient, backend=backend,
    )
    if count < MIN_OVERLAP_SAMPLES:
        raise InsufficientOverlapError(
            f"only {count} overlap samples (need {MIN_OVERLAP_SAMPLES})"
        )
    total = h.sum()
    p = h / total
    dp = dh / total if want_gradient else None
    return JointHistogram(
        p=p, p_a=p.sum(axis=1), p_b=p.sum(axis=0), dp_dmu=dp,
        sample_count=count, mass=float(total),
    )


def _log2_safe(p):
    out = np.zeros_like(p)
    np.log2(p, out=out, where=p > 0.0)
    return out


def mutual_information(jh):
    """MI in bits: sum of p * log2(p / (p_a p_b)) over occupied cells."""
    p = jh.p
    denom = np.outer(jh.p_a, jh.p_b)
    ratio = np.ones_like(p)
    np.divide(p, denom, out=ratio, where=p > 0.0)
    return float(np.sum(p * _log2_safe(ratio)))


def joint_entropy(jh):
    """Joint entropy in bits, with the 0 log 0 -> 0 convention."""
    return float(-np.sum(jh.p * _log2_safe(jh.p)))


def nmi(jh):
    """Normalized mutual information: 1 + MI / E."""
    e = joint_entropy(jh)
    if e <= 1e-12:
        raise DegenerateEntropyError("joint entropy vanishes; pair unscorable")
    return 1.0 + mutual_information(jh) / e


def nmi_at(f_a, f_b, mu, cfg=None, mask_a=None):
    """NMI of a pair at a given transform (value only, no derivatives)."""
    return nmi(joint_histogram(f_a, f_b, mu, cfg, mask_a, want_gradient=False))


def _grad_terms(jh):
    """Gradients of MI and E (bits) from the histogram derivative planes."""
    p, dp = jh.p, jh.dp_dmu
    denom = np.outer(jh.p_a, jh.p_b)
    ratio = np.ones_like(p)
    np.divide(p, denom, out=ratio, where=p > 0.0)
    log_ratio = _log2_safe(ratio)
    log_p = _log2_safe(p)
    d_mi = np.einsum("kab,ab->k", dp, log_ratio)
    d_e = -np.einsum("kab,ab->k", dp, log_p)
    return d_mi, d_e


def nmi_gradient(f_a, f_b, mu, cfg=None, mask_a=None, jh=None):
    """Analytic gradient of NMI with respect to the 8 transform parameters.

    Differentiates 1 + MI/E fully through the quotient rule; the sample
    set is treated as fixed at mu, so only the moving-axis windows carry
    parameter dependence.
    """
    if jh is None:
        jh = joint_histogram(f_a, f_b, mu, cfg, mask_a, want_gradient=True)
    mi = mutual_information(jh)
    e = joint_entropy(jh)
    if e <= 1e-12:
        raise DegenerateEntropyError("joint entropy vanishes; pair unscorable")
    d_mi, d_e = _grad_terms(jh)
    return (d_mi * e - mi * d_e) / (e * e)


def _outer_blocks(jh):
    """First-derivative outer products sum dp_i dp_j / p and its marginal."""
    p, dp = jh.p, jh.dp_dmu
    inv_p = np.zeros_like(p)
    np.divide(1.0, p, out=inv_p, where=p > 0.0)
    joint_outer = np.einsum("iab,jab,ab->ij", dp, dp, inv_p)
    db = dp.sum(axis=1)  # d p_b / d mu, shape (8, bins_b)
    pb = jh.p_b
    inv_pb = np.zeros_like(pb)
    np.divide(1.0, pb, out=inv_pb, where=pb > 0.0)
    marg_outer = np.einsum("ib,jb,b->ij", db, db, inv_pb)
    return joint_outer, marg_outer


def nmi_hessian(f_a, f_b, mu, cfg=None, mask_a=None, jh=None, mode="exact"):
    """Hessian of NMI with respect to the 8 transform parameters.

    mode="exact" (default) assembles the full second derivative: the
    second-derivative planes of the histogram are contracted against the
    log weight planes in a dedicated kernel pass, then combined with the
    first-derivative outer products and the MI/E quotient rule. The sample
    set is treated as fixed at mu.

    mode="curvature" keeps only the products of first derivatives (the
    marginal-minus-joint outer-product form); that block is negative
    semidefinite by Cauchy-Schwarz, which makes it a safe ascent model far
    from the peak, but it badly underestimates curvature near sharp optima.

    The result is exactly symmetric.
    """
    cfg = cfg or HistogramConfig()
    if jh is None:
        jh = joint_histogram(f_a, f_b, mu, cfg, mask_a, want_gradient=True)
    p = jh.p
    mi = mutual_information(jh)
    e = joint_entropy(jh)
    if e <= 1e-12:
        raise DegenerateEntropyError("joint entropy vanishes; pair unscorable")
    d_mi, d_e = _grad_terms(jh)
    joint_outer, marg_outer = _outer_blocks(jh)

    if mode == "curvature":
        h_mi = (marg_outer - joint_outer) / LN2
        h_e = -joint_outer / LN2
    elif mode == "exact":
        log_p = _log2_safe(p)
        log_pb = _log2_safe(jh.p_b)
        w_mi = np.where(p > 0.0, log_p - log_pb[None, :], 0.0)
        if mask_a is None:
            mask_a = np.ones(f_a.shape, dtype=bool)
        s_mi, s_e, _ = kernels.parzen_hess_contract(
            f_a.data, mask_a, f_b.data, mu.matrix, cfg.bins_a, cfg.bins_b,
            w_mi, log_p,
        )
        h_mi = s_mi / jh.mass + (joint_outer - marg_outer) / LN2
        h_e = -s_e / jh.mass - joint_outer / LN2
    else:
        raise ValueError(f"unknown Hessian mode {mode!r}")

    cross = np.outer(d_mi, d_e)
    h = (
        h_mi / e
        - (cross + cross.T) / (e * e)
        - mi * h_e / (e * e)
        + 2.0 * mi * np.outer(d_e, d_e) / (e * e * e)
    )
    return 0.5 * (h + h.T)


def nmi_state(f_a, f_b, mu, cfg=None, mask_a=None):
    """Value, gradient and Hessian of NMI in one histogram accumulation."""
    jh = joint_histogram(f_a, f_b, mu, cfg, mask_a, want_gradient=True)
    value = nmi(jh)
    grad = nmi_gradient(f_a, f_b, mu, cfg, mask_a, jh=jh)
    hess = nmi_hessian(f_a, f_b, mu, cfg, mask_a, jh=jh)
    return value, grad, hess, jh
