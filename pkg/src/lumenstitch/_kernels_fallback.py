"""NumPy implementation of the Parzen histogram accumulation kernel.

This is the import-time fallback for the compiled extension and the
reference the extension is tested against. Per masked pixel (x, y) of the
static image it maps (u, v) = T(x, y), samples the moving image bilinearly,
and spreads the (static, moving) intensity pair over a 4x4 patch of cubic
B-spline window weights. With `want_grad` it also accumulates the eight
derivative planes of the histogram with respect to the transform
parameters (a11, a12, a13, a21, a22, a23, a31, a32), differentiating the
moving-axis window through the bilinear interpolant and the projective map.
"""

import numpy as np

from .bspline import bspline, bspline_derivative


def _bspline_second(x):
    # d2/dx2 b3(x) = b1(x+1) - 2 b1(x) + b1(x-1)
    return bspline(1, x + 1.0) - 2.0 * bspline(1, x) + bspline(1, x - 1.0)


def parzen_joint_hist(fa, mask, fb, hmat, bins_a, bins_b, want_grad):
    """Accumulate the joint Parzen histogram of (fa, fb o T).

    Parameters
    ----------
    fa : (Ha, Wa) float64 array, static intensities in [0, 1].
    mask : (Ha, Wa) bool array, pixels of `fa` eligible for accumulation.
    fb : (Hb, Wb) float64 array, moving intensities in [0, 1].
    hmat : (3, 3) float64 array, maps static pixel coords into moving coords.
    bins_a, bins_b : histogram size per axis.
    want_grad : also accumulate d h / d mu_k for the 8 free parameters.

    Returns
    -------
    h : (bins_a, bins_b) array. Total mass equals the sample count.
    dh : (8, bins_a, bins_b) array or None.
    count : number of accumulated samples.
    """
    ha, wa = fa.shape
    hb, wb = fb.shape
    ys, xs = np.nonzero(mask)
    x = xs.astype(np.float64)
    y = ys.astype(np.float64)

    w = hmat[2, 0] * x + hmat[2, 1] * y + hmat[2, 2]
    ok = np.abs(w) > 1e-12
    w = np.where(ok, w, 1.0)
    u = (hmat[0, 0] * x + hmat[0, 1] * y + hmat[0, 2]) / w
    v = (hmat[1, 0] * x + hmat[1, 1] * y + hmat[1, 2]) / w
    ok &= (u >= 0.0) & (u <= wb - 1.0) & (v >= 0.0) & (v <= hb - 1.0)

    x, y, w, u, v = x[ok], y[ok], w[ok], u[ok], v[ok]
    aval = fa[ys[ok], xs[ok]]
    count = int(x.size)
    h = np.zeros((bins_a, bins_b))
    dh = np.zeros((8, bins_a, bins_b)) if want_grad else None
    if count == 0:
        return h, dh, count

    x0 = np.minimum(u.astype(np.intp), wb - 2)
    y0 = np.minimum(v.astype(np.intp), hb - 2)
    fx = u - x0
    fy = v - y0
    f00 = fb[y0, x0]
    f01 = fb[y0, x0 + 1]
    f10 = fb[y0 + 1, x0]
    f11 = fb[y0 + 1, x0 + 1]
    top = f00 + fx * (f01 - f00)
    bot = f10 + fx * (f11 - f10)
    bval = top + fy * (bot - top)
    fu = (1.0 - fy) * (f01 - f00) + fy * (f11 - f10)
    fv = (1.0 - fx) * (f10 - f00) + fx * (f11 - f01)

    ca = aval * bins_a
    cb = bval * bins_b
    ia = np.floor(ca).astype(np.intp)
    ib = np.floor(cb).astype(np.intp)

    if want_grad:
        iw = 1.0 / w
        bu = fu * bins_b
        bv = fv * bins_b
        xw = x * iw
        yw = y * iw
        proj = -(bu * u + bv * v)
        g = np.stack(
            [bu * xw, bu * yw, bu * iw,
             bv * xw, bv * yw, bv * iw,
             proj * xw, proj * yw]
        )

    nb = bins_a * bins_b
    size = nb
    for i in range(4):
        ka = np.clip(ia - 1 + i, 0, bins_a - 1)
        wa_i = bspline(3, ca - (ia - 1 + i))
        for j in range(4):
            kb = np.clip(ib - 1 + j, 0, bins_b - 1)
            flat = ka * bins_b + kb
            off = cb - (ib - 1 + j)
            wb_j = bspline(3, off)
            h += np.bincount(flat, weights=wa_i * wb_j, minlength=size).reshape(
                bins_a, bins_b
            )
            if want_grad:
                t = wa_i * bspline_derivative(3, off)
                for k in range(8):
                    dh[k] += np.bincount(
                        flat, weights=t * g[k], minlength=size
                    ).reshape(bins_a, bins_b)
    return h, dh, count


def _pixel_geometry(fa, mask, fb, hmat):
    """Shared pixel mapping: coordinates, bilinear value/derivatives."""
    ha, wa = fa.shape
    hb, wb = fb.shape
    ys, xs = np.nonzero(mask)
    x = xs.astype(np.float64)
    y = ys.astype(np.float64)
    w = hmat[2, 0] * x + hmat[2, 1] * y + hmat[2, 2]
    ok = np.abs(w) > 1e-12
    w = np.where(ok, w, 1.0)
    u = (hmat[0, 0] * x + hmat[0, 1] * y + hmat[0, 2]) / w
    v = (hmat[1, 0] * x + hmat[1, 1] * y + hmat[1, 2]) / w
    ok &= (u >= 0.0) & (u <= wb - 1.0) & (v >= 0.0) & (v <= hb - 1.0)
    x, y, w, u, v = x[ok], y[ok], w[ok], u[ok], v[ok]
    aval = fa[ys[ok], xs[ok]]
    x0 = np.minimum(u.astype(np.intp), wb - 2)
    y0 = np.minimum(v.astype(np.intp), hb - 2)
    fx = u - x0
    fy = v - y0
    f00 = fb[y0, x0]
    f01 = fb[y0, x0 + 1]
    f10 = fb[y0 + 1, x0]
    f11 = fb[y0 + 1, x0 + 1]
    top = f00 + fx * (f01 - f00)
    bot = f10 + fx * (f11 - f10)
    bval = top + fy * (bot - top)
    fu = (1.0 - fy) * (f01 - f00) + fy * (f11 - f10)
    fv = (1.0 - fx) * (f10 - f00) + fx * (f11 - f01)
    fuv = f00 + f11 - f01 - f10
    return x, y, w, u, v, aval, bval, fu, fv, fuv


def parzen_hess_contract(fa, mask, fb, hmat, bins_a, bins_b, wm, we):
    """Contract the second histogram derivative with two weight matrices.

    Computes S[m] = sum_{a,b} (d2 h / d mu_i d mu_j)[a, b] * W_m[a, b] for
    the weight planes wm and we, exploiting that the second derivative of
    the accumulated histogram factorizes per pixel into a B-spline
    curvature term and a transport term. Returns (s_m, s_e, count), each an
    (8, 8) symmetric matrix on the same (unnormalized) scale as `h`.
    """
    x, y, w, u, v, aval, bval, fu, fv, fuv = _pixel_geometry(fa, mask, fb, hmat)
    count = int(x.size)
    s_m = np.zeros((8, 8))
    s_e = np.zeros((8, 8))
    if count == 0:
        return s_m, s_e, count

    ca = aval * bins_a
    cb = bval * bins_b
    ia = np.floor(ca).astype(np.intp)
    ib = np.floor(cb).astype(np.intp)

    iw = 1.0 / w
    bu = fu * bins_b
    bv = fv * bins_b
    xw = x * iw
    yw = y * iw
    proj = -(bu * u + bv * v)
    g = np.stack(
        [bu * xw, bu * yw, bu * iw,
         bv * xw, bv * yw, bv * iw,
         proj * xw, proj * yw]
    )

    # Per-pixel weight-plane sums of wa * b''(cb-kb) and wa * b'(cb-kb).
    a_m = np.zeros(count)
    b_m = np.zeros(count)
    a_e = np.zeros(count)
    b_e = np.zeros(count)
    for i in range(4):
        ka = np.clip(ia - 1 + i, 0, bins_a - 1)
        wa_i = bspline(3, ca - (ia - 1 + i))
        for j in range(4):
            kb = np.clip(ib - 1 + j, 0, bins_b - 1)
            off = cb - (ib - 1 + j)
            w2 = wa_i * _bspline_second(off)
            w1 = wa_i * bspline_derivative(3, off)
            wm_ij = wm[ka, kb]
            we_ij = we[ka, kb]
            a_m += w2 * wm_ij
            b_m += w1 * wm_ij
            a_e += w2 * we_ij
            b_e += w1 * we_ij

    # Second transform derivatives: q = (x, y, 1)/w, r = (x, y)/w.
    q = np.stack([xw, yw, iw])
    r = np.stack([xw, yw])
    mix = fu * u + fv * v + fuv * u * v
    for i in range(8):
        for j in range(i, 8):
            gij = g[i] * g[j]
            # c2 = d2(cb)/dmu_i dmu_j, in bin units
            if i < 3 and j >= 6:
                c2 = -bins_b * q[i] * r[j - 6] * (fu + fuv * v)
            elif 3 <= i < 6 and j >= 6:
                c2 = -bins_b * q[i - 3] * r[j - 6] * (fv + fuv * u)
            elif i < 3 and 3 <= j < 6:
                c2 = bins_b * fuv * q[i] * q[j - 3]
            elif i >= 6 and j >= 6:
                c2 = 2.0 * bins_b * r[i - 6] * r[j - 6] * mix
            else:
                c2 = None
            sm_ij = np.dot(a_m, gij)
            se_ij = np.dot(a_e, gij)
            if c2 is not None:
                sm_ij += np.dot(b_m, c2)
                se_ij += np.dot(b_e, c2)
            s_m[i, j] = s_m[j, i] = sm_ij
            s_e[i, j] = s_e[j, i] = se_ij
    return s_m, s_e, count
