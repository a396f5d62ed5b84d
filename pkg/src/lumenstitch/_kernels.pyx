# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Parzen histogram accumulation kernel.

Semantics mirror `_kernels_fallback.parzen_joint_hist`; this version walks
the pixels in C with inline cubic B-spline evaluation, which is what makes
the 110-iteration multiscale optimization affordable.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _b3(double x) nogil:
    cdef double a = x if x >= 0.0 else -x
    if a < 1.0:
        return 2.0 / 3.0 - a * a + 0.5 * a * a * a
    if a < 2.0:
        a = 2.0 - a
        return a * a * a / 6.0
    return 0.0


cdef inline double _b2(double x) nogil:
    cdef double a = x if x >= 0.0 else -x
    if a < 0.5:
        return 0.75 - a * a
    if a < 1.5:
        a = 1.5 - a
        return 0.5 * a * a
    return 0.0


cdef inline double _b3d(double x) nogil:
    # d/dx b3(x) = b2(x + 1/2) - b2(x - 1/2)
    return _b2(x + 0.5) - _b2(x - 0.5)


cdef inline double _b1(double x) nogil:
    cdef double a = x if x >= 0.0 else -x
    if a < 1.0:
        return 1.0 - a
    return 0.0


cdef inline double _b3dd(double x) nogil:
    # d2/dx2 b3(x) = b1(x + 1) - 2 b1(x) + b1(x - 1)
    return _b1(x + 1.0) - 2.0 * _b1(x) + _b1(x - 1.0)


def parzen_joint_hist(double[:, ::1] fa, cnp.uint8_t[:, ::1] mask,
                      double[:, ::1] fb, double[:, ::1] hmat,
                      int bins_a, int bins_b, bint want_grad):
    """Accumulate the joint Parzen histogram of (fa, fb o T).

    See the fallback module for the full contract. `mask` is uint8 (0/1).
    """
    cdef Py_ssize_t ha = fa.shape[0], wa = fa.shape[1]
    cdef Py_ssize_t hb = fb.shape[0], wb = fb.shape[1]

    h_arr = np.zeros((bins_a, bins_b))
    dh_arr = np.zeros((8, bins_a, bins_b)) if want_grad else None
    cdef double[:, ::1] h = h_arr
    cdef double[:, :, ::1] dh = dh_arr if want_grad else h_arr[None]

    cdef double m00 = hmat[0, 0], m01 = hmat[0, 1], m02 = hmat[0, 2]
    cdef double m10 = hmat[1, 0], m11 = hmat[1, 1], m12 = hmat[1, 2]
    cdef double m20 = hmat[2, 0], m21 = hmat[2, 1], m22 = hmat[2, 2]

    cdef Py_ssize_t px, py, x0, y0, i, j, k, ka, kb
    cdef Py_ssize_t count = 0
    cdef double x, y, w, iw, u, v, fx, fy
    cdef double f00, f01, f10, f11, top, bot, bval, aval, fu, fv
    cdef double ca, cb, bu, bv, xw, yw, proj, t, wai
    cdef double g[8]
    cdef double wa4[4]
    cdef double wb4[4]
    cdef double db4[4]
    cdef Py_ssize_t ka4[4]
    cdef Py_ssize_t kb4[4]
    cdef Py_ssize_t ia, ib, kk

    with nogil:
        for py in range(ha):
            for px in range(wa):
                if mask[py, px] == 0:
                    continue
                x = <double> px
                y = <double> py
                w = m20 * x + m21 * y + m22
                if w < 1e-12 and w > -1e-12:
                    continue
                u = (m00 * x + m01 * y + m02) / w
                v = (m10 * x + m11 * y + m12) / w
                if u < 0.0 or u > wb - 1.0 or v < 0.0 or v > hb - 1.0:
                    continue
                x0 = <Py_ssize_t> u
                if x0 > wb - 2:
                    x0 = wb - 2
                y0 = <Py_ssize_t> v
                if y0 > hb - 2:
                    y0 = hb - 2
                fx = u - x0
                fy = v - y0
                f00 = fb[y0, x0]
                f01 = fb[y0, x0 + 1]
                f10 = fb[y0 + 1, x0]
                f11 = fb[y0 + 1, x0 + 1]
                top = f00 + fx * (f01 - f00)
                bot = f10 + fx * (f11 - f10)
                bval = top + fy * (bot - top)
                aval = fa[py, px]
                count += 1

                ca = aval * bins_a
                cb = bval * bins_b
                ia = <Py_ssize_t> ca
                if ca < ia:
                    ia -= 1
                ib = <Py_ssize_t> cb
                if cb < ib:
                    ib -= 1
                for i in range(4):
                    kk = ia - 1 + i
                    wa4[i] = _b3(ca - kk)
                    if kk < 0:
                        kk = 0
                    elif kk > bins_a - 1:
                        kk = bins_a - 1
                    ka4[i] = kk
                for j in range(4):
                    kk = ib - 1 + j
                    wb4[j] = _b3(cb - kk)
                    db4[j] = _b3d(cb - kk)
                    if kk < 0:
                        kk = 0
                    elif kk > bins_b - 1:
                        kk = bins_b - 1
                    kb4[j] = kk

                if want_grad:
                    fu = (1.0 - fy) * (f01 - f00) + fy * (f11 - f10)
                    fv = (1.0 - fx) * (f10 - f00) + fx * (f11 - f01)
                    iw = 1.0 / w
                    bu = fu * bins_b
                    bv = fv * bins_b
                    xw = x * iw
                    yw = y * iw
                    proj = -(bu * u + bv * v)
                    g[0] = bu * xw
                    g[1] = bu * yw
                    g[2] = bu * iw
                    g[3] = bv * xw
                    g[4] = bv * yw
                    g[5] = bv * iw
                    g[6] = proj * xw
                    g[7] = proj * yw
                    for i in range(4):
                        ka = ka4[i]
                        wai = wa4[i]
                        for j in range(4):
                            kb = kb4[j]
                            h[ka, kb] += wai * wb4[j]
                            t = wai * db4[j]
                            for k in range(8):
                                dh[k, ka, kb] += t * g[k]
                else:
                    for i in range(4):
                        ka = ka4[i]
                        wai = wa4[i]
                        for j in range(4):
                            h[ka, kb4[j]] += wai * wb4[j]

    return h_arr, dh_arr, count


def parzen_hess_contract(double[:, ::1] fa, cnp.uint8_t[:, ::1] mask,
                         double[:, ::1] fb, double[:, ::1] hmat,
                         int bins_a, int bins_b,
                         double[:, ::1] wm, double[:, ::1] we):
    """Contract the second histogram derivative with two weight planes.

    See the fallback module for the contract. Returns (s_m, s_e, count).
    """
    cdef Py_ssize_t ha = fa.shape[0], wa_n = fa.shape[1]
    cdef Py_ssize_t hb = fb.shape[0], wb = fb.shape[1]

    sm_arr = np.zeros((8, 8))
    se_arr = np.zeros((8, 8))
    cdef double[:, ::1] sm = sm_arr
    cdef double[:, ::1] se = se_arr

    cdef double m00 = hmat[0, 0], m01 = hmat[0, 1], m02 = hmat[0, 2]
    cdef double m10 = hmat[1, 0], m11 = hmat[1, 1], m12 = hmat[1, 2]
    cdef double m20 = hmat[2, 0], m21 = hmat[2, 1], m22 = hmat[2, 2]

    cdef Py_ssize_t px, py, x0, y0, i, j, ka, kb, ia, ib, kk
    cdef Py_ssize_t count = 0
    cdef double x, y, w, iw, u, v, fx, fy
    cdef double f00, f01, f10, f11, top, bot, bval, aval, fu, fv, fuv
    cdef double ca, cb, bu, bv, proj, wai, off
    cdef double am, bm, ae, be, wmv, wev, w2, w1, mix, c2, gij
    cdef double g[8]
    cdef double q[3]
    cdef double r[2]
    cdef double wa4[4]
    cdef Py_ssize_t ka4[4]
    cdef Py_ssize_t kb4[4]
    cdef double wb2[4]
    cdef double wb1[4]

    with nogil:
        for py in range(ha):
            for px in range(wa_n):
                if mask[py, px] == 0:
                    continue
                x = <double> px
                y = <double> py
                w = m20 * x + m21 * y + m22
                if w < 1e-12 and w > -1e-12:
                    continue
                u = (m00 * x + m01 * y + m02) / w
                v = (m10 * x + m11 * y + m12) / w
                if u < 0.0 or u > wb - 1.0 or v < 0.0 or v > hb - 1.0:
                    continue
                x0 = <Py_ssize_t> u
                if x0 > wb - 2:
                    x0 = wb - 2
                y0 = <Py_ssize_t> v
                if y0 > hb - 2:
                    y0 = hb - 2
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
                aval = fa[py, px]
                count += 1

                ca = aval * bins_a
                cb = bval * bins_b
                ia = <Py_ssize_t> ca
                if ca < ia:
                    ia -= 1
                ib = <Py_ssize_t> cb
                if cb < ib:
                    ib -= 1
                for i in range(4):
                    kk = ia - 1 + i
                    wa4[i] = _b3(ca - kk)
                    if kk < 0:
                        kk = 0
                    elif kk > bins_a - 1:
                        kk = bins_a - 1
                    ka4[i] = kk
                for j in range(4):
                    kk = ib - 1 + j
                    off = cb - kk
                    wb2[j] = _b3dd(off)
                    wb1[j] = _b3d(off)
                    if kk < 0:
                        kk = 0
                    elif kk > bins_b - 1:
                        kk = bins_b - 1
                    kb4[j] = kk

                am = 0.0
                bm = 0.0
                ae = 0.0
                be = 0.0
                for i in range(4):
                    ka = ka4[i]
                    wai = wa4[i]
                    for j in range(4):
                        kb = kb4[j]
                        wmv = wm[ka, kb]
                        wev = we[ka, kb]
                        w2 = wai * wb2[j]
                        w1 = wai * wb1[j]
                        am += w2 * wmv
                        bm += w1 * wmv
                        ae += w2 * wev
                        be += w1 * wev

                iw = 1.0 / w
                bu = fu * bins_b
                bv = fv * bins_b
                q[0] = x * iw
                q[1] = y * iw
                q[2] = iw
                r[0] = x * iw
                r[1] = y * iw
                proj = -(bu * u + bv * v)
                g[0] = bu * q[0]
                g[1] = bu * q[1]
                g[2] = bu * q[2]
                g[3] = bv * q[0]
                g[4] = bv * q[1]
                g[5] = bv * q[2]
                g[6] = proj * r[0]
                g[7] = proj * r[1]
                mix = fu * u + fv * v + fuv * u * v

                for i in range(8):
                    for j in range(i, 8):
                        gij = g[i] * g[j]
                        if i < 3 and j >= 6:
                            c2 = -bins_b * q[i] * r[j - 6] * (fu + fuv * v)
                        elif i >= 3 and i < 6 and j >= 6:
                            c2 = -bins_b * q[i - 3] * r[j - 6] * (fv + fuv * u)
                        elif i < 3 and j >= 3 and j < 6:
                            c2 = bins_b * fuv * q[i] * q[j - 3]
                        elif i >= 6 and j >= 6:
                            c2 = 2.0 * bins_b * r[i - 6] * r[j - 6] * mix
                        else:
                            c2 = 0.0
                        sm[i, j] += am * gij + bm * c2
                        se[i, j] += ae * gij + be * c2

    for i in range(8):
        for j in range(i + 1, 8):
            sm_arr[j, i] = sm_arr[i, j]
            se_arr[j, i] = se_arr[i, j]
    return sm_arr, se_arr, count
