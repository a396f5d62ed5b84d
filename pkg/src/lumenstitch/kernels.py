"""Import-time selection of the histogram kernel backend.

The compiled extension is preferred; when it is unavailable (pure install,
failed build) the NumPy fallback provides identical semantics at lower
speed. `BACKEND` reports which one is active.
"""

import numpy as np

try:
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on build environment
    from . import _kernels_fallback as _impl

    BACKEND = "numpy"

from . import _kernels_fallback as _fallback_impl


def _select(backend):
    if backend is None:
        return _impl, BACKEND
    if backend == "numpy":
        return _fallback_impl, "numpy"
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available")
        return _impl, "cython"
    raise ValueError(f"unknown backend {backend!r}")


def _prepare(fa, mask, fb, hmat, chosen):
    fa = np.ascontiguousarray(fa, dtype=np.float64)
    fb = np.ascontiguousarray(fb, dtype=np.float64)
    hmat = np.ascontiguousarray(hmat, dtype=np.float64)
    if chosen == "cython":
        mask = np.ascontiguousarray(mask, dtype=np.uint8)
    else:
        mask = np.asarray(mask, dtype=bool)
    return fa, mask, fb, hmat


def parzen_joint_hist(fa, mask, fb, hmat, bins_a, bins_b, want_grad,
                      backend=None):
    """Dispatch the histogram accumulation to the active backend.

    `backend` may force "cython" or "numpy" (used by the equivalence tests
    and the backend benchmark); by default the module-level selection is
    used.
    """
    impl, chosen = _select(backend)
    fa, mask, fb, hmat = _prepare(fa, mask, fb, hmat, chosen)
    return impl.parzen_joint_hist(fa, mask, fb, hmat, int(bins_a),
                                  int(bins_b), bool(want_grad))


def parzen_hess_contract(fa, mask, fb, hmat, bins_a, bins_b, wm, we,
                         backend=None):
    """Dispatch the second-derivative contraction to the active backend."""
    impl, chosen = _select(backend)
    fa, mask, fb, hmat = _prepare(fa, mask, fb, hmat, chosen)
    wm = np.ascontiguousarray(wm, dtype=np.float64)
    we = np.ascontiguousarray(we, dtype=np.float64)
    return impl.parzen_hess_contract(fa, mask, fb, hmat, int(bins_a),
                                     int(bins_b), wm, we)
