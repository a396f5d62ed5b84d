"""B-spline kernels used as Parzen windows for the joint histogram.

The order-n spline is the (n+1)-fold convolution of the unit box with
itself; orders 0..3 are provided in closed form, and derivatives use the
identity  d/dx b_n(x) = b_{n-1}(x + 1/2) - b_{n-1}(x - 1/2).
"""

import numpy as np

SUPPORTED_ORDERS = (0, 1, 2, 3)


def bspline(order, x):
    """Evaluate the centered B-spline of the given order (0..3) at x.

    Accepts scalars or arrays; returns the same shape.
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported spline order {order}")
    x = np.asarray(x, dtype=np.float64)
    if order == 0:
        out = np.where((x >= -0.5) & (x < 0.5), 1.0, 0.0)
        return out if out.ndim else float(out)
    a = np.abs(x)
    if order == 1:
        out = np.where(a < 1.0, 1.0 - a, 0.0)
    elif order == 2:
        out = np.where(
            a < 0.5,
            0.75 - a * a,
            np.where(a < 1.5, 0.5 * (1.5 - a) ** 2, 0.0),
        )
    else:
        out = np.where(
            a < 1.0,
            2.0 / 3.0 - a * a + 0.5 * a * a * a,
            np.where(a < 2.0, (2.0 - a) ** 3 / 6.0, 0.0),
        )
    return out if out.ndim else float(out)


def bspline_derivative(order, x):
    """Derivative of the order-n spline via the lower-order difference rule.

    The order-0 box is flat almost everywhere, so its derivative is taken
    as identically zero.
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported spline order {order}")
    x = np.asarray(x, dtype=np.float64)
    if order == 0:
        out = np.zeros_like(x)
        return out if out.ndim else 0.0
    out = bspline(order - 1, x + 0.5) - bspline(order - 1, x - 0.5)
    return out if np.ndim(out) else float(out)
