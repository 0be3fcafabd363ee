"""Error-free transformations and compensated Horner evaluation.

All routines are vectorized over numpy arrays.  Double-double values are
carried as ``(hi, lo)`` pairs with ``|lo| <= ulp(hi)/2``.
"""

from fractions import Fraction

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def dd_coeffs(fractions):
    """Split exact rationals into (hi, lo) float arrays."""
    hi = np.array([float(f) for f in fractions])
    lo = np.array([float(Fraction(f) - Fraction(h)) for f, h in zip(fractions, hi)])
    return hi, lo


def comp_horner(coef_hi, coef_lo, x_hi, x_lo=None):
    """Compensated Horner for sum_j c_j x^j, coefficients low order first.

    ``x`` may itself be given as a double-double.  Returns the result as an
    unevaluated pair ``(s, c)``; ``s + c`` is accurate to a few ulps even
    when the naive scheme would lose digits.
    """
    x_hi = np.asarray(x_hi, dtype=float)
    if x_lo is None:
        x_lo = np.zeros_like(x_hi)
    deg = len(coef_hi) - 1
    s = np.full_like(x_hi, coef_hi[deg])
    c = np.full_like(x_hi, coef_lo[deg])
    for i in range(deg - 1, -1, -1):
        p, pe = two_prod(s, x_hi)
        s_new, se = two_sum(p, coef_hi[i])
        c = c * x_hi + (pe + se + coef_lo[i] + s * x_lo)
        s = s_new
    return s, c


def dd_mul(a_hi, a_lo, b_hi, b_lo):
    p, e = two_prod(a_hi, b_hi)
    e = e + (a_hi * b_lo + a_lo * b_hi)
    return two_sum(p, e)


def dd_sub(a_hi, a_lo, b_hi, b_lo):
    s, e = two_sum(a_hi, -b_hi)
    e = e + (a_lo - b_lo)
    return two_sum(s, e)
