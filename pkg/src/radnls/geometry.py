"""Geometry of the rotationally symmetric manifolds M_k^n.

The metric is dr^2 + phi(r)^2 dw^2 with phi the sinh series truncated at
order 2k+1.  k = 0 is flat space, k = INFINITY is hyperbolic space
(phi = sinh).  Everything here is a pure function of (profile, r) and is
vectorized over numpy arrays of radii.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from ._eft import comp_horner, dd_coeffs, dd_mul, dd_sub, two_prod
from .errors import DomainError, RangeError, UnsupportedError

INFINITY = math.inf

# above this radius hyperbolic quantities use e^{-2r} forms
_HYP_SWITCH = 30.0
# below this radius sinh(r)/r and V use series
_SMALL_R = 1e-2


@dataclass(frozen=True)
class ManifoldProfile:
    """The pair (n, k); k == INFINITY is hyperbolic space."""

    n: int
    k: float | int = INFINITY

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 2:
            raise DomainError(f"dimension n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        k = self.k
        if isinstance(k, str):
            if k.strip().lower() not in ("inf", "infinity"):
                raise DomainError(f"k must be a non-negative integer or 'inf', got {k!r}")
            k = INFINITY
        elif k != INFINITY:
            if isinstance(k, bool) or int(k) != k or k < 0:
                raise DomainError(f"k must be a non-negative integer or 'inf', got {k!r}")
            k = int(k)
        object.__setattr__(self, "k", k)

    @property
    def hyperbolic(self) -> bool:
        return self.k == INFINITY

    @property
    def euclidean(self) -> bool:
        return self.k == 0

    @property
    def k_label(self) -> str:
        return "inf" if self.hyperbolic else str(self.k)

    def __str__(self):
        return f"M(n={self.n}, k={self.k_label})"


class Potentials(NamedTuple):
    V: np.ndarray | float
    V_eff: np.ndarray | float
    r2V: np.ndarray | float


@dataclass(frozen=True)
class GeometryAtPoint:
    r: float
    phi: float
    dphi: float
    d2phi: float
    d3phi: float
    w: float
    lap_a: float
    neg_bilap_a: float
    V: float
    V_eff: float


def sphere_area(n: int) -> float:
    """|S^{n-1}|, surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def scattering_dimension(profile: ManifoldProfile):
    """N = (2k+1)(n-1)+1; INFINITY for hyperbolic space."""
    if profile.hyperbolic:
        return INFINITY
    return (2 * profile.k + 1) * (profile.n - 1) + 1


def morawetz_asymptotic_constants(profile: ManifoldProfile):
    """Limits of r^3 * (-Lap^2 a) at r -> 0 and r -> infinity (finite k)."""
    n, k = profile.n, profile.k
    if profile.hyperbolic:
        raise UnsupportedError("r^3 scaling of -Lap^2 a is only meaningful for finite k")
    return (n - 1) * (n - 3), (n - 1) * (2 * k + 1) * (2 * k * (n - 1) + n - 3)


# ---------------------------------------------------------------------------
# coefficient tables (exact rationals split into double-doubles)


@lru_cache(maxsize=None)
def _tables(k: int):
    fact = math.factorial
    odd = [Fraction(1, fact(2 * j + 1)) for j in range(k + 1)]
    even = [Fraction(1, fact(2 * j)) for j in range(k + 1)]
    # phi'phi'' - phi phi''' = r^{2k+1} sum_j b_j r^{2j}
    b = [
        Fraction(1, fact(2 * j) * fact(2 * k)) * (Fraction(1, 2 * j + 1) - Fraction(1, 2 * k + 1))
        for j in range(k + 1)
    ]
    # (phi')^2 - phi phi'' = 1 + r^{2k+2} sum_j b_j r^{2j} / (2k+2j+2)
    a = [bj / (2 * k + 2 * j + 2) for j, bj in enumerate(b)]
    # phi' - 1 = r^2 sum_{j>=1} r^{2j-2}/(2j)!
    dm1 = even[1:] or [Fraction(0)]
    # (phi' - phi/r) / r^2 = sum_{j>=1} r^{2j-2} * 2j/(2j+1)!
    s = [Fraction(2 * j, fact(2 * j + 1)) for j in range(1, k + 1)] or [Fraction(0)]
    return {
        "P": dd_coeffs(odd),
        "Q": dd_coeffs(even),
        "P1": dd_coeffs(odd[:-1] or [Fraction(0)]),
        "Q1": dd_coeffs(even[:-1] or [Fraction(0)]),
        "B": dd_coeffs(b),
        "A": dd_coeffs(a),
        "D": dd_coeffs(dm1),
        "S": dd_coeffs(s),
    }


def _poly(k, name, x_hi, x_lo):
    hi, lo = _tables(k)[name]
    return comp_horner(hi, lo, x_hi, x_lo)


def _val(pair):
    return pair[0] + pair[1]


# ---------------------------------------------------------------------------
# argument handling


def _radii(r, strict=False):
    arr = np.asarray(r, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if not np.all(np.isfinite(arr)):
        raise DomainError("radius must be finite")
    if strict:
        if np.any(arr <= 0):
            raise DomainError("radius must be > 0 (use the small-r asymptotics at r = 0)")
    elif np.any(arr < 0):
        raise DomainError("radius must be >= 0")
    return arr, scalar


def _out(x, scalar):
    return float(x[0]) if scalar else x


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise RangeError("phi or a derivative overflows double precision at this radius")


# ---------------------------------------------------------------------------
# phi and derivatives


def _phi_dd(k, r):
    """phi, phi', phi'', phi''' as double-doubles for finite k."""
    x_hi, x_lo = two_prod(r, r)
    P = _poly(k, "P", x_hi, x_lo)
    Q = _poly(k, "Q", x_hi, x_lo)
    zero = np.zeros_like(r)
    phi = dd_mul(r, zero, *P)
    if k == 0:
        return phi, Q, (zero, zero), (zero, zero)
    P1 = _poly(k, "P1", x_hi, x_lo)
    Q1 = _poly(k, "Q1", x_hi, x_lo)
    return phi, Q, dd_mul(r, zero, *P1), Q1


def phi_eval(profile: ManifoldProfile, r):
    """Return (phi, phi', phi'', phi''') at radius r >= 0."""
    rr, scalar = _radii(r)
    if profile.hyperbolic:
        with np.errstate(over="ignore"):
            s, c = np.sinh(rr), np.cosh(rr)
        _finite(s, c)
        return tuple(_out(a, scalar) for a in (s, c, s.copy(), c.copy()))
    with np.errstate(over="ignore", invalid="ignore"):
        vals = [_val(p) for p in _phi_dd(profile.k, rr)]
    _finite(*vals)
    return tuple(_out(v, scalar) for v in vals)


def log_phi(profile: ManifoldProfile, r):
    """log phi(r); -inf at r = 0.  Never overflows."""
    rr, scalar = _radii(r)
    with np.errstate(divide="ignore"):
        if profile.hyperbolic:
            out = np.empty_like(rr)
            small = rr <= _HYP_SWITCH
            out[small] = np.log(np.sinh(rr[small]))
            big = rr[~small]
            out[~small] = big - math.log(2.0) + np.log1p(-np.exp(-2.0 * big))
        else:
            x_hi, x_lo = two_prod(rr, rr)
            out = np.log(rr) + np.log(_val(_poly(profile.k, "P", x_hi, x_lo)))
    return _out(out, scalar)


def _sinh_over_r(rr):
    out = np.empty_like(rr)
    small = rr < _SMALL_R
    x = rr[small] ** 2
    out[small] = 1.0 + x * (1.0 / 6 + x * (1.0 / 120 + x / 5040))
    big = rr[~small]
    out[~small] = np.sinh(big) / big
    return out


def log_strichartz_weight(profile: ManifoldProfile, r):
    """log w_n(r) = (n-1)/2 log(phi(r)/r)."""
    rr, scalar = _radii(r)
    half = 0.5 * (profile.n - 1)
    if profile.hyperbolic:
        out = np.empty_like(rr)
        low = rr <= _HYP_SWITCH
        out[low] = half * np.log(_sinh_over_r(rr[low]))
        big = rr[~low]
        out[~low] = half * (big - math.log(2.0) + np.log1p(-np.exp(-2.0 * big)) - np.log(big))
    else:
        x_hi, x_lo = two_prod(rr, rr)
        out = half * np.log(_val(_poly(profile.k, "P", x_hi, x_lo)))
    return _out(out, scalar)


def strichartz_weight(profile: ManifoldProfile, r):
    """w_n(r) = (phi(r)/r)^((n-1)/2), with w_n(0) = 1."""
    rr, scalar = _radii(r)
    half = 0.5 * (profile.n - 1)
    if profile.hyperbolic:
        with np.errstate(over="ignore"):
            out = _sinh_over_r(rr) ** half
    else:
        x_hi, x_lo = two_prod(rr, rr)
        with np.errstate(over="ignore"):
            out = _val(_poly(profile.k, "P", x_hi, x_lo)) ** half
    _finite(out)
    return _out(out, scalar)


# ---------------------------------------------------------------------------
# Morawetz weights


def _ab_series(k, rr):
    """A = (phi')^2 - phi phi'' and B = phi'phi'' - phi phi''' from their
    positive series, plus phi' - 1 and A - 1 without cancellation."""
    x_hi, x_lo = two_prod(rr, rr)
    Bpoly = _val(_poly(k, "B", x_hi, x_lo))
    Apoly = _val(_poly(k, "A", x_hi, x_lo))
    xk = x_hi ** k
    B = rr * xk * Bpoly
    A_minus_1 = x_hi * xk * Apoly
    dphi_minus_1 = x_hi * _val(_poly(k, "D", x_hi, x_lo)) if k > 0 else np.zeros_like(rr)
    return 1.0 + A_minus_1, B, A_minus_1, dphi_minus_1


def _hyp_ratios(rr):
    """coth r and cosh r / sinh^3 r, overflow-free."""
    coth = np.empty_like(rr)
    cs3 = np.empty_like(rr)
    low = rr <= _HYP_SWITCH
    s = np.sinh(rr[low])
    coth[low] = np.cosh(rr[low]) / s
    cs3[low] = np.cosh(rr[low]) / s**3
    e = np.exp(-2.0 * rr[~low])
    coth[~low] = (1.0 + e) / (1.0 - e)
    cs3[~low] = 4.0 * e * (1.0 + e) / (1.0 - e) ** 3
    return coth, cs3


def morawetz_weights(profile: ManifoldProfile, r):
    """(Lap a, -Lap^2 a) for a = distance to the origin, r > 0."""
    rr, scalar = _radii(r, strict=True)
    n = profile.n
    if profile.hyperbolic:
        coth, cs3 = _hyp_ratios(rr)
        return _out((n - 1) * coth, scalar), _out((n - 1) * (n - 3) * cs3, scalar)
    k = profile.k
    with np.errstate(over="ignore", invalid="ignore"):
        phi, dphi, _, _ = (_val(p) for p in _phi_dd(k, rr))
        A, B, _, _ = _ab_series(k, rr)
        lap = (n - 1) * dphi / phi
        num = (n - 3) * dphi * A + phi * B
        neg_bilap = (n - 1) * num / phi**3
    _finite(lap, neg_bilap)
    return _out(lap, scalar), _out(neg_bilap, scalar)


def morawetz_density_weight(profile: ManifoldProfile, r):
    """Weight multiplying |u|^2 in the Morawetz integral.

    cosh r / sinh^3 r on H^n; -Lap^2 a / ((n-1)(n-3)) on M_k^n (which
    behaves like 1/r^3 at both ends).  For n = 3 the normalization
    degenerates and the raw comparison weight is used instead.
    """
    rr, scalar = _radii(r, strict=True)
    n = profile.n
    if profile.hyperbolic:
        return _out(_hyp_ratios(rr)[1], scalar)
    if n == 3:
        return _out(rr**-3.0, scalar)
    _, nb = morawetz_weights(profile, rr)
    return _out(nb / ((n - 1) * (n - 3)), scalar)


# ---------------------------------------------------------------------------
# positivity certificate


@dataclass
class CertificateReport:
    """Per-point outcome of the four positivity/identity checks.

    margins: (a) phi'((phi')^2 - phi phi'') - 1, (b) phi (phi'phi'' - phi phi'''),
    (c) -Lap^2 a, and (d) relative mismatch between the direct and series
    forms of phi'phi'' - phi phi'''.
    """

    n: int
    k: int
    r: np.ndarray
    margin_a: np.ndarray
    margin_b: np.ndarray
    margin_c: np.ndarray
    identity_relerr: np.ndarray
    identity_tol: float = 1e-10

    @property
    def pass_a(self):
        return self.margin_a > 0

    @property
    def pass_b(self):
        return self.margin_b > 0

    @property
    def pass_c(self):
        return self.margin_c > 0

    @property
    def pass_d(self):
        return self.identity_relerr <= self.identity_tol

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.pass_a & self.pass_b & self.pass_c & self.pass_d))

    def failing_radii(self):
        ok = self.pass_a & self.pass_b & self.pass_c & self.pass_d
        return self.r[~ok]

    def worst(self):
        if self.r.size == 0:
            return {}
        return {
            "a": float(self.margin_a.min()),
            "b": float(self.margin_b.min()),
            "c": float(self.margin_c.min()),
            "d": float(self.identity_relerr.max()),
        }

    def to_dict(self):
        return {
            "n": self.n,
            "k": self.k,
            "points": int(self.r.size),
            "all_pass": self.all_pass,
            "worst": self.worst(),
            "pass_counts": {
                c: int(np.count_nonzero(getattr(self, f"pass_{c}"))) for c in "abcd"
            },
            "failing_r": [float(x) for x in self.failing_radii()],
        }


def _remainder_form(k, rr, phi, dphi):
    """phi'phi'' - phi phi''' via the truncation remainders
    phi'' = phi - r^{2k+1}/(2k+1)! and phi''' = phi' - r^{2k}/(2k)!:
    r^{2k} (phi/(2k)! - r phi'/(2k+1)!), bracket in double-double."""
    (f0h, f1h), (f0l, f1l) = dd_coeffs(
        [Fraction(1, math.factorial(2 * k)), Fraction(1, math.factorial(2 * k + 1))]
    )
    zero = np.zeros_like(rr)
    t0 = dd_mul(*phi, f0h + zero, f0l + zero)
    t1 = dd_mul(*dd_mul(*dphi, rr, zero), f1h + zero, f1l + zero)
    return rr ** (2 * k) * _val(dd_sub(*t0, *t1))


def positivity_certificate(profile: ManifoldProfile, r_grid, identity_tol=1e-10) -> CertificateReport:
    if profile.hyperbolic or profile.k == 0:
        raise UnsupportedError(
            "positivity certificate is defined for finite k >= 1 only "
            f"(got k={profile.k_label})"
        )
    rr = np.atleast_1d(np.asarray(r_grid, dtype=float))
    if rr.size and (not np.all(np.isfinite(rr)) or np.any(rr <= 0)):
        raise DomainError("certificate radii must be finite and strictly positive")
    k = profile.k
    with np.errstate(over="ignore", invalid="ignore"):
        phi, dphi, _, _ = _phi_dd(k, rr)
        A, B_series, A_minus_1, dphi_minus_1 = _ab_series(k, rr)
        B_direct = _remainder_form(k, rr, phi, dphi)
        margin_a = dphi_minus_1 * A + A_minus_1
        margin_b = _val(phi) * B_direct
        _, margin_c = morawetz_weights(profile, rr) if rr.size else (None, rr.copy())
        relerr = np.abs(B_direct - B_series) / np.abs(B_series)
    return CertificateReport(
        n=profile.n,
        k=k,
        r=rr,
        margin_a=np.asarray(margin_a),
        margin_b=np.asarray(margin_b),
        margin_c=np.asarray(margin_c),
        identity_relerr=np.asarray(relerr),
        identity_tol=identity_tol,
    )


# ---------------------------------------------------------------------------
# potentials


def _sinh_minus_r(rr):
    out = np.empty_like(rr)
    small = rr < 1.0
    x = rr[small] ** 2
    acc = np.zeros_like(x)
    for j in range(12, 0, -1):
        acc = acc * x + 1.0 / math.factorial(2 * j + 1)
    out[small] = rr[small] * x * acc
    big = rr[~small]
    out[~small] = np.sinh(big) - big
    return out


def effective_potential(profile: ManifoldProfile, r) -> Potentials:
    """Potentials of the reduced radial problems.

    V acts on u~ = u (phi/r)^{(n-1)/2} next to the flat radial Laplacian;
    V_eff acts on w = phi^{(n-1)/2} u next to -d^2/dr^2.  They differ by
    the flat centrifugal term (n-1)(n-3)/(4r^2).
    """
    rr, scalar = _radii(r, strict=True)
    n = profile.n
    c1 = 0.5 * (n - 1)
    c2 = 0.25 * (n - 1) * (n - 3)
    if profile.hyperbolic:
        coth, _ = _hyp_ratios(rr)
        # coth^2 - 1/r^2 = 1 + (1/sinh^2 - 1/r^2), the bracket without cancellation
        low = rr <= _HYP_SWITCH
        bracket = np.zeros_like(rr)
        rl = rr[low]
        sm = _sinh_minus_r(rl)
        s = np.sinh(rl)
        bracket[low] = -sm * (s + rl) / (rl * s) ** 2
        big = rr[~low]
        with np.errstate(under="ignore"):
            bracket[~low] = 4.0 * np.exp(-2.0 * big) / (1.0 - np.exp(-2.0 * big)) ** 2 - 1.0 / big**2
        V = c1 + c2 * (1.0 + bracket)
        V_eff = c1 + c2 * coth**2
    else:
        k = profile.k
        x_hi, x_lo = two_prod(rr, rr)
        P = _val(_poly(k, "P", x_hi, x_lo))
        Q = _val(_poly(k, "Q", x_hi, x_lo))
        P1 = _val(_poly(k, "P1", x_hi, x_lo)) if k > 0 else np.zeros_like(rr)
        S = _val(_poly(k, "S", x_hi, x_lo)) if k > 0 else np.zeros_like(rr)
        with np.errstate(over="ignore", invalid="ignore"):
            ratio2 = P1 / P  # phi''/phi
            # (phi'/phi)^2 - 1/r^2 = (Q - P)(Q + P) / (r P)^2 with Q - P = r^2 S
            bracket = S * (Q + P) / P**2
            V = c1 * ratio2 + c2 * bracket
            V_eff = c1 * ratio2 + c2 * (Q / (rr * P)) ** 2
        _finite(V, V_eff)
    return Potentials(_out(V, scalar), _out(V_eff, scalar), _out(V * rr**2, scalar))


def potential_small_r(profile: ManifoldProfile, r):
    """Two-term Taylor expansion V(0) + V_2 r^2, valid for r < 1e-2.

    With phi = r(1 + a r^2 + b r^4 + ...): V(0) = n(n-1)a and
    V_2 = (n-1)(10b - 3a^2) + 2(n-1)(n-3)b.
    """
    rr, scalar = _radii(r)
    if np.any(rr >= _SMALL_R):
        raise DomainError(f"series path only valid for r < {_SMALL_R}")
    n, k = profile.n, profile.k
    a = 1.0 / 6 if k >= 1 else 0.0
    b = 1.0 / 120 if k >= 2 else 0.0
    V0 = n * (n - 1) * a
    V2 = (n - 1) * (10 * b - 3 * a * a) + 2 * (n - 1) * (n - 3) * b
    return _out(V0 + V2 * rr**2, scalar)


def geometry_at_point(profile: ManifoldProfile, r: float) -> GeometryAtPoint:
    r = float(r)
    phi, dphi, d2phi, d3phi = phi_eval(profile, r)
    lap, nb = morawetz_weights(profile, r)
    pot = effective_potential(profile, r)
    return GeometryAtPoint(
        r=r,
        phi=phi,
        dphi=dphi,
        d2phi=d2phi,
        d3phi=d3phi,
        w=strichartz_weight(profile, r),
        lap_a=lap,
        neg_bilap_a=nb,
        V=pot.V,
        V_eff=pot.V_eff,
    )
