"""Admissible pairs and the weighted Hoelder exponent systems.

Hyperbolic case: choose alpha in (0, 2 sigma) and read off
    1/p = 1/2 - alpha/2,   1/q = 1/2* + alpha/n,
    1/theta = 2/n - (n-2) sigma/n - 2 alpha/n,
subject to theta in (1, inf) and the large-r integrability condition
    alpha/(n-1) - alpha/2 - (2 sigma - alpha)/2* < 0.

M_k^n case: an extra Sobolev exponent a in [2, 2*] replaces 2* in the
middle Hoelder factor, so
    1/theta = 2/n - 2 sigma/a - alpha (1/2 + 1/n - 1/a),
    1/theta < 2/n - 2/N - alpha (1/(2N) + 1/n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UnsupportedError
from .geometry import INFINITY, ManifoldProfile, scattering_dimension

ALPHA_RESOLUTION = 1e-6
A_STEP = 1e-3
MARGIN_TOL = 1e-9
IDENTITY_TOL = 1e-12


def critical_exponent(n: int) -> float:
    """2* = 2n/(n-2)."""
    return 2.0 * n / (n - 2)


def _inv(x):
    return 0.0 if x == math.inf else 1.0 / x


def is_admissible(n: int, p: float, q: float, tol: float = 1e-12) -> bool:
    """2/p + n/q = n/2, p >= 2 and (p, q, n) != (2, inf, 2)."""
    if p < 2 or q < 2:
        return False
    if n == 2 and p == 2 and q == math.inf:
        return False
    return abs(2 * _inv(p) + n * _inv(q) - n / 2) <= tol


@dataclass(frozen=True)
class ExponentSolution:
    n: int
    sigma: float
    alpha: float
    p: float
    q: float
    theta: float
    N: float = INFINITY
    a: float | None = None
    margins: dict = field(default_factory=dict, compare=False)

    feasible = True

    @property
    def status(self):
        return "FEASIBLE"

    def residuals(self) -> dict:
        """Residuals of the defining identities, recomputed from the tuple."""
        n, al, s = self.n, self.alpha, self.sigma
        two_star = critical_exponent(n)
        mid = self.a if self.a is not None else two_star
        inv_qp = 1.0 - 1.0 / self.q
        inv_pp = 1.0 - _inv(self.p)
        return {
            "admissible": 2 * _inv(self.p) + n / self.q - n / 2,
            "q_relation": 1.0 / self.q - (1.0 / two_star + al / n),
            "holder_space": inv_qp - (al / 2 + (2 * s - al) / mid + 1.0 / two_star + 1.0 / self.theta),
            "holder_time": inv_pp - (al / 2 + 0.5),
        }

    def strict_margins(self) -> dict:
        return _margins(self.n, self.N, self.sigma, self.alpha, self.a, 1.0 / self.theta)

    def certify(self, tol=IDENTITY_TOL, margin=MARGIN_TOL) -> bool:
        """Re-substitute the tuple into every identity and strict inequality."""
        ok = all(abs(v) <= tol for v in self.residuals().values())
        ok &= all(v >= margin for v in self.strict_margins().values())
        ok &= self.p >= 2 and is_admissible(self.n, self.p, self.q)
        if self.a is not None:
            ok &= 2.0 - 1e-15 <= self.a <= critical_exponent(self.n) + 1e-12
        return bool(ok)

    def to_dict(self):
        d = {
            "status": self.status,
            "n": self.n,
            "sigma": self.sigma,
            "N": _json_num(self.N),
            "alpha": self.alpha,
            "p": _json_num(self.p),
            "q": self.q,
            "theta": self.theta,
            "margins": self.strict_margins(),
            "residuals": self.residuals(),
            "certified": self.certify(),
        }
        if self.a is not None:
            d["a"] = self.a
        return d


@dataclass(frozen=True)
class Infeasible:
    """No admissible tuple; ``certificate`` records the violated condition."""

    n: int
    sigma: float
    N: float
    status: str
    reason: str
    certificate: dict = field(default_factory=dict)

    feasible = False

    def to_dict(self):
        return {
            "status": self.status,
            "n": self.n,
            "sigma": self.sigma,
            "N": _json_num(self.N),
            "reason": self.reason,
            "certificate": self.certificate,
        }


def _json_num(x):
    return "inf" if x == math.inf else x


def _inv_theta(n, sigma, alpha, a):
    if a is None:
        return 2.0 / n - (n - 2) * sigma / n - 2.0 * alpha / n
    return 2.0 / n - 2.0 * sigma / a - alpha * (0.5 + 1.0 / n - 1.0 / a)


def _integrability(n, N, sigma, alpha, a, inv_theta):
    """Positive iff the last Hoelder factor is in L^theta at infinity."""
    if a is None:
        two_star = critical_exponent(n)
        return -(alpha / (n - 1) - alpha / 2 - (2 * sigma - alpha) / two_star)
    return 2.0 / n - 2.0 / N - alpha * (1.0 / (2 * N) + 1.0 / n) - inv_theta


def _margins(n, N, sigma, alpha, a, inv_theta):
    return {
        "alpha_positive": alpha,
        "alpha_below_2sigma": 2 * sigma - alpha,
        "theta_finite": inv_theta,
        "theta_above_one": 1.0 - inv_theta,
        "integrability": _integrability(n, N, sigma, alpha, a, inv_theta),
    }


def _feasible(n, N, sigma, alpha, a, tol):
    """Vectorized feasibility of (alpha, a) with every strict margin >= tol."""
    inv_theta = _inv_theta(n, sigma, alpha, a)
    m = _margins(n, N, sigma, alpha, a, inv_theta)
    ok = alpha <= 1.0  # p >= 2
    for v in m.values():
        ok = ok & (v >= tol)
    return ok


def _largest_alpha(n, N, sigma, a, tol):
    """Dyadic bisection for the largest feasible alpha (vectorized over a).

    Feasibility is convex in alpha (all conditions are affine), so the
    lower bracket stays feasible.  Returns 0 where nothing >= resolution
    was found.
    """
    shape = np.shape(a) if a is not None else ()
    lo = np.zeros(shape)
    hi = np.full(shape, min(2.0 * sigma, 1.0))
    while np.max(hi - lo) > ALPHA_RESOLUTION:
        mid = 0.5 * (lo + hi)
        ok = _feasible(n, N, sigma, mid, a, tol)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def _check_args(n, sigma):
    if isinstance(n, bool) or int(n) != n:
        raise DomainError(f"n must be an integer, got {n!r}")
    if n < 4:
        raise UnsupportedError(f"exponent systems require n >= 4 (got n={n})")
    if not sigma > 0 or not math.isfinite(sigma):
        raise DomainError(f"sigma must be a positive finite number, got {sigma!r}")


def _solution(n, N, sigma, alpha, a):
    inv_theta = _inv_theta(n, sigma, alpha, a)
    inv_p = 0.5 - alpha / 2
    inv_q = 1.0 / critical_exponent(n) + alpha / n
    return ExponentSolution(
        n=n,
        sigma=sigma,
        alpha=float(alpha),
        p=math.inf if inv_p == 0 else 1.0 / inv_p,
        q=1.0 / inv_q,
        theta=1.0 / inv_theta,
        N=N,
        a=None if a is None else float(a),
        margins=_margins(n, N, sigma, float(alpha), a, inv_theta),
    )


def solve_exponents_hyperbolic(n: int, sigma: float):
    """Largest-alpha solution of the H^n system, or ``Infeasible``."""
    _check_args(n, sigma)
    n = int(n)
    zero = _margins(n, INFINITY, sigma, 0.0, None, _inv_theta(n, sigma, 0.0, None))
    zero.pop("alpha_positive")
    bad = {k: v for k, v in zero.items() if v < MARGIN_TOL}
    if bad:
        status = "INFEASIBLE" if min(bad.values()) <= 0 else "INFEASIBLE_AT_TOLERANCE"
        return Infeasible(n, sigma, INFINITY, status, "conditions fail already at alpha -> 0", bad)
    alpha = float(_largest_alpha(n, INFINITY, sigma, None, MARGIN_TOL))
    if alpha <= 0:
        return Infeasible(
            n, sigma, INFINITY, "INFEASIBLE_AT_TOLERANCE",
            "feasible alpha interval narrower than the bisection resolution", zero,
        )
    return _solution(n, INFINITY, sigma, alpha, None)


def solve_exponents_M(n: int, k: int, sigma: float):
    """Solve the M_k^n system over a in [2, 2*] and alpha in (0, 2 sigma).

    Among feasible a the solution with the largest integrability margin is
    returned (ties: smallest a).
    """
    _check_args(n, sigma)
    n = int(n)
    if k == INFINITY:
        raise UnsupportedError("k = inf: use solve_exponents_hyperbolic")
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise UnsupportedError(f"the M_k^n system assumes k >= 1 (got k={k!r})")
    N = scattering_dimension(ManifoldProfile(n, int(k)))
    two_star = critical_exponent(n)
    count = int(math.floor((two_star - 2.0) / A_STEP + 1e-9)) + 1
    a_grid = 2.0 + A_STEP * np.arange(count)
    if a_grid[-1] < two_star - 1e-12:
        a_grid = np.append(a_grid, two_star)
    # alpha -> 0 conditions: a/N < sigma < a/n
    cand = a_grid[(sigma - a_grid / N >= MARGIN_TOL) & (a_grid / n - sigma >= MARGIN_TOL)]
    if cand.size == 0:
        lo_edge, hi_edge = 2.0 / N, two_star / n
        return Infeasible(
            n, sigma, N, "INFEASIBLE",
            "no a in [2, 2*] with a/N < sigma < a/n",
            {"sigma_min": lo_edge, "sigma_max": hi_edge, "a_range": [2.0, two_star]},
        )
    alpha = _largest_alpha(n, N, sigma, cand, MARGIN_TOL)
    good = alpha > 0
    if not np.any(good):
        return Infeasible(
            n, sigma, N, "INFEASIBLE_AT_TOLERANCE",
            "feasible alpha interval narrower than the bisection resolution for every a",
            {"a_candidates": int(cand.size)},
        )
    cand, alpha = cand[good], alpha[good]
    integ = _integrability(n, N, sigma, alpha, cand, _inv_theta(n, sigma, alpha, cand))
    best = int(np.argmax(integ))
    return _solution(n, N, sigma, float(alpha[best]), float(cand[best]))


def solve_exponents(profile: ManifoldProfile, sigma: float):
    if profile.hyperbolic:
        return solve_exponents_hyperbolic(profile.n, sigma)
    return solve_exponents_M(profile.n, profile.k, sigma)


def feasible_sigma_range(n: int, k) -> tuple[float, float]:
    """Open interval (2/N, 2/(n-2)) of short-range powers; 2/N = 0 on H^n."""
    N = scattering_dimension(ManifoldProfile(n, k))
    return (0.0 if N == INFINITY else 2.0 / N), 2.0 / (n - 2)


# ---------------------------------------------------------------------------
# bootstrap continuity argument


def bootstrap_threshold(theta: float, eps2: float) -> float:
    """Largest eps1 for which the bootstrap closes: (1-1/theta)(theta eps2)^{-1/(theta-1)}."""
    if not theta > 1:
        raise DomainError(f"theta must exceed 1, got {theta!r}")
    if not eps2 > 0:
        raise DomainError(f"eps2 must be positive, got {eps2!r}")
    return (1.0 - 1.0 / theta) * (theta * eps2) ** (-1.0 / (theta - 1.0))


@dataclass
class BootstrapReport:
    hypothesis: bool
    initial: bool
    small_eps1: bool
    conclusion: bool
    bound: float
    sup_M: float

    @property
    def applies(self) -> bool:
        return self.hypothesis and self.initial and self.small_eps1

    @property
    def consistent(self) -> bool:
        """False only if the hypotheses hold and the conclusion does not."""
        return not self.applies or self.conclusion


def bootstrap_check(M_series, eps1: float, eps2: float, theta: float) -> BootstrapReport:
    """Check the bootstrap hypotheses on a sampled trajectory M(t)."""
    M = np.asarray(M_series, dtype=float)
    if M.size == 0:
        raise DomainError("empty M series")
    if np.any(M < 0):
        raise DomainError("M must be non-negative")
    thr = bootstrap_threshold(theta, eps2)
    bound = theta / (theta - 1.0) * eps1
    return BootstrapReport(
        hypothesis=bool(np.all(M <= eps1 + eps2 * M**theta)),
        initial=bool(M[0] <= (theta * eps2) ** (-1.0 / (theta - 1.0))),
        small_eps1=bool(eps1 < thr),
        conclusion=bool(np.all(M <= bound)),
        bound=bound,
        sup_M=float(M.max()),
    )
