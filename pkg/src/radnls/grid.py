"""Radial grids, field states and discrete functionals.

The field is stored in the Liouville-reduced form w = phi^{(n-1)/2} u on a
uniform grid r_i = i h, i = 1..m, h = r_max/(m+1), with Dirichlet
conditions at r = 0 and r = r_max.  Quadratures use the trapezoid rule,
which with vanishing end values reduces to h * sum.  Large exponentials
(phi^{n-1} on hyperbolic profiles) are only ever handled as logarithms.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import geometry as geo
from .errors import DomainError
from .geometry import ManifoldProfile

_MAGIC = b"RNLS"
_VERSION = 1
_HEADER = struct.Struct("<4sIiiqdd")


class RadialGrid:
    """Uniform interior grid on (0, r_max) with precomputed geometry.

    Arrays are read-only and depend only on (profile, r_max, m).
    """

    def __init__(self, profile: ManifoldProfile, r_max: float, m: int):
        if not r_max > 0 or not math.isfinite(r_max):
            raise DomainError(f"r_max must be positive and finite, got {r_max!r}")
        if int(m) != m or m < 3:
            raise DomainError(f"m must be an integer >= 3, got {m!r}")
        self.profile = profile
        self.r_max = float(r_max)
        self.m = int(m)
        self.h = self.r_max / (self.m + 1)
        self.area = geo.sphere_area(profile.n)
        r = self.h * np.arange(1, self.m + 1, dtype=float)
        half = 0.5 * (profile.n - 1)
        self.r = r
        self.log_phi = geo.log_phi(profile, r)
        # u = w * exp(-scale); exp(-scale) underflows harmlessly at large r
        self.log_scale = half * self.log_phi
        with np.errstate(under="ignore"):
            self.inv_scale = np.exp(-self.log_scale)
        self.V_eff = np.asarray(geo.effective_potential(profile, r).V_eff)
        self.V_disc = _discrete_potential(self.V_eff, r, self.h, profile.n)
        self.log_w = geo.log_strichartz_weight(profile, r)
        self.lap_a, self.neg_bilap_a = (np.asarray(x) for x in geo.morawetz_weights(profile, r))
        self.morawetz_weight = np.asarray(geo.morawetz_density_weight(profile, r))
        for a in (self.r, self.log_phi, self.log_scale, self.inv_scale, self.V_eff, self.V_disc,
                  self.log_w, self.lap_a, self.neg_bilap_a, self.morawetz_weight):
            a.flags.writeable = False

    @property
    def n(self):
        return self.profile.n

    def key(self):
        return (self.profile.n, self.profile.k, self.r_max, self.m)

    def __repr__(self):
        return f"RadialGrid({self.profile}, r_max={self.r_max}, m={self.m})"

    def outer_mask(self, fraction=0.9):
        return self.r >= fraction * self.r_max

    def to_u(self, w):
        return w * self.inv_scale

    def from_u(self, u):
        return u * np.exp(self.log_scale)

    def quad(self, density):
        """|S^{n-1}| * h * sum(density), density already carries phi^{n-1}."""
        return self.area * self.h * float(np.sum(density))


def _discrete_potential(V_eff, r, h, n):
    """V_eff with its centrifugal part c/r^2, c = (n-1)(n-3)/4, replaced by
    D2(r^a)/r^a, a = (n-1)/2.

    The 3-point Laplacian then annihilates the regular solution r^a of
    -w'' + c/r^2 w exactly, which removes an O(1) relative error of u at
    the first few nodes (the continuum operator is scale invariant there,
    so refining h alone does not help).  Away from the origin the change
    is O(h^2/r^4).
    """
    a = 0.5 * (n - 1)
    c = a * (a - 1)
    j = np.rint(r / h)
    # (1 + 1/j)^a - 2 + (1 - 1/j)^a without cancellation; j = 1 gives 2^a - 2
    with np.errstate(divide="ignore"):
        d2 = np.expm1(a * np.log1p(1.0 / j)) + np.expm1(a * np.log1p(-1.0 / j))
    return np.asarray(V_eff) - c / r**2 + d2 / h**2


@dataclass
class FieldState:
    """Samples of w(t, r_i) on ``grid`` at time ``t``."""

    t: float
    w: np.ndarray
    grid: RadialGrid = field(repr=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=complex)
        if self.w.shape != (self.grid.m,):
            raise DomainError(f"field has shape {self.w.shape}, grid expects ({self.grid.m},)")

    def copy(self):
        return FieldState(self.t, self.w.copy(), self.grid)

    @property
    def u(self):
        return self.grid.to_u(self.w)


# ---------------------------------------------------------------------------
# representations and functionals


def representations(state: FieldState):
    """(u, u~, w) at the grid nodes."""
    g = state.grid
    w = state.w
    u = g.to_u(w)
    utilde = w / g.r ** (0.5 * (g.n - 1))
    return u, utilde, w.copy()


def mass(state: FieldState) -> float:
    return state.grid.quad(np.abs(state.w) ** 2)


def _grad_density(state: FieldState):
    """phi^{(n-1)/2} D_r u at the nodes, formed without large exponentials.

    D_r is the centered difference on u samples, one-sided at the ends.
    """
    g = state.grid
    w = state.w
    c = g.log_scale
    h = g.h
    out = np.empty_like(w)
    with np.errstate(under="ignore"):
        up = np.exp(c[1:-1] - c[2:])
        dn = np.exp(c[1:-1] - c[:-2])
        out[1:-1] = (w[2:] * up - w[:-2] * dn) / (2 * h)
        out[0] = (w[1] * np.exp(c[0] - c[1]) - w[0]) / h
        out[-1] = (w[-1] - w[-2] * np.exp(c[-1] - c[-2])) / h
    return out


def gradient_energy(state: FieldState) -> float:
    """|S^{n-1}| * sum |D_r u|^2 phi^{n-1} h."""
    return state.grid.quad(np.abs(_grad_density(state)) ** 2)


def h1_norm(state: FieldState) -> float:
    return math.sqrt(mass(state) + gradient_energy(state))


def potential_energy(state: FieldState, sigma: float) -> float:
    u_abs = np.abs(state.u)
    return state.grid.quad(np.abs(state.w) ** 2 * u_abs ** (2 * sigma)) / (sigma + 1)


def energy(state: FieldState, sigma: float | None) -> float:
    """Defocusing NLS energy; ``sigma=None`` drops the nonlinear term."""
    e = gradient_energy(state)
    if sigma is not None:
        if not sigma > 0:
            raise DomainError("sigma must be positive")
        e += potential_energy(state, sigma)
    return e


def linf_u(state: FieldState) -> float:
    return float(np.max(np.abs(state.u))) if state.grid.m else 0.0


def _weighted_Lq(grid: RadialGrid, abs_w, q: float) -> float:
    # |u|^q w_n^{q-2} phi^{n-1} = |w|^q phi^{(n-1)(1-q/2)} w_n^{q-2}
    nz = abs_w > 0
    if not np.any(nz):
        return 0.0
    logs = (
        q * np.log(abs_w[nz])
        + (grid.n - 1) * (1.0 - 0.5 * q) * grid.log_phi[nz]
        + (q - 2) * grid.log_w[nz]
    )
    total = math.log(grid.area) + math.log(grid.h) + logsumexp(logs)
    return math.exp(total / q)


def weighted_Lq_norm(state: FieldState, q: float) -> float:
    """Norm in L^q(w_n^{q-2} dOmega), summed in log space."""
    if not q >= 2:
        raise DomainError(f"q must be >= 2, got {q!r}")
    return _weighted_Lq(state.grid, np.abs(state.w), q)


def weighted_W1q_norm(state: FieldState, q: float) -> float:
    """||u|| + ||D_r u|| in L^q(w_n^{q-2} dOmega)."""
    if not q >= 2:
        raise DomainError(f"q must be >= 2, got {q!r}")
    return _weighted_Lq(state.grid, np.abs(state.w), q) + _weighted_Lq(
        state.grid, np.abs(_grad_density(state)), q
    )


def boundary_mass(state: FieldState, fraction=0.9) -> float:
    mask = state.grid.outer_mask(fraction)
    return state.grid.quad(np.abs(state.w[mask]) ** 2)


# ---------------------------------------------------------------------------
# initial data


def gaussian_data(grid: RadialGrid, amplitude: float, width: float) -> FieldState:
    """u(0, r) = A exp(-r^2 / (2 s^2))."""
    if amplitude < 0:
        raise DomainError("amplitude must be >= 0")
    if not width > 0:
        raise DomainError("width must be > 0")
    if width > grid.r_max / 8:
        raise DomainError(
            f"width {width} exceeds r_max/8 = {grid.r_max / 8}: boundary contamination"
        )
    if amplitude == 0:
        return FieldState(0.0, np.zeros(grid.m, complex), grid)
    with np.errstate(under="ignore"):
        w = amplitude * np.exp(grid.log_scale - grid.r**2 / (2 * width**2))
    return FieldState(0.0, w.astype(complex), grid)


def bump_data(grid: RadialGrid, r_lo: float = 1.0, r_hi: float = 3.0, amplitude: float = 1.0) -> FieldState:
    """Smooth compactly supported u = A exp(1 - 1/(1 - y^2)), y in (-1, 1) over [r_lo, r_hi]."""
    if not 0 <= r_lo < r_hi <= grid.r_max:
        raise DomainError("bump support must lie inside (0, r_max)")
    y = (2 * grid.r - (r_lo + r_hi)) / (r_hi - r_lo)
    inside = np.abs(y) < 1
    logu = np.full(grid.m, -np.inf)
    logu[inside] = 1.0 - 1.0 / (1.0 - y[inside] ** 2)
    with np.errstate(under="ignore"):
        w = amplitude * np.exp(logu + grid.log_scale)
    return FieldState(0.0, w.astype(complex), grid)


def field_from_u(grid: RadialGrid, u, t=0.0) -> FieldState:
    return FieldState(t, grid.from_u(np.asarray(u, dtype=complex)), grid)


# ---------------------------------------------------------------------------
# serialization


def _k_code(profile):
    return -1 if profile.hyperbolic else int(profile.k)


def state_to_bytes(state: FieldState) -> bytes:
    """Flat record: header (magic, version, n, k, m, r_max, t) + interleaved re/im."""
    g = state.grid
    head = _HEADER.pack(_MAGIC, _VERSION, g.n, _k_code(g.profile), g.m, g.r_max, state.t)
    body = np.empty(2 * g.m, dtype="<f8")
    body[0::2] = state.w.real
    body[1::2] = state.w.imag
    return head + body.tobytes()


def state_from_bytes(blob: bytes, grid: RadialGrid | None = None) -> FieldState:
    magic, version, n, kc, m, r_max, t = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != _VERSION:
        raise DomainError("not a radnls state record")
    profile = ManifoldProfile(n, geo.INFINITY if kc < 0 else kc)
    if grid is None:
        grid = RadialGrid(profile, r_max, m)
    elif grid.key() != (profile.n, profile.k, r_max, m):
        raise DomainError("state record does not match the supplied grid")
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=2 * m)
    return FieldState(t, body[0::2] + 1j * body[1::2], grid)


def save_state(path, state: FieldState):
    with open(path, "wb") as fh:
        fh.write(state_to_bytes(state))


def load_state(path, grid=None) -> FieldState:
    with open(path, "rb") as fh:
        return state_from_bytes(fh.read(), grid)


def state_to_csv(state: FieldState) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["r", "w_re", "w_im", "abs_u"])
    u = np.abs(state.u)
    for r, w, a in zip(state.grid.r, state.w, u):
        wr.writerow([repr(float(r)), repr(float(w.real)), repr(float(w.imag)), repr(float(a))])
    return buf.getvalue()
