"""Functionals along trajectories: Morawetz and virial quantities,
scattering defects, the asymptotic profile, phase fits and the
long-range pairing.

Per-sample scalars are produced by ``sample_scalars``; ``SeriesRecorder``
collects them online as an evolve observer, so long runs need not keep
every snapshot.  Time integrals use the trapezoid rule over samples.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import geometry as geo
from .errors import DomainError, NumericalError
from .evolution import Integrator, Trajectory
from .grid import (
    FieldState,
    RadialGrid,
    _grad_density,
    energy,
    h1_norm,
    linf_u,
    mass,
    weighted_W1q_norm,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("t", "mass", "energy", "h1", "linf_u", "morawetz_cum", "virial_lhs", "virial_rhs", "defect", "leak")


def _fnum(x):
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# per-sample scalars


def sample_scalars(state: FieldState, sigma: float | None) -> dict:
    """All instantaneous functionals of one snapshot."""
    g = state.grid
    w = state.w
    aw2 = np.abs(w) ** 2
    grad = _grad_density(state)
    out = {
        "t": state.t,
        "mass": g.quad(aw2),
        "energy": energy(state, sigma),
        "h1": h1_norm(state),
        "linf_u": linf_u(state),
        # Morawetz integrands: normalized weight and the bare 1/r^3 comparison
        "morawetz_density": g.quad(g.morawetz_weight * aw2),
        "r3_density": g.quad(aw2 / g.r**3),
        # virial left side: (-Delta^2 a)|u|^2/2 + sigma/(sigma+1)|u|^{2sigma+2} Delta a
        "virial_linear": 0.5 * g.quad(g.neg_bilap_a * aw2),
        "virial_nonlinear": 0.0,
        # right side with |grad a| = 1
        "virial_rhs": g.quad(np.abs(np.conj(w) * grad)),
    }
    if sigma is not None:
        u_abs = np.abs(state.u)
        out["virial_nonlinear"] = sigma / (sigma + 1) * g.quad(aw2 * u_abs ** (2 * sigma) * g.lap_a)
    n = g.n
    if n >= 3:
        qs = 2 * n / (n - 2)
        out["X_integrand"] = weighted_W1q_norm(state, qs) ** 2
    else:
        out["X_integrand"] = math.nan
    return out


class SeriesRecorder:
    """Evolve observer accumulating ``sample_scalars`` rows."""

    def __init__(self, sigma: float | None):
        self.sigma = sigma
        self.rows: list[dict] = []

    def __call__(self, state: FieldState):
        self.rows.append(sample_scalars(state, self.sigma))

    def series(self) -> dict:
        if not self.rows:
            return {}
        return {key: np.array([r[key] for r in self.rows]) for key in self.rows[0]}


def _series(source, sigma=None) -> dict:
    if isinstance(source, SeriesRecorder):
        return source.series()
    if isinstance(source, Trajectory):
        if len(source.states) != len(source.times):
            raise DomainError("trajectory does not store every sample; use a SeriesRecorder")
        rec = SeriesRecorder(source.sigma if sigma is None else sigma)
        for s in source.states:
            rec(s)
        return rec.series()
    if isinstance(source, dict):
        return source
    raise TypeError(f"cannot read a time series from {type(source).__name__}")


def _window_mask(t, window):
    lo, hi = window
    return (t >= lo - 1e-9) & (t <= hi + 1e-9)


def _variation(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan
    top = np.max(np.abs(x))
    return float((np.max(x) - np.min(x)) / top) if top > 0 else 0.0


# ---------------------------------------------------------------------------
# Morawetz and virial


@dataclass
class MorawetzResult:
    t: np.ndarray
    integrand: np.ndarray
    cum: np.ndarray
    r3_cum: np.ndarray
    h1sq_sup: np.ndarray
    bound_ratio: np.ndarray
    saturation_fraction: float
    last_quarter_increase: float
    saturated: bool
    flags: list = field(default_factory=list)

    def value_at(self, t):
        return float(np.interp(t, self.t, self.cum))

    def relative_increase(self, t_a, t_b):
        """(M(t_b) - M(t_a)) / M(t_b)."""
        mb = self.value_at(t_b)
        return (mb - self.value_at(t_a)) / mb if mb > 0 else 0.0

    def ratio_variation(self, window):
        return _variation(self.bound_ratio[_window_mask(self.t, window)])

    def to_dict(self):
        return {
            "M_T": _fnum(self.cum[-1]) if self.cum.size else 0.0,
            "r3_T": _fnum(self.r3_cum[-1]) if self.r3_cum.size else 0.0,
            "bound_ratio_T": _fnum(self.bound_ratio[-1]) if self.bound_ratio.size else 0.0,
            "bound_ratio_max": _fnum(np.max(self.bound_ratio)) if self.bound_ratio.size else 0.0,
            "saturation_fraction": self.saturation_fraction,
            "last_quarter_increase": _fnum(self.last_quarter_increase),
            "saturated": self.saturated,
            "flags": list(self.flags),
        }


def morawetz_accumulate(source, saturation_fraction: float = 0.02, n=None) -> MorawetzResult:
    """M(T) = int_0^T int weight |u|^2 dOmega dt and M(T) / sup_t ||u||_{H^1}^2."""
    s = _series(source)
    t = np.asarray(s["t"], float)
    dens = np.asarray(s["morawetz_density"], float)
    if np.any(dens < 0):
        raise NumericalError("negative Morawetz integrand")
    cum = cumulative_trapezoid(dens, t, initial=0.0) if t.size > 1 else np.zeros_like(t)
    r3 = cumulative_trapezoid(s["r3_density"], t, initial=0.0) if t.size > 1 else np.zeros_like(t)
    h1sq = np.maximum.accumulate(np.asarray(s["h1"], float) ** 2) if t.size else t
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(h1sq > 0, cum / np.where(h1sq > 0, h1sq, 1.0), 0.0)
    inc = 0.0
    if t.size > 1 and cum[-1] > 0:
        t_q = t[0] + 0.75 * (t[-1] - t[0])
        inc = (cum[-1] - float(np.interp(t_q, t, cum))) / cum[-1]
    flags = []
    if n is None and isinstance(source, Trajectory):
        n = source.grid.n
    if n == 3:
        flags.append("n=3: (n-1)(n-3) vanishes, raw weight reported")
    return MorawetzResult(t, dens, cum, r3, h1sq, ratio, saturation_fraction, inc,
                          bool(inc < saturation_fraction), flags)


@dataclass
class VirialReport:
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    constant: np.ndarray
    nonlinear_nonnegative: bool

    def constant_variation(self, window):
        return _variation(self.constant[_window_mask(self.t, window)])

    def to_dict(self):
        return {
            "lhs_T": _fnum(self.lhs[-1]) if self.lhs.size else 0.0,
            "rhs_T": _fnum(self.rhs[-1]) if self.rhs.size else 0.0,
            "C_T": _fnum(self.constant[-1]) if self.constant.size else 0.0,
            "nonlinear_nonnegative": self.nonlinear_nonnegative,
        }


def virial_check(source, sigma=None) -> VirialReport:
    """Both sides of the virial inequality with a(x) = r.

    lhs(T) = int_0^T [int (-Delta^2 a)|u|^2/2 + sigma/(sigma+1) int |u|^{2sigma+2} Delta a],
    rhs(T) = sup_{t<=T} int |conj(u) d_r u|; C(T) = lhs/rhs is reported.
    """
    s = _series(source, sigma)
    t = np.asarray(s["t"], float)
    nl = np.asarray(s["virial_nonlinear"], float)
    integrand = np.asarray(s["virial_linear"], float) + nl
    lhs = cumulative_trapezoid(integrand, t, initial=0.0) if t.size > 1 else np.zeros_like(t)
    rhs = np.maximum.accumulate(np.asarray(s["virial_rhs"], float)) if t.size else t
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    return VirialReport(t, lhs, rhs, c, bool(np.all(nl >= 0)))


# ---------------------------------------------------------------------------
# scattering defect


@dataclass
class DefectResult:
    t1: float
    t2: float
    value: float
    reliable: bool

    @property
    def status(self):
        return "OK" if self.reliable else "UNRELIABLE"

    def to_dict(self):
        return {"t1": self.t1, "t2": self.t2, "defect": _fnum(self.value), "status": self.status}


class Backpropagator:
    """Caches e^{-it H} u(t) for snapshots of one trajectory."""

    def __init__(self, traj: Trajectory, solver_tol: float = 1e-10):
        self.traj = traj
        self.free = Integrator(traj.grid, traj.dt, nonlinear=False, solver_tol=solver_tol)
        self._cache: dict[float, FieldState] = {}

    def __call__(self, t: float) -> FieldState:
        key = round(t / self.traj.dt)
        if key not in self._cache:
            self._cache[key] = self.free.free_backpropagate(self.traj.at(t), 0.0)
        return self._cache[key]


def scattering_defect(traj: Trajectory, t1: float, t2: float, back: Backpropagator | None = None) -> DefectResult:
    """H^1 distance between the free back-propagations of u(t1) and u(t2)."""
    if not (0 <= t1 <= t2):
        raise DomainError("need 0 <= t1 <= t2")
    if t1 == t2:
        return DefectResult(t1, t2, 0.0, True)
    back = back or Backpropagator(traj)
    a, b = back(t1), back(t2)
    d = h1_norm(FieldState(0.0, b.w - a.w, traj.grid))
    reliable = traj.leak_until(t2) <= traj.leak_threshold and (
        traj.aborted is None or traj.aborted.t > t2
    )
    return DefectResult(t1, t2, d, bool(reliable))


@dataclass
class PowerFit:
    """Least-squares fit log y = c - beta log t."""

    beta: float
    intercept: float
    residual: float
    window: tuple
    npts: int

    def to_dict(self):
        return {"exponent": _fnum(self.beta), "residual": _fnum(self.residual),
                "window": list(self.window), "npts": self.npts}


def fit_power_decay(t, y, window=None) -> PowerFit:
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if window is None:
        window = (t[-1] / 2, t[-1])
    sel = _window_mask(t, window) & (y > 0) & (t > 0)
    if np.count_nonzero(sel) < 2:
        return PowerFit(math.nan, math.nan, math.nan, tuple(window), int(np.count_nonzero(sel)))
    X, Y = np.log(t[sel]), np.log(y[sel])
    coef, res, *_ = np.polyfit(X, Y, 1, full=True)
    resid = float(np.sqrt(res[0] / X.size)) if res.size else 0.0
    return PowerFit(float(-coef[0]), float(coef[1]), resid, tuple(float(x) for x in window), int(X.size))


@dataclass
class DefectSequence:
    items: list
    fit: PowerFit

    def ratios(self):
        v = [d.value for d in self.items]
        return [v[i] / v[i + 1] if v[i + 1] > 0 else math.inf for i in range(len(v) - 1)]

    def to_dict(self):
        return {"pairs": [d.to_dict() for d in self.items], "ratios": [_fnum(x) for x in self.ratios()],
                "decay": self.fit.to_dict()}


def defect_sequence(traj: Trajectory, times, back: Backpropagator | None = None) -> DefectSequence:
    """defect(T, 2T)-style sequence over consecutive entries of ``times``."""
    times = sorted(float(x) for x in times)
    back = back or Backpropagator(traj)
    items = [scattering_defect(traj, a, b, back) for a, b in zip(times[:-1], times[1:])]
    fit = fit_power_decay([d.t2 for d in items], [d.value for d in items],
                          window=(times[0], times[-1])) if len(items) >= 2 else PowerFit(
        math.nan, math.nan, math.nan, (times[0], times[-1]) if times else (), len(items))
    return DefectSequence(items, fit)


# ---------------------------------------------------------------------------
# asymptotic profile and phase


def _w_at(state: FieldState, r):
    """Complex w at radii r by linear interpolation; w(0) = 0, zero past r_max."""
    g = state.grid
    rr = np.concatenate(([0.0], g.r, [g.r_max]))
    ww = np.concatenate(([0j], state.w, [0j]))
    return np.interp(r, rr, ww.real, right=0.0) + 1j * np.interp(r, rr, ww.imag, right=0.0)


@dataclass
class ProfileResult:
    t: float
    rho: np.ndarray
    F: np.ndarray
    unitarity_defect: float
    truncated: bool
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {"t": self.t, "unitarity_defect": _fnum(self.unitarity_defect),
                "truncated": self.truncated, "flags": self.flags}


def default_rho_grid(rho_max=6.0, n_rho=600):
    return np.linspace(rho_max / n_rho, rho_max, n_rho)


def extract_profile(state: FieldState, rho=None, mass0: float | None = None, t_min: float = 5.0) -> ProfileResult:
    """F(rho) = t^{n/2} (phi(t rho)/(t rho))^{(n-1)/2} |u(t, t rho)|."""
    t = state.t
    if t < t_min:
        raise DomainError(f"profile extraction needs t >= {t_min}")
    g = state.grid
    rho = default_rho_grid() if rho is None else np.asarray(rho, float)
    flags = []
    truncated = bool(rho[-1] * t > g.r_max)
    if truncated:
        warnings.warn(f"rho grid reaches {rho[-1] * t:.4g} > r_max = {g.r_max} at t={t}; truncated")
        flags.append("truncated")
    r = t * rho
    F = t ** (0.5 * g.n) * np.abs(_w_at(state, r)) / r ** (0.5 * (g.n - 1))
    F[r > g.r_max] = 0.0
    m0 = mass(state) if mass0 is None else mass0
    if m0 > 0:
        norm = g.area * trapezoid(F**2 * rho ** (g.n - 1), rho)
        ud = abs(norm - m0) / m0
    else:
        ud = math.nan
        flags.append("zero state: unitarity defect undefined")
    return ProfileResult(t, rho, F, ud, truncated, flags)


def profile_difference(a: ProfileResult, b: ProfileResult) -> float:
    """sup |F_a - F_b| / sup F_b on a common rho grid."""
    if a.rho.shape != b.rho.shape or not np.allclose(a.rho, b.rho):
        raise DomainError("profiles live on different rho grids")
    top = float(np.max(np.abs(b.F)))
    return float(np.max(np.abs(a.F - b.F)) / top) if top > 0 else math.nan


@dataclass
class PhaseFit:
    lambda_fit: float
    residual: float
    rho: float
    window: tuple
    candidates: dict
    matched: str | None

    def to_dict(self):
        return {"lambda_fit": _fnum(self.lambda_fit), "residual": _fnum(self.residual), "rho": self.rho,
                "window": list(self.window), "candidates": self.candidates, "matched": self.matched}


def fit_asymptotic_phase(states, rho: float | None = None, window=None, match_tol: float = 0.1,
                         max_jump: float = 0.75 * math.pi) -> PhaseFit:
    """Slope of arg w(t, rho t) after removing exp(i rho^2 t / 4).

    ``states`` are snapshots of one free trajectory (a Trajectory works).
    """
    if isinstance(states, Trajectory):
        states = states.states
    states = sorted(states, key=lambda s: s.t)
    if window is not None:
        states = [s for s in states if window[0] - 1e-9 <= s.t <= window[1] + 1e-9]
    if len(states) < 3:
        raise DomainError("phase fit needs at least three snapshots in the window")
    g = states[0].grid
    last = states[-1]
    if rho is None:
        prof = extract_profile(last, default_rho_grid(min(6.0, g.r_max / last.t)), t_min=0.0)
        rho = float(prof.rho[np.argmax(prof.F)])
    t = np.array([s.t for s in states])
    z = np.array([_w_at(s, rho * s.t) * np.exp(-1j * rho**2 * s.t / 4) for s in states])
    if np.any(np.abs(z) == 0):
        raise NumericalError(f"field vanishes at rho={rho}; choose another rho")
    raw = np.angle(z)
    jumps = np.angle(np.exp(1j * np.diff(raw)))
    if np.any(np.abs(jumps) > max_jump):
        raise NumericalError(
            f"phase unwrapping unsafe at rho={rho}: jump {np.max(np.abs(jumps)):.3f} rad between "
            "samples; shrink the sampling interval"
        )
    ph = raw[0] + np.concatenate(([0.0], np.cumsum(jumps)))
    coef, res, *_ = np.polyfit(t, ph, 1, full=True)
    resid = float(np.sqrt(res[0] / t.size)) if res.size else 0.0
    lam = -float(coef[0])
    n = g.n
    cands = {"(n-1)/2": (n - 1) / 2, "(n-1)^2/4": (n - 1) ** 2 / 4}
    if g.profile.euclidean:
        cands = {"0": 0.0}
    hits = [k for k, v in cands.items() if abs(lam - v) <= match_tol]
    matched = min(hits, key=lambda k: abs(lam - cands[k])) if hits else None
    return PhaseFit(lam, resid, rho, (float(t[0]), float(t[-1])), cands, matched)


# ---------------------------------------------------------------------------
# long-range pairing


class PairingTracker:
    """Evolve observer computing D(t) = |<U_0(t) psi, |u|^{2 sigma} u(t)>|.

    psi is advanced by the free flow of its own integrator on the same grid.
    """

    def __init__(self, grid: RadialGrid, dt: float, sigma: float, psi: FieldState):
        self.sigma = sigma
        self.free = Integrator(grid, dt, nonlinear=False)
        self.psi = psi.copy()
        self.t: list[float] = []
        self.D: list[float] = []

    def __call__(self, state: FieldState):
        if state.t > self.psi.t + 0.5 * self.free.dt:
            self.psi = self.free.free_evolve(self.psi, state.t)
        g = state.grid
        u_abs = np.abs(state.u)
        val = np.sum(np.conj(self.psi.w) * u_abs ** (2 * self.sigma) * state.w)
        self.t.append(state.t)
        self.D.append(float(abs(val) * g.area * g.h))


@dataclass
class LongrangeFit:
    fit: PowerFit
    predicted: float
    undetermined: bool
    regime: str

    @property
    def beta(self):
        return self.fit.beta

    def to_dict(self):
        d = self.fit.to_dict()
        d.update(predicted=_fnum(self.predicted), undetermined=self.undetermined, regime=self.regime)
        return d


def longrange_indicator(t, D, sigma: float, profile, mass0: float, window=None,
                        noise_floor: float = 1e-12) -> LongrangeFit:
    """Fit D(t) ~ t^{-beta} on the window (default: last two octaves)."""
    t = np.asarray(t, float)
    D = np.asarray(D, float)
    N = geo.scattering_dimension(profile)
    predicted = N * sigma if math.isfinite(N) else math.inf
    if window is None:
        window = (t[-1] / 4, t[-1])
    sel = _window_mask(t, window)
    if mass0 <= 0 or not np.any(D[sel] > noise_floor * mass0):
        return LongrangeFit(PowerFit(math.nan, math.nan, math.nan, tuple(window), 0), predicted, True,
                            "UNDETERMINED")
    fit = fit_power_decay(t, D, window)
    regime = "short-range" if fit.beta > 1 else "long-range"
    return LongrangeFit(fit, predicted, False, regime)


# ---------------------------------------------------------------------------
# report


@dataclass
class DiagnosticsReport:
    config: dict
    series: dict
    morawetz: MorawetzResult | None = None
    virial: VirialReport | None = None
    defects: DefectSequence | None = None
    profiles: list = field(default_factory=list)
    phase: PhaseFit | None = None
    longrange: LongrangeFit | None = None
    leak: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def columns(self) -> dict:
        t = np.asarray(self.series.get("t", []), float)
        nan = np.full(t.shape, np.nan)
        cols = {c: nan for c in CSV_COLUMNS}
        cols["t"] = t
        for c in ("mass", "energy", "h1", "linf_u"):
            if c in self.series:
                cols[c] = np.asarray(self.series[c], float)
        if self.morawetz is not None:
            cols["morawetz_cum"] = self.morawetz.cum
        if self.virial is not None:
            cols["virial_lhs"] = self.virial.lhs
            cols["virial_rhs"] = self.virial.rhs
        if self.defects is not None:
            d = nan.copy()
            for item in self.defects.items:
                d[np.argmin(np.abs(t - item.t2))] = item.value
            cols["defect"] = d
        if "leak" in self.leak:
            cols["leak"] = np.asarray(self.leak["leak"], float)
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        lines = [",".join(CSV_COLUMNS)]
        for i in range(len(cols["t"])):
            lines.append(",".join("" if not math.isfinite(v) else repr(float(v))
                                  for v in (cols[c][i] for c in CSV_COLUMNS)))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "morawetz": self.morawetz.to_dict() if self.morawetz else None,
            "virial": self.virial.to_dict() if self.virial else None,
            "defects": self.defects.to_dict() if self.defects else None,
            "profiles": [p.to_dict() for p in self.profiles],
            "phase": self.phase.to_dict() if self.phase else None,
            "longrange": self.longrange.to_dict() if self.longrange else None,
            "leak": {k: v for k, v in self.leak.items() if k != "leak"},
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return _fnum(x)
    if isinstance(x, np.ndarray):
        return [_fnum(v) for v in x.ravel()]
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


__all__ = [
    "CSV_COLUMNS", "SeriesRecorder", "sample_scalars", "morawetz_accumulate", "virial_check",
    "scattering_defect", "defect_sequence", "Backpropagator", "extract_profile", "profile_difference", "default_rho_grid",
    "fit_asymptotic_phase", "PairingTracker", "longrange_indicator", "fit_power_decay",
    "DiagnosticsReport",
]
