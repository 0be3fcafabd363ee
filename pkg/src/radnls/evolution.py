"""Time integration of the reduced radial NLS

    i w_t = -w_rr + V_eff(r) w + |u|^{2 sigma} w,   u = phi^{-(n-1)/2} w,

by Crank-Nicolson for the linear part and Strang splitting with the
exact phase flow of the nonlinearity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DomainError, DomainTooSmall, NumericalError
from .grid import FieldState, RadialGrid, boundary_mass, mass
from .tridiag import CayleyOperator, nonlinear_phase

log = logging.getLogger(__name__)

MODES = ("nonlinear", "free")


def _steps(span, dt, what):
    x = span / dt
    n = round(x)
    if n < 0 or abs(x - n) > 1e-9 * max(1.0, abs(x)):
        raise DomainError(f"{what} = {span} is not an integer multiple of dt = {dt}")
    return int(n)


@dataclass
class Trajectory:
    """Uniformly sampled snapshots of one run."""

    grid: RadialGrid
    dt: float
    sample_every: float
    mode: str
    sigma: float | None
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    leak: list = field(default_factory=list)
    mass0: float = 0.0
    leak_threshold: float = math.inf
    aborted: DomainTooSmall | None = None

    def __len__(self):
        return len(self.times)

    @property
    def t_end(self):
        return self.times[-1] if self.times else math.nan

    def at(self, t: float) -> FieldState:
        """Stored snapshot at time t (within half a step)."""
        for s in self.states:
            if abs(s.t - t) <= 0.5 * self.dt:
                return s
        raise KeyError(f"no stored snapshot at t={t}")

    def has(self, t: float) -> bool:
        return any(abs(s.t - t) <= 0.5 * self.dt for s in self.states)

    def leak_until(self, t: float) -> float:
        """Largest leak fraction sampled up to time t."""
        vals = [lk for tt, lk in zip(self.times, self.leak) if tt <= t + 0.5 * self.dt]
        return max(vals) if vals else 0.0


class Integrator:
    """Crank-Nicolson / Strang integrator on one grid.

    H = -D2 + diag(V_disc) with the 3-point Dirichlet second difference; see
    ``RadialGrid.V_disc`` for the near-origin potential.
    """

    def __init__(
        self,
        grid: RadialGrid,
        dt: float = 1e-3,
        sigma: float | None = None,
        nonlinear: bool = True,
        solver_tol: float = 1e-10,
        leak_threshold: float = 1e-4,
    ):
        if not dt > 0:
            raise DomainError("dt must be positive")
        if nonlinear and not (sigma is not None and sigma > 0):
            raise DomainError("nonlinear integration needs sigma > 0")
        self.grid = grid
        self.dt = float(dt)
        self.sigma = sigma
        self.nonlinear = nonlinear
        self.solver_tol = solver_tol
        self.leak_threshold = leak_threshold
        h2 = grid.h**2
        self._diag_h = 2.0 / h2 + np.asarray(grid.V_disc)
        self._off_h = -1.0 / h2
        self._ops: dict[float, CayleyOperator] = {}

    # -- operators ---------------------------------------------------------

    def hamiltonian_dense(self):
        """Dense H, for tests and small grids only."""
        m = self.grid.m
        H = np.diag(self._diag_h)
        i = np.arange(m - 1)
        H[i, i + 1] = H[i + 1, i] = self._off_h
        return H

    def cayley(self, dt: float) -> CayleyOperator:
        op = self._ops.get(dt)
        if op is None:
            op = CayleyOperator(self._diag_h, self._off_h, 0.5 * dt)
            self._ops[dt] = op
        return op

    def _checked(self, w, dt, t):
        op = self.cayley(dt)
        rhs = op.rhs(w)
        out = op.solve(rhs)
        res = op.residual(out, rhs)
        if not np.all(np.isfinite(out)) or res > self.solver_tol:
            raise NumericalError(
                f"tridiagonal solve failed at t={t:.6g} (dt={dt}): residual {res:.3e} "
                f"> solver_tol {self.solver_tol:.1e}"
            )
        return out

    # -- single steps --------------------------------------------------------

    def linear_step(self, state: FieldState, dt: float | None = None) -> FieldState:
        dt = self.dt if dt is None else dt
        return FieldState(state.t + dt, self._checked(state.w, dt, state.t), state.grid)

    def nonlinear_step(self, state: FieldState, dt: float | None = None) -> FieldState:
        dt = self.dt if dt is None else dt
        if self.sigma is None:
            raise DomainError("nonlinear step needs sigma")
        w = state.w.copy()
        nonlinear_phase(w, self.grid.inv_scale, self.sigma, dt)
        return FieldState(state.t + dt, w, state.grid)

    # -- runs -----------------------------------------------------------------

    def advance(self, state: FieldState, nsteps: int, mode: str = "nonlinear", dt: float | None = None) -> FieldState:
        """Advance by nsteps; the last step goes through the residual check."""
        dt = self.dt if dt is None else dt
        if mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        if nsteps <= 0:
            return state.copy()
        w = state.w.copy()
        op = self.cayley(dt)
        if mode == "free":
            op.run(w, nsteps - 1)
            w = self._checked(w, dt, state.t + (nsteps - 1) * dt)
        else:
            if self.sigma is None:
                raise DomainError("nonlinear mode needs sigma")
            op.strang(w, nsteps - 1, self.grid.inv_scale, self.sigma, dt)
            nonlinear_phase(w, self.grid.inv_scale, self.sigma, 0.5 * dt)
            w = self._checked(w, dt, state.t + (nsteps - 1) * dt)
            nonlinear_phase(w, self.grid.inv_scale, self.sigma, 0.5 * dt)
        if not np.all(np.isfinite(w)):
            raise NumericalError(f"non-finite field after t={state.t + nsteps * dt:.6g}")
        return FieldState(state.t + nsteps * dt, w, state.grid)

    def leak(self, state: FieldState, mass0: float) -> float:
        if mass0 <= 0:
            return 0.0
        return boundary_mass(state) / mass0

    def evolve(
        self,
        state: FieldState,
        t_final: float,
        sample_every: float,
        mode: str | None = None,
        store: bool | Iterable[float] = True,
        observers: Iterable[Callable[[FieldState], None]] = (),
        raise_on_leak: bool = True,
    ) -> Trajectory:
        """Run to t_final, sampling every ``sample_every``.

        ``store`` is True (keep all samples), False, or an iterable of
        times to keep.  The leak monitor runs at every sample.
        """
        mode = mode or ("nonlinear" if self.nonlinear else "free")
        if not t_final > state.t:
            raise DomainError("t_final must exceed the current time")
        per = _steps(sample_every, self.dt, "sample_every")
        if per == 0:
            raise DomainError("sample_every must be at least one step")
        nsamp = _steps(t_final - state.t, sample_every, "t_final - t")
        keep_times = None if isinstance(store, bool) else sorted(float(x) for x in store)
        observers = list(observers)
        traj = Trajectory(self.grid, self.dt, sample_every, mode, self.sigma)
        traj.mass0 = mass(state)
        traj.leak_threshold = self.leak_threshold
        t0 = state.t

        def record(s):
            traj.times.append(s.t)
            lk = self.leak(s, traj.mass0)
            traj.leak.append(lk)
            keep = store is True or (
                keep_times is not None and any(abs(s.t - x) <= 0.5 * self.dt for x in keep_times)
            )
            if keep:
                traj.states.append(s)
            for ob in observers:
                ob(s)
            if lk > self.leak_threshold:
                err = DomainTooSmall(s.t, lk, self.leak_threshold)
                traj.aborted = err
                if raise_on_leak:
                    raise err
                return False
            return True

        cur = state.copy()
        if not record(cur):
            return traj
        for j in range(1, nsamp + 1):
            cur = self.advance(cur, per, mode)
            cur.t = t0 + j * per * self.dt
            if not record(cur):
                break
        return traj

    def free_backpropagate(self, state: FieldState, t0: float = 0.0) -> FieldState:
        """Apply the inverse free Cayley flow from state.t back to t0."""
        nsteps = _steps(state.t - t0, self.dt, "state.t - t0")
        if nsteps == 0:
            return FieldState(t0, state.w.copy(), state.grid)
        out = self.advance(state, nsteps, "free", dt=-self.dt)
        out.t = t0
        return out

    def free_evolve(self, state: FieldState, t: float) -> FieldState:
        nsteps = _steps(t - state.t, self.dt, "t - state.t")
        out = self.advance(state, nsteps, "free")
        out.t = t
        return out
