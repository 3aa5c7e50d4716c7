"""IMEX time integration of the regularized boundary-layer system.

Normal diffusion and the optional tangential viscosity are implicit: each
tangential Fourier mode solves one tridiagonal system in z whose diagonal is
shifted by epsilon |k|^2.  Advection, pressure and forcing are explicit
(Adams-Bashforth 2 after a forward Euler start).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid
from .state import FlowState, OuterFlow, refresh_derived

SCHEMES = ("imex-cn-ab2", "imex-euler")


class SolverError(RuntimeError):
    """Numerical failure (blow-up, non-finite state, singular solve)."""


class CFLError(SolverError):
    def __init__(self, dt, dt_max):
        super().__init__(f"dt={dt:g} violates the advective CFL bound; suggested dt <= {dt_max:g}")
        self.dt_max = dt_max


@dataclass
class SolverConfig:
    dt: float
    t_end: float
    epsilon: float = 0.0
    scheme: str = "imex-cn-ab2"
    cfl_safety: float = 0.9
    blowup_factor: float = 1e6
    check_cfl: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not (self.t_end >= 0):
            raise ValueError("t_end must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not (0 < self.cfl_safety <= 1):
            raise ValueError("cfl_safety must lie in (0, 1]")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def thomas_factor(a, b, c):
    """Forward-elimination factors of batched tridiagonal systems.

    ``a``, ``b``, ``c`` have shape (..., n): sub-, main and super-diagonals
    (``a[..., 0]`` and ``c[..., -1]`` unused).
    """
    n = b.shape[-1]
    cp = np.zeros_like(b)
    den = np.zeros_like(b)
    den[..., 0] = b[..., 0]
    if np.any(den[..., 0] == 0):
        raise SolverError("singular tridiagonal system")
    cp[..., 0] = c[..., 0] / den[..., 0]
    for j in range(1, n):
        den[..., j] = b[..., j] - a[..., j] * cp[..., j - 1]
        if np.any(den[..., j] == 0):
            raise SolverError("singular tridiagonal system")
        cp[..., j] = c[..., j] / den[..., j] if j < n - 1 else 0.0
    return a, cp, den


def thomas_solve(factors, d):
    a, cp, den = factors
    n = d.shape[-1]
    y = np.empty_like(d)
    y[..., 0] = d[..., 0] / den[..., 0]
    for j in range(1, n):
        y[..., j] = (d[..., j] - a[..., j] * y[..., j - 1]) / den[..., j]
    for j in range(n - 2, -1, -1):
        y[..., j] -= cp[..., j] * y[..., j + 1]
    return y


class ImplicitOperator:
    """(I - theta dt A) with A = D2 + epsilon (dxx + dyy) and Dirichlet rows."""

    def __init__(self, grid: Grid, dt: float, epsilon: float, theta: float):
        self.grid = grid
        D2 = grid.dz_matrix(2)
        n = grid.nz
        lo = np.zeros(n)
        di = np.zeros(n)
        up = np.zeros(n)
        i = np.arange(1, n - 1)
        lo[i], di[i], up[i] = D2[i, i - 1], D2[i, i], D2[i, i + 1]
        k2 = (grid.kx ** 2 + grid.ky ** 2)[..., 0]
        shape = k2.shape + (n,)
        a = np.broadcast_to(-theta * dt * lo, shape).astype(complex)
        c = np.broadcast_to(-theta * dt * up, shape).astype(complex)
        b = 1.0 - theta * dt * (di[None, None, :] - epsilon * k2[..., None])
        b = b.astype(complex)
        a, b, c = a.copy(), b.copy(), c.copy()
        for arr, val in ((a, 0.0), (c, 0.0)):
            arr[..., 0] = val
            arr[..., -1] = val
        b[..., 0] = 1.0
        b[..., -1] = 1.0
        self.factors = thomas_factor(a, b, c)

    def solve(self, rhs_hat):
        return thomas_solve(self.factors, rhs_hat)


def apply_A(grid: Grid, f: np.ndarray, epsilon: float) -> np.ndarray:
    out = grid.dz(f, 2)
    if epsilon:
        fh = grid.fft(f)
        out = out - epsilon * grid.ifft(fh * (grid.kx ** 2 + grid.ky ** 2))
    return out


def cfl_limit(state: FlowState, cfg: SolverConfig) -> float:
    g = state.grid
    dz_min = float(np.min(np.diff(g.z)))
    lim = math.inf
    for vel, h in ((state.u, g.dx), (state.v, g.dy), (state.w, dz_min)):
        m = float(np.max(np.abs(vel)))
        if m > 0:
            lim = min(lim, h / m)
    return cfg.cfl_safety * lim


Forcing = Callable[[float], tuple]
Boundary = Callable[[float], tuple]


class Stepper:
    """Holds the implicit factorizations and the previous explicit term."""

    def __init__(self, grid: Grid, outer: OuterFlow, cfg: SolverConfig,
                 forcing: Forcing | None = None, boundary: Boundary | None = None):
        self.grid, self.outer, self.cfg = grid, outer, cfg
        self.forcing, self.boundary = forcing, boundary
        self.prev = None
        eps = cfg.epsilon
        if cfg.scheme == "imex-cn-ab2":
            self.op_start = ImplicitOperator(grid, cfg.dt, eps, 0.5)
            self.op = self.op_start
        else:
            self.op = self.op_start = ImplicitOperator(grid, cfg.dt, eps, 1.0)

    def explicit(self, s: FlowState):
        g = self.grid
        px, py = self.outer.pressure_gradient(s.t, g)
        nu = -(s.u * g.dxy(s.u, (1, 0)) + s.v * g.dxy(s.u, (0, 1)) + s.w * s.psi) - px[..., None]
        nv = -(s.u * g.dxy(s.v, (1, 0)) + s.v * g.dxy(s.v, (0, 1)) + s.w * s.eta) - py[..., None]
        if self.forcing is not None:
            fu, fv = self.forcing(s.t)
            nu = nu + fu
            nv = nv + fv
        return nu, nv

    def bc(self, t: float):
        if self.boundary is not None:
            return self.boundary(t)
        g = self.grid
        U, V = self.outer.trace("U", t, g), self.outer.trace("V", t, g)
        z = np.zeros((g.nx, g.ny))
        return z, z, U, V

    def step(self, s: FlowState) -> FlowState:
        cfg, g = self.cfg, self.grid
        if cfg.check_cfl:
            lim = cfl_limit(s, cfg)
            if cfg.dt > lim * (1 + 1e-12):
                raise CFLError(cfg.dt, lim)
        dt, eps = cfg.dt, cfg.epsilon
        nu, nv = self.explicit(s)
        if cfg.scheme == "imex-euler":
            theta = 1.0
            eu, ev = nu, nv
        else:
            theta = 0.5
            if self.prev is None:
                eu, ev = nu, nv
            else:
                eu, ev = 1.5 * nu - 0.5 * self.prev[0], 1.5 * nv - 0.5 * self.prev[1]
        self.prev = (nu, nv)
        t1 = s.t + dt
        wu, wv, tu, tv = self.bc(t1)
        out = []
        for f, e, wall, top in ((s.u, eu, wu, tu), (s.v, ev, wv, tv)):
            rhs = f + dt * e
            if theta < 1.0:
                rhs = rhs + (1 - theta) * dt * apply_A(g, f, eps)
            rhs[..., 0] = wall
            rhs[..., -1] = top
            sol = g.ifft(self.op.solve(g.fft(rhs)))
            sol[..., 0] = wall
            sol[..., -1] = top
            out.append(sol)
        new = FlowState(g, t1, out[0], out[1], eps, meta=dict(s.meta))
        if not (np.all(np.isfinite(new.u)) and np.all(np.isfinite(new.v))):
            return new
        return refresh_derived(new)


def step(state: FlowState, outer: OuterFlow, cfg: SolverConfig, stepper: Stepper | None = None):
    """Advance one step; pass a persistent ``stepper`` to keep AB2 history."""
    if stepper is None:
        stepper = Stepper(state.grid, outer, cfg)
    return stepper.step(state)


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    blowup: bool = False
    blowup_time: float | None = None
    blowup_state: FlowState | None = None
    warnings: list = field(default_factory=list)

    @property
    def times(self):
        return [s.t for s in self.snapshots]


def run(state0: FlowState, outer: OuterFlow, cfg: SolverConfig, stride: int = 1,
        diagnostics: dict | None = None, forcing: Forcing | None = None,
        boundary: Boundary | None = None, sink: Callable | None = None) -> Trajectory:
    """Integrate to ``cfg.t_end`` snapshotting every ``stride`` steps.

    ``diagnostics`` maps a name to ``f(state) -> dict``; the merged dicts
    become report rows.  Blow-up (non-finite values, or max|u| above
    ``blowup_factor`` times its initial value) halts the run and is recorded.
    """
    diagnostics = diagnostics or {}
    traj = Trajectory()
    stepper = Stepper(state0.grid, outer, cfg, forcing, boundary)
    umax0 = max(float(np.max(np.abs(state0.u))), float(np.max(np.abs(state0.v))), 1e-300)
    ceiling = cfg.blowup_factor * umax0

    def record(s):
        traj.snapshots.append(s)
        row = {"t": s.t}
        for fn in diagnostics.values():
            row.update(fn(s))
        traj.rows.append(row)
        if sink is not None:
            sink(len(traj.snapshots) - 1, s, row)

    s = state0
    record(s)
    for n in range(1, cfg.n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            s = stepper.step(s)
        bad = not (np.all(np.isfinite(s.u)) and np.all(np.isfinite(s.v)))
        if bad or max(np.max(np.abs(s.u)), np.max(np.abs(s.v))) > ceiling:
            traj.blowup, traj.blowup_time, traj.blowup_state = True, s.t, s
            break
        if n % stride == 0 or n == cfg.n_steps:
            record(s)
    return traj
