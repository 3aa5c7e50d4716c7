"""Flow state, outer flow data, and initial-data checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import sympy as sp

from .grid import Grid, GridError

_t, _x, _y = sp.symbols("t x y", real=True)


class StateError(ValueError):
    """Raised for inconsistent or non-finite flow data."""


def _trace_fn(spec):
    """Normalize an outer-flow entry to (f(t, X, Y), f_t(t, X, Y) or None)."""
    if isinstance(spec, (int, float)):
        c = float(spec)
        return (lambda t, X, Y: np.full(np.broadcast(X, Y).shape, c)), \
               (lambda t, X, Y: np.zeros(np.broadcast(X, Y).shape))
    if isinstance(spec, sp.Expr):
        f = sp.lambdify((_t, _x, _y), spec, "numpy")
        ft = sp.lambdify((_t, _x, _y), sp.diff(spec, _t), "numpy")
        shape = lambda X, Y: np.broadcast(X, Y).shape  # noqa: E731
        return (lambda t, X, Y: np.broadcast_to(f(t, X, Y), shape(X, Y)).astype(float)), \
               (lambda t, X, Y: np.broadcast_to(ft(t, X, Y), shape(X, Y)).astype(float))
    if callable(spec):
        return spec, None
    raise StateError(f"unsupported outer-flow entry {spec!r}")


def _central_dt(f, t, X, Y, h=1e-3):
    # fourth-order central difference
    return (-f(t + 2 * h, X, Y) + 8 * f(t + h, X, Y) - 8 * f(t - h, X, Y)
            + f(t - 2 * h, X, Y)) / (12 * h)


@dataclass
class OuterFlow:
    """Outer tangential velocity (U, V) and pressure p on the torus.

    Each entry is a constant, a sympy expression in (t, x, y), or a callable
    ``f(t, X, Y)``.  Sampled data are supported through :meth:`from_samples`.
    """

    U: object = 0.0
    V: object = 0.0
    p: object = 0.0

    def __post_init__(self):
        self._fns = {k: _trace_fn(getattr(self, k)) for k in ("U", "V", "p")}

    @property
    def is_constant(self) -> bool:
        return all(isinstance(getattr(self, k), (int, float)) for k in ("U", "V", "p"))

    @property
    def has_time_derivative(self) -> bool:
        return True

    def trace(self, name: str, t: float, grid: Grid) -> np.ndarray:
        X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
        return np.asarray(self._fns[name][0](t, X, Y), dtype=float)

    def dt_trace(self, name: str, t: float, grid: Grid) -> np.ndarray:
        X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
        f, ft = self._fns[name]
        if ft is not None:
            return np.asarray(ft(t, X, Y), dtype=float)
        return _central_dt(f, t, X, Y)

    def pressure_gradient(self, t: float, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(self.p, (int, float)):
            z = np.zeros((grid.nx, grid.ny))
            return z, z
        p = self.trace("p", t, grid)
        return grid.dxy(p, (1, 0)), grid.dxy(p, (0, 1))

    @classmethod
    def from_samples(cls, times, U, V, p) -> "OuterFlow":
        """Outer flow from arrays of shape (nt, nx, ny), linear in time."""
        times = np.asarray(times, dtype=float)
        if times.size < 2:
            raise StateError("sampled outer flow needs at least two time samples")

        def mk(arr):
            arr = np.asarray(arr, dtype=float)

            def f(t, X, Y):
                i = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
                th = (t - times[i]) / (times[i + 1] - times[i])
                return (1 - th) * arr[i] + th * arr[i + 1]
            return f

        out = cls(mk(U), mk(V), mk(p))
        # piecewise-linear samples: use the sample slope rather than a 4-point stencil
        for name, arr in (("U", U), ("V", V), ("p", p)):
            arr = np.asarray(arr, dtype=float)

            def ft(t, X, Y, arr=arr):
                i = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
                return (arr[i + 1] - arr[i]) / (times[i + 1] - times[i])
            out._fns[name] = (out._fns[name][0], ft)
        return out


@dataclass
class FlowState:
    """Velocity fields and their derived quantities at one time."""

    grid: Grid
    t: float
    u: np.ndarray
    v: np.ndarray
    epsilon: float = 0.0
    w: np.ndarray | None = None
    psi: np.ndarray | None = None
    eta: np.ndarray | None = None
    xi: np.ndarray | None = None
    zeta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def copy(self) -> "FlowState":
        return replace(self, u=self.u.copy(), v=self.v.copy(), meta=dict(self.meta))

    def negated(self) -> "FlowState":
        return refresh_derived(replace(self, u=-self.u, v=-self.v))


def refresh_derived(state: FlowState) -> FlowState:
    """Recompute w, psi, eta, xi, zeta from u and v.

    ``w`` is the finite-difference-consistent antiderivative of
    -(u_x + v_y), so the discrete divergence vanishes at every node where
    the continuity equation is imposed.  ``xi`` and ``zeta`` use the second
    derivative stencil directly.
    """
    g = state.grid
    u = np.asarray(state.u, dtype=float)
    v = np.asarray(state.v, dtype=float)
    if u.shape != g.shape or v.shape != g.shape:
        raise StateError("field shape does not match grid")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise StateError("non-finite velocity field")
    div = g.dxy(u, (1, 0)) + g.dxy(v, (0, 1))
    return replace(state, u=u, v=v, w=-g.antiderivative_fd(div),
                   psi=g.dz(u, 1), eta=g.dz(v, 1), xi=g.dz(u, 2), zeta=g.dz(v, 2))


def make_state(grid: Grid, u, v, t: float = 0.0, epsilon: float = 0.0) -> FlowState:
    u = np.broadcast_to(np.asarray(u, dtype=float), grid.shape).copy()
    v = np.broadcast_to(np.asarray(v, dtype=float), grid.shape).copy()
    return refresh_derived(FlowState(grid, t, u, v, epsilon))


def divergence(state: FlowState) -> np.ndarray:
    g = state.grid
    return g.dxy(state.u, (1, 0)) + g.dxy(state.v, (0, 1)) + g.dz(state.w, 1)


def divergence_report(state: FlowState) -> dict:
    """Relative divergence on the enforced nodes and on the top node."""
    g = state.grid
    ux, vy = g.dxy(state.u, (1, 0)), g.dxy(state.v, (0, 1))
    d = ux + vy + g.dz(state.w, 1)
    scale = g.l2(ux) + g.l2(vy)
    if scale == 0.0:
        return {"interior": 0.0 if not np.any(d) else math.inf, "all": 0.0 if not np.any(d) else math.inf}
    interior = d.copy()
    interior[..., -1] = 0.0
    return {"interior": g.l2(interior) / scale, "all": g.l2(d) / scale}


# ----- compatibility and Bernoulli -----

@dataclass
class CheckReport:
    residuals: dict
    tol: float
    passed: dict = field(init=False)

    def __post_init__(self):
        self.passed = {k: bool(v <= self.tol) for k, v in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, p in self.passed.items() if not p]

    def to_dict(self) -> dict:
        return {"tol": self.tol, "residuals": self.residuals, "passed": self.passed, "ok": self.ok}


COMPAT_CONDITIONS = ("wall", "far_field", "second_order", "third_order_u", "third_order_v")


def check_compatibility(u0, v0, outer: OuterFlow, tol: float, grid: Grid | None = None,
                        t: float = 0.0) -> CheckReport:
    """Evaluate the five wall and far-field compatibility conditions.

    Residuals are sup norms over the torus.  Normal derivatives at the wall
    use one-sided second-order stencils.
    """
    if grid is None:
        grid = u0.grid
    u = getattr(u0, "values", u0)
    v = getattr(v0, "values", v0)
    g = grid
    U, V = outer.trace("U", t, g), outer.trace("V", t, g)
    px, py = outer.pressure_gradient(t, g)
    if isinstance(outer.p, (int, float)):
        ptx = pty = np.zeros_like(px)
    else:
        pt = outer.dt_trace("p", t, g)
        ptx, pty = g.dxy(pt, (1, 0)), g.dxy(pt, (0, 1))
    wall = np.abs(u[..., 0]) + np.abs(v[..., 0])
    far = np.abs(u[..., -1] - U) + np.abs(v[..., -1] - V)
    psi, eta = g.dz(u, 1), g.dz(v, 1)
    sec = np.abs(g.dz(u, 2)[..., 0] - px) + np.abs(g.dz(v, 2)[..., 0] - py)
    psi0, eta0 = psi[..., 0], eta[..., 0]
    psix, psiy = g.dxy(psi0, (1, 0)), g.dxy(psi0, (0, 1))
    etax, etay = g.dxy(eta0, (1, 0)), g.dxy(eta0, (0, 1))
    d4u, d4v = g.dz(u, 4)[..., 0], g.dz(v, 4)[..., 0]
    third_u = d4u - (psi0 * (psix - etay) + 2 * eta0 * psiy + ptx)
    third_v = d4v - (eta0 * (etay - psix) + 2 * psi0 * etax + pty)
    res = {"wall": float(wall.max()), "far_field": float(far.max()),
           "second_order": float(sec.max()), "third_order_u": float(np.abs(third_u).max()),
           "third_order_v": float(np.abs(third_v).max())}
    return CheckReport(res, tol)


def check_bernoulli(outer: OuterFlow, tol: float, grid: Grid, times=(0.0,)) -> CheckReport:
    """Residuals of U_t + U U_x + V U_y + p_x = 0 and the V analogue."""
    ru = rv = 0.0
    for t in times:
        U, V = outer.trace("U", t, grid), outer.trace("V", t, grid)
        Ut, Vt = outer.dt_trace("U", t, grid), outer.dt_trace("V", t, grid)
        px, py = outer.pressure_gradient(t, grid)
        eu = Ut + U * grid.dxy(U, (1, 0)) + V * grid.dxy(U, (0, 1)) + px
        ev = Vt + U * grid.dxy(V, (1, 0)) + V * grid.dxy(V, (0, 1)) + py
        norm = lambda a: float(np.sqrt(np.sum(a * a) * grid.dx * grid.dy))  # noqa: E731
        ru, rv = max(ru, norm(eu)), max(rv, norm(ev))
    return CheckReport({"bernoulli_u": ru, "bernoulli_v": rv}, tol)


# ----- named initial profiles -----

def canonical_profile(grid: Grid, delta: float = 2.5, amp: float = 1.0,
                      pert: float = 0.0, vpert: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Shear with a single nondegenerate critical point at z = 1.

    u_s = amp z (1 + k z^2)^(-delta/2) with k = 1/(delta - 1) has
    u_s' = amp (1 - z^2) (1 + k z^2)^(-(delta + 2)/2), even in z, so all odd
    wall derivatives of psi vanish, and |u_s'| is comparable to <z>^-delta.
    Perturbations use B(z) = z^6 e^{-2z} / 2, flat to fifth order at the wall.
    """
    if delta <= 1:
        raise StateError("delta must exceed 1")
    k = 1.0 / (delta - 1)
    Z = grid.Z
    us = amp * Z * (1 + k * Z ** 2) ** (-delta / 2)
    B = 0.5 * Z ** 6 * np.exp(-2 * Z)
    u = us + pert * np.sin(grid.X) * B + 0 * grid.Y
    v = vpert * np.cos(grid.Y) * np.sin(grid.X) * B + 0 * grid.X
    return np.broadcast_to(u, grid.shape).copy(), np.broadcast_to(v, grid.shape).copy()


def canonical_dz_profile(z, delta: float = 2.5, amp: float = 1.0):
    """Closed form of d/dz of the canonical shear."""
    k = 1.0 / (delta - 1)
    return amp * (1 - z ** 2) * (1 + k * z ** 2) ** (-(delta + 2) / 2)


def tanh_profile(grid: Grid, U: float = 1.0):
    u = U * np.tanh(grid.Z) + 0 * grid.X + 0 * grid.Y
    return np.broadcast_to(u, grid.shape).copy(), np.zeros(grid.shape)


PROFILES: dict[str, Callable] = {
    "critical-curve": canonical_profile,
    "tanh": tanh_profile,
    "zero": lambda grid: (np.zeros(grid.shape), np.zeros(grid.shape)),
}


def outer_for_profile(name: str, grid: Grid, u: np.ndarray) -> OuterFlow:
    """Constant outer flow matching the truncation-height value of a shear."""
    if name == "zero":
        return OuterFlow()
    return OuterFlow(U=float(np.mean(u[..., -1])), V=0.0, p=0.0)


__all__ = ["OuterFlow", "FlowState", "refresh_derived", "make_state", "check_compatibility",
           "check_bernoulli", "CheckReport", "canonical_profile", "tanh_profile", "PROFILES",
           "divergence", "divergence_report", "StateError", "GridError"]
