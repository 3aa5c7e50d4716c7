"""Manufactured solutions: closed-form velocities with symbolic forcing.

The vertical velocity of a planted field is -int_0^z (u_x + v_y).  Each
separable term a(t, x, y) b(z) of the divergence gets a one-argument sympy
function B with dB/dz = b, evaluated numerically by adaptive quadrature, so
forcing expressions stay exact under every derivative the identities need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy.integrate import quad

from .auxiliary import build_cutoffs
from .grid import Grid, GridSpec
from .identities import (Context, base_equation, bilinear_equation, convergence_order,
                         fm_equation, g_equation, gamma_equation, G_spec, h_equation, make_report,
                         qm_equation, theta_equation, xi_weighted_equation, BaseCache, IdentityError)
from .jets import ZERO, Tower
from .solver import SolverConfig, run
from .state import OuterFlow, make_state

t, x, y, z = sp.symbols("t x y z", real=True)

_counter = [0]


def _antiderivative_function(b: sp.Expr) -> sp.Function:
    """sympy function B(z) with B' = b and B(0) = 0, numerically implemented."""
    bf = sp.lambdify(z, b, "numpy")
    cache: dict = {}

    def imp(zv):
        zv = np.asarray(zv, dtype=float)
        key = zv.tobytes()
        if key in cache:
            return cache[key]
        flat = zv.ravel()
        nodes = np.unique(np.concatenate([[0.0], flat]))
        vals = np.zeros_like(nodes)
        acc = 0.0
        for i in range(1, len(nodes)):
            seg, _ = quad(lambda s: float(bf(s)), nodes[i - 1], nodes[i], epsabs=1e-15, epsrel=1e-13, limit=200)
            acc += seg
            vals[i] = acc
        out = np.interp(flat, nodes, vals).reshape(zv.shape)
        cache[key] = out
        return out

    _counter[0] += 1

    def fdiff(self, argindex=1):
        return b.subs(z, self.args[0])

    cls = type(f"Wint{_counter[0]}", (sp.Function,), {"nargs": 1, "fdiff": fdiff,
                                                       "_imp_": staticmethod(imp)})
    return cls


def vertical_velocity(u: sp.Expr, v: sp.Expr) -> sp.Expr:
    div = sp.expand(sp.diff(u, x) + sp.diff(v, y))
    if div == 0:
        return sp.Integer(0)
    groups: dict = {}
    for term in sp.Add.make_args(div):
        parts = sp.separatevars(term, [z, x, y, t], dict=True)
        if parts is None:
            raise ValueError(f"divergence term {term} is not separable in z")
        coef = parts["coeff"] * parts[x] * parts[y] * parts[t]
        groups.setdefault(parts[z], []).append(coef)
    w = sp.Integer(0)
    for zpart, coefs in groups.items():
        W = _antiderivative_function(zpart)
        w = w - sp.Add(*coefs) * W(z)
    return w


@dataclass
class MMSCase:
    name: str
    u: sp.Expr
    v: sp.Expr
    epsilon: float = 0.0
    analytic: bool = False
    critical: bool = False
    description: str = ""
    _w: sp.Expr | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def w(self) -> sp.Expr:
        if self._w is None:
            self._w = vertical_velocity(self.u, self.v)
        return self._w

    def forcing_expr(self, var: str) -> sp.Expr:
        f = self.u if var == "u" else self.v
        e = self.epsilon
        return (sp.diff(f, t) + self.u * sp.diff(f, x) + self.v * sp.diff(f, y) + self.w * sp.diff(f, z)
                - sp.diff(f, z, 2) - e * (sp.diff(f, x, 2) + sp.diff(f, y, 2)))

    def _fn(self, key, builder):
        if key not in self._cache:
            expr = builder()
            self._cache[key] = sp.lambdify((t, x, y, z), expr, modules="numpy", cse=True)
        return self._cache[key]

    def sample(self, expr_key: str, tv: float, grid: Grid, alpha=ZERO, k: int = 0) -> np.ndarray:
        """Evaluate d^alpha dz^k of u, v, w, ut, vt or a forcing on the grid."""
        def build():
            base = {"u": self.u, "v": self.v, "w": self.w,
                    "ut": sp.diff(self.u, t), "vt": sp.diff(self.v, t),
                    "Fu": self.forcing_expr("u"), "Fv": self.forcing_expr("v")}[expr_key]
            d = base
            if alpha[0]:
                d = sp.diff(d, x, alpha[0])
            if alpha[1]:
                d = sp.diff(d, y, alpha[1])
            if k:
                d = sp.diff(d, z, k)
            return d
        f = self._fn((expr_key, tuple(alpha), k), build)
        out = f(tv, grid.X, grid.Y, grid.Z)
        return np.broadcast_to(np.asarray(out, dtype=float), grid.shape).copy()

    def forcing_field(self, tv: float, grid: Grid):
        """Residual forcing getter for the identity engine."""
        fmap = {"u": ("Fu", 0), "psi": ("Fu", 1), "xi": ("Fu", 2), "xiz": ("Fu", 3),
                "v": ("Fv", 0), "eta": ("Fv", 1), "zeta": ("Fv", 2)}

        def get(name, alpha):
            key, k = fmap[name]
            return self.sample(key, tv, grid, alpha, k)
        return get

    def planted_context(self, tv: float, grid: Grid, exact_w: bool = False) -> Context:
        """Context built from the sampled planted fields with exact time derivatives."""
        u, v = self.sample("u", tv, grid), self.sample("v", tv, grid)
        ut, vt = self.sample("ut", tv, grid), self.sample("vt", tv, grid)
        w = self.sample("w", tv, grid) if exact_w else None
        tw = Tower(grid, u, v, ut, vt, w)
        return Context(tw, None, None, self.epsilon, self.forcing_field(tv, grid))


def _cases() -> dict:
    jz = sp.sqrt(1 + z ** 2)
    delta = sp.Rational(5, 2)
    k = 1 / (delta - 1)
    us = z * (1 + k * z ** 2) ** (-delta / 2)
    prof = z ** 2 * sp.exp(-z)
    a = sp.Rational(1, 20)
    return {
        "zero": MMSCase("zero", sp.Integer(0), sp.Integer(0), description="trivial state"),
        "single-mode": MMSCase("single-mode", sp.sin(x) * (1 - sp.exp(-z)) * sp.exp(-t) / jz, sp.Integer(0),
                               description="one tangential mode, no secondary flow"),
        "two-mode": MMSCase("two-mode",
                            us + a * sp.exp(-t) * sp.sin(x) * sp.cos(y) * prof,
                            a * sp.exp(-t) * sp.cos(x) * sp.sin(2 * y) * prof,
                            critical=True,
                            description="critical-point shear with coupled secondary flow"),
        "analytic": MMSCase("analytic",
                            us + a * sp.exp(-t) * prof / (2 - sp.cos(x)),
                            a * sp.exp(-t) * prof * sp.sin(y) / (2 - sp.cos(x)),
                            analytic=True, critical=True,
                            description="non-band-limited analytic tangential dependence"),
    }


@lru_cache(maxsize=None)
def get_case(name: str) -> MMSCase:
    cases = _cases()
    if name not in cases:
        raise KeyError(f"unregistered MMS case {name!r}; known: {sorted(cases)}")
    return cases[name]


CASE_NAMES = ("zero", "single-mode", "two-mode", "analytic")


# ----- solver convergence -----

def solve_case(case: MMSCase, grid: Grid, dt: float, t_end: float, scheme: str = "imex-cn-ab2"):
    """Run the forced solver from the planted data; return the final state."""
    u0, v0 = case.sample("u", 0.0, grid), case.sample("v", 0.0, grid)
    s0 = make_state(grid, u0, v0, 0.0, case.epsilon)

    def forcing(tv):
        return case.sample("Fu", tv, grid), case.sample("Fv", tv, grid)

    def boundary(tv):
        u, v = case.sample("u", tv, grid), case.sample("v", tv, grid)
        return u[..., 0], v[..., 0], u[..., -1], v[..., -1]

    cfg = SolverConfig(dt=dt, t_end=t_end, epsilon=case.epsilon, scheme=scheme, check_cfl=False)
    traj = run(s0, OuterFlow(), cfg, stride=max(cfg.n_steps, 1), forcing=forcing, boundary=boundary)
    return traj.snapshots[-1]


def solution_error(case: MMSCase, state) -> float:
    g = state.grid
    ue, ve = case.sample("u", state.t, g), case.sample("v", state.t, g)
    num = math.hypot(g.l2(state.u - ue), g.l2(state.v - ve))
    den = math.hypot(g.l2(ue), g.l2(ve))
    return num / den if den > 0 else num


@dataclass
class ConvergenceResult:
    label: str
    levels: list
    errors: list
    orders: list

    @property
    def min_order(self) -> float:
        finite = [o for o in self.orders if math.isfinite(o)]
        return min(finite) if finite else math.nan

    def to_rows(self):
        rows = []
        for i, (lv, e) in enumerate(zip(self.levels, self.errors)):
            rows.append({"study": self.label, "level": lv, "error": e,
                         "order": self.orders[i - 1] if i > 0 else None})
        return rows


def dz_study(case: MMSCase, nzs=(33, 65, 129), nx: int = 8, dt: float = 2e-4, t_end: float = 0.02):
    errs = []
    for nz in nzs:
        g = GridSpec(nx, nx, nz).build()
        errs.append(solution_error(case, solve_case(case, g, dt, t_end)))
    return ConvergenceResult(f"{case.name}:dz", list(nzs), errs, convergence_order(errs))


def dt_study(case: MMSCase, dts=(4e-3, 2e-3, 1e-3), scheme: str = "imex-cn-ab2", nz: int = 65,
             nx: int = 8, t_end: float = 0.2):
    """Self-convergence in dt against a run with dt_min / 8 on the same grid."""
    g = GridSpec(nx, nx, nz).build()
    ref = solve_case(case, g, dts[-1] / 8, t_end, scheme)
    errs = []
    for dt in dts:
        s = solve_case(case, g, dt, t_end, scheme)
        errs.append(math.hypot(g.l2(s.u - ref.u), g.l2(s.v - ref.v)) / max(g.l2(ref.u), 1e-300))
    ratio = dts[0] / dts[1]
    return ConvergenceResult(f"{case.name}:dt:{scheme}", list(dts), errs, convergence_order(errs, ratio))


def tangential_study(case: MMSCase, nxs=(8, 16, 32, 64), nz: int = 65, dt: float = 1e-3, t_end: float = 0.02):
    """Self-convergence in the tangential resolution on a fixed z grid.

    Errors are measured against the finest level; ``orders`` holds the error
    drop factor of each doubling.
    """
    sols = [solve_case(case, GridSpec(n, n, nz).build(), dt, t_end) for n in nxs]
    ref = sols[-1]
    errs = []
    for n, s in zip(nxs[:-1], sols[:-1]):
        r = ref.grid.nx // n
        ru, rv = ref.u[::r, ::r], ref.v[::r, ::r]
        errs.append(math.hypot(s.grid.l2(s.u - ru), s.grid.l2(s.v - rv)) / max(s.grid.l2(ru), 1e-300))
    drops = [errs[i] / errs[i + 1] if errs[i + 1] > 0 else math.inf for i in range(len(errs) - 1)]
    return ConvergenceResult(f"{case.name}:xy", list(nxs[:-1]), errs, drops)


# ----- identity residual convergence -----

def residual_equations(case: MMSCase, grid: Grid, tv: float = 0.0, m: int = 1, eps_c: float = 0.2):
    """Base and derived residuals of the planted fields with forcing folded in."""
    ctx = case.planted_context(tv, grid)
    cache = BaseCache(ctx)
    out = [base_equation(ctx, f) for f in ("u", "v", "psi", "eta", "xi", "zeta")]
    out.append(base_equation(ctx, "u", (m, 0)))
    out.append(base_equation(ctx, "psi", (m, 0)))
    out.append(g_equation(ctx, ZERO, cache=cache))
    out.append(g_equation(ctx, (m, 0), cache=cache, name="g_m"))
    out.append(h_equation(ctx, ZERO))
    out.append(gamma_equation(ctx, m, "x", cache=cache))
    out.append(bilinear_equation(ctx, "G_m", G_spec(m), order=m, cache=cache))
    out.append(theta_equation(ctx, 1, ZERO, cache))
    if case.critical:
        cut = build_cutoffs(eps_c, 1.0, grid)
        out.append(fm_equation(ctx, cut, m, "x", cache=cache))
        out.append(qm_equation(ctx, cut, m, "x", cache=cache))
        try:
            out.append(xi_weighted_equation(ctx, cut, m, "x", cache))
        except IdentityError:
            pass
    return out


def residual_study(case: MMSCase, nzs=(33, 65, 129), nx: int = 8, m: int = 1, tv: float = 0.0):
    """Forced residual norms per equation across z refinements."""
    table: dict = {}
    recomb: dict = {}
    for nz in nzs:
        g = GridSpec(nx, nx, nz).build()
        for r in residual_equations(case, g, tv, m):
            rep = make_report(r, g)
            key = r.name if not r.name.startswith("base:") or r.order == ZERO else f"{r.name}{r.order}"
            table.setdefault(key, []).append(rep.residual)
            if rep.recombination_error is not None:
                recomb[key] = max(recomb.get(key, 0.0), rep.recombination_error)
    out = {}
    for key, errs in table.items():
        out[key] = {"residuals": errs, "orders": convergence_order(errs),
                    "recombination_error": recomb.get(key)}
    return out


def mms_suite(case_id: str, levels=(33, 65, 129), nx: int = 8, with_dt: bool = True):
    """Solution-error and residual convergence for one registered case."""
    case = get_case(case_id)
    # at nx = 8 the tangential error of the analytic case floors the z study
    nx = max(nx, 32) if case.analytic else nx
    res = {"case": case_id, "dz": dz_study(case, levels, nx)}
    if with_dt:
        res["dt_euler"] = dt_study(case, scheme="imex-euler")
        res["dt_cnab2"] = dt_study(case, scheme="imex-cn-ab2")
    if case.analytic:
        res["tangential"] = tangential_study(case)
    res["residuals"] = residual_study(case, levels, nx)
    return res
