"""Residuals of the base and derived evolution equations.

Every equation is assembled term by term (terms are exported individually)
and every derived equation also has a recombination route: the same
quantity written as a pointwise combination of base-equation residuals.
Tangential derivatives of nonlinear quantities are always Leibniz sums over
primitive jets, so the two routes agree to roundoff on any discrete field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .jets import (E1, E2, G_TERMS, H_TERMS, MU_TERMS, THETA_TERMS, ZERO, Jet, Tower,
                   leibniz_bilinear, madd, mbinom, mscale, msub, sub_indices)

BASE_FIELDS = {"u": ("u", 0), "psi": ("u", 1), "xi": ("u", 2), "xiz": ("u", 3),
               "v": ("v", 0), "eta": ("v", 1), "zeta": ("v", 2)}
FIELD_OF = {val: key for key, val in BASE_FIELDS.items()}

# weight powers of <z> used when reporting each equation's residual
DEFAULT_WEIGHTS = {"ell": 1.75, "kappa": 1.0, "delta": 2.5}


class IdentityError(ValueError):
    pass


@dataclass
class Context:
    """Inputs shared by every residual evaluation at one time level."""

    tower: Tower
    px: np.ndarray | None = None
    py: np.ndarray | None = None
    epsilon: float = 0.0
    forcing: Callable | None = None  # forcing(field, alpha) -> array

    @property
    def grid(self):
        return self.tower.grid

    def swapped(self) -> "Context":
        fz = None
        if self.forcing is not None:
            sw = {"u": "v", "v": "u", "psi": "eta", "eta": "psi", "xi": "zeta", "zeta": "xi"}
            f = self.forcing
            fz = lambda name, a: f(sw[name], (a[1], a[0]))  # noqa: E731
        return Context(self.tower.swapped(), self.py, self.px, self.epsilon, fz)


@dataclass
class EquationResult:
    name: str
    residual: np.ndarray
    lhs: np.ndarray
    terms: dict
    weight: float = 0.0
    recombination: np.ndarray | None = None
    forcing_image: np.ndarray | None = None
    order: tuple | int | None = None
    note: str = ""

    @property
    def forced_residual(self) -> np.ndarray:
        if self.forcing_image is None:
            return self.residual
        return self.residual - self.forcing_image


@dataclass
class ResidualReport:
    equation: str
    order: object
    residual: float
    scale: float
    relative: float
    recombination_error: float | None
    grid: tuple
    convergence_order: float | None = None
    note: str = ""

    def to_row(self) -> dict:
        return {"equation": self.equation, "m": str(self.order), "grid": "x".join(map(str, self.grid)),
                "residual": self.residual, "scale": self.scale, "relative": self.relative,
                "recombination_error": self.recombination_error,
                "order": self.convergence_order, "note": self.note}


FLOOR = 1e-300


def make_report(res: EquationResult, grid) -> ResidualReport:
    a = res.weight
    r = grid.l2(res.forced_residual, a)
    norms = [grid.l2(res.lhs, a)] + [grid.l2(np.broadcast_to(t, grid.shape), a) for t in res.terms.values()]
    if res.forcing_image is not None:
        norms.append(grid.l2(res.forcing_image, a))
    scale = max(norms)
    rel = r / max(scale, FLOOR) if r > 0 else 0.0
    rec_err = None
    if res.recombination is not None:
        d = grid.l2(res.residual - res.recombination, a)
        rec_err = d / max(scale, FLOOR) if d > 0 else 0.0
    return ResidualReport(res.name, res.order, r, scale, rel, rec_err,
                          (grid.nx, grid.ny, grid.nz), None, res.note)


# ----- base equations -----

def transport_sum(tw, var: str, k: int, alpha) -> np.ndarray:
    """Leibniz remainder of d^alpha[(u dx + v dy + w dz) D^k var] beyond the
    leading transport and the d^alpha w term."""
    out = 0.0
    for beta in sub_indices(alpha):
        if beta == ZERO:
            continue
        c = mbinom(alpha, beta)
        rest = msub(alpha, beta)
        out = out + c * (tw.arr("u", beta, 0) * tw.arr(var, madd(rest, E1), k)
                         + tw.arr("v", beta, 0) * tw.arr(var, madd(rest, E2), k))
        if beta != tuple(alpha):
            out = out + c * tw.warr(beta) * tw.arr(var, rest, k + 1)
    return np.broadcast_to(out, tw.grid.shape) if np.isscalar(out) else out


def _theta_sum(tw, alpha, terms_list=THETA_TERMS) -> Jet:
    out = Jet()
    for terms in terms_list:
        out = out + leibniz_bilinear(tw, terms, alpha)
    return out


def base_source(ctx: Context, field_name: str, alpha=ZERO) -> np.ndarray:
    tw = ctx.tower
    g = ctx.grid
    var, k = BASE_FIELDS[field_name]
    alpha = tuple(alpha)
    if k == 0:
        p = ctx.px if var == "u" else ctx.py
        if p is None:
            return np.zeros(g.shape)
        dp = p if alpha == ZERO else g.dxy(p, alpha)
        return np.broadcast_to(-dp[..., None], g.shape)
    if k == 1:
        return leibniz_bilinear(tw, G_TERMS if var == "u" else H_TERMS, alpha).v
    if k == 2:
        return _theta_sum(tw, alpha, THETA_TERMS if var == "u" else MU_TERMS).v
    if alpha != ZERO:
        raise IdentityError("the third-order base equation is only used at alpha = 0")
    th = _theta_sum(tw, ZERO)
    return (th.z - tw.arr("u", ZERO, 1) * tw.arr("u", E1, 2) - tw.arr("v", ZERO, 1) * tw.arr("u", E2, 2)
            + (tw.arr("u", E1, 0) + tw.arr("v", E2, 0)) * tw.arr("u", ZERO, 3))


def base_equation(ctx: Context, field_name: str, alpha=ZERO, with_extras: bool = True) -> EquationResult:
    """Residual of d^alpha applied to a base equation.

    ``with_extras`` adds the epsilon viscosity and the planted forcing.
    """
    tw = ctx.tower
    var, k = BASE_FIELDS[field_name]
    alpha = tuple(alpha)
    J = tw.prim(var, alpha, k)
    lhs = J.transport(tw.u, tw.v, tw.w)
    terms = {"source": base_source(ctx, field_name, alpha),
             "leibniz": -transport_sum(tw, var, k, alpha)}
    if alpha != ZERO:
        terms["w_alpha"] = -tw.warr(alpha) * tw.arr(var, ZERO, k + 1)
    if with_extras and ctx.epsilon:
        terms["viscous"] = ctx.epsilon * (tw.arr(var, madd(alpha, (2, 0)), k)
                                          + tw.arr(var, madd(alpha, (0, 2)), k))
    if with_extras and ctx.forcing is not None:
        terms["forcing"] = ctx.forcing(field_name, alpha)
    rhs = sum(terms.values())
    return EquationResult(f"base:{field_name}", lhs - rhs, lhs, terms, order=alpha)


class BaseCache:
    """Unforced, inviscid base residuals and their right-hand sides."""

    def __init__(self, ctx: Context):
        self.ctx = ctx
        self._c: dict = {}

    def get(self, field_name, alpha=ZERO) -> EquationResult:
        key = (field_name, tuple(alpha))
        if key not in self._c:
            self._c[key] = base_equation(self.ctx, field_name, alpha, with_extras=False)
        return self._c[key]

    def R(self, field_name, alpha=ZERO) -> np.ndarray:
        return self.get(field_name, alpha).residual

    def rhs(self, field_name, alpha=ZERO) -> np.ndarray:
        r = self.get(field_name, alpha)
        return r.lhs - r.residual


def _forcing_getter(ctx):
    if ctx.forcing is None:
        return None
    return lambda name, a: np.broadcast_to(ctx.forcing(name, tuple(a)), ctx.grid.shape)


def _finish(name, ctx, lhs, terms, weight, rec_fn, cache, order, note=""):
    res = lhs - sum(terms.values())
    rec = rec_fn(cache.R)
    fg = _forcing_getter(ctx)
    fim = rec_fn(fg) if fg is not None else None
    return EquationResult(name, res, lhs, terms, weight, rec, fim, order, note)


def _direction(d):
    if d in ("x", E1):
        return E1
    if d in ("y", E2):
        return E2
    raise IdentityError(f"direction must be 'x' or 'y', got {d!r}")


# ----- f_m -----

def fm_equation(ctx: Context, cut, m: int, direction="x", weights=None,
                cache: BaseCache | None = None) -> EquationResult:
    """Equation for f_m = tau1 (d^m psi - chi d^m u), chi = dz psi / psi."""
    weights = weights or DEFAULT_WEIGHTS
    tw, g = ctx.tower, ctx.grid
    cache = cache or BaseCache(ctx)
    a = mscale(_direction(direction), m)
    B, Psi = tw.prim("u", a, 0), tw.prim("u", a, 1)
    psi, xi = tw.prim("u", ZERO, 1), tw.prim("u", ZERO, 2)
    t1, t1p, t1pp = cut.tau1[None, None, :], cut.tau1p[None, None, :], cut.tau1pp[None, None, :]
    mask = np.broadcast_to(t1 > 0, g.shape)
    psi_s = psi.fill(mask)
    chi = (xi / psi_s).masked(mask)
    F = Psi - chi * B
    f = Jet.profile(t1, t1p, t1pp) * F
    u, v, w = tw.u, tw.v, tw.w
    lhs = f.transport(u, v, w)
    g0 = leibniz_bilinear(tw, G_TERMS, ZERO)
    gm = leibniz_bilinear(tw, G_TERMS, a).v
    eta = tw.arr("v", ZERO, 1)
    bracket = np.where(mask, (g0.z - eta * tw.arr("u", E2, 1) - chi.v * g0.v) / psi_s.v
                       - tw.arr("u", E1, 1) + chi.v * tw.arr("u", E1, 0)
                       + chi.v * tw.arr("v", E2, 0) + 2 * chi.v * chi.z, 0.0)
    terms = {
        "tau1_gm": t1 * gm,
        "chi_leibniz_u": t1 * chi.v * transport_sum(tw, "u", 0, a),
        "leibniz_psi": -t1 * transport_sum(tw, "u", 1, a),
        "chi_bracket": -t1 * bracket * B.v,
        "dz_chi": 2 * t1 * chi.z * Psi.v,
        "cutoff_w": (w * t1p - t1pp) * F.v,
        "cutoff_dz": -2 * t1p * F.z,
    }

    def rec(G):
        return np.where(mask, t1 * (G("psi", a) - chi.v * G("u", a)
                                    - B.v * (G("xi", ZERO) - chi.v * G("psi", ZERO)) / psi_s.v), 0.0)

    name = "f_m" if _direction(direction) == E1 else "tilde_f_m"
    return _finish(name, ctx, lhs, terms, weights["ell"], rec, cache, m)


# ----- Gamma_m -----

def gamma_equation(ctx: Context, m: int, direction="x", weights=None,
                   cache: BaseCache | None = None) -> EquationResult:
    """Equation for Gamma_m = psi d^m v - eta d^m u."""
    weights = weights or DEFAULT_WEIGHTS
    tw = ctx.tower
    cache = cache or BaseCache(ctx)
    a = mscale(_direction(direction), m)
    B, V = tw.prim("u", a, 0), tw.prim("v", a, 0)
    psi, eta = tw.prim("u", ZERO, 1), tw.prim("v", ZERO, 1)
    gam = psi * V - eta * B
    lhs = gam.transport(tw.u, tw.v, tw.w)
    g0 = leibniz_bilinear(tw, G_TERMS, ZERO).v
    h0 = leibniz_bilinear(tw, H_TERMS, ZERO).v
    terms = {
        "eta_leibniz_u": eta.v * transport_sum(tw, "u", 0, a),
        "psi_leibniz_v": -psi.v * transport_sum(tw, "v", 0, a),
        "g_vm": g0 * V.v,
        "xi_etam": -2 * tw.arr("u", ZERO, 2) * V.z,
        "h_um": -h0 * B.v,
        "zeta_psim": 2 * tw.arr("v", ZERO, 2) * B.z,
    }

    def rec(G):
        return psi.v * G("v", a) - eta.v * G("u", a) + V.v * G("psi", ZERO) - B.v * G("eta", ZERO)

    name = "Gamma_m" if _direction(direction) == E1 else "tilde_Gamma_m"
    return _finish(name, ctx, lhs, terms, weights["kappa"] + weights["delta"], rec, cache, m)


# ----- g_alpha and h_alpha -----

_K_SOURCE = ([(2.0, ("u", E2, 1), ("v", ZERO, 2))], [(-2.0, ("v", E2, 1), ("u", ZERO, 2))])


def g_equation(ctx: Context, alpha=ZERO, weights=None, cache: BaseCache | None = None,
               name: str = "g") -> EquationResult:
    """Equation for g_alpha = d^alpha[(dy v) psi - (dy u) eta]."""
    weights = weights or DEFAULT_WEIGHTS
    tw = ctx.tower
    cache = cache or BaseCache(ctx)
    alpha = tuple(alpha)
    ga = leibniz_bilinear(tw, G_TERMS, alpha)
    lhs = ga.transport(tw.u, tw.v, tw.w)
    comm = 0.0
    for beta in sub_indices(alpha):
        if beta == ZERO:
            continue
        gr = leibniz_bilinear(tw, G_TERMS, msub(alpha, beta))
        comm = comm - mbinom(alpha, beta) * (tw.arr("u", beta, 0) * gr.x + tw.arr("v", beta, 0) * gr.y
                                             + tw.warr(beta) * gr.z)
    terms = {"commutator": np.broadcast_to(comm, ctx.grid.shape),
             "source_psi_y": leibniz_bilinear(tw, _K_SOURCE[0], alpha).v,
             "source_eta_y": leibniz_bilinear(tw, _K_SOURCE[1], alpha).v}

    def rec(G):
        out = 0.0
        for beta in sub_indices(alpha):
            c = mbinom(alpha, beta)
            r = msub(alpha, beta)
            out = out + c * (tw.arr("v", madd(beta, E2), 0) * G("psi", r)
                             + tw.arr("u", beta, 1) * G("v", madd(r, E2))
                             - tw.arr("u", madd(beta, E2), 0) * G("eta", r)
                             - tw.arr("v", beta, 1) * G("u", madd(r, E2)))
        return out

    return _finish(name, ctx, lhs, terms, weights["kappa"] + weights["delta"], rec, cache, alpha)


def h_equation(ctx: Context, alpha=ZERO, weights=None) -> EquationResult:
    """h_alpha runs through the g engine on the (u, x) <-> (v, y) swapped fields."""
    alpha = tuple(alpha)
    return g_equation(ctx.swapped(), (alpha[1], alpha[0]), weights, name="h")


# ----- q_m -----

def qm_equation(ctx: Context, cut, m: int, direction="x", literal: bool = False,
                cache: BaseCache | None = None) -> EquationResult:
    """Equation for q_m = tau2 (d^m xi - b d^m psi), b = dz xi / xi.

    ``literal=True`` keeps the published source verbatim: the cutoff term
    carries v in place of w and P_m omits the secondary-flow contributions.
    The default assembles the complete source.
    """
    tw, g = ctx.tower, ctx.grid
    cache = cache or BaseCache(ctx)
    d = _direction(direction)
    if d != E1 and literal:
        raise IdentityError("literal form is defined for the x direction only")
    a = mscale(d, m)
    X, Psi = tw.prim("u", a, 2), tw.prim("u", a, 1)
    xi, xiz = tw.prim("u", ZERO, 2), tw.prim("u", ZERO, 3)
    t2, t2p, t2pp = cut.tau2[None, None, :], cut.tau2p[None, None, :], cut.tau2pp[None, None, :]
    mask = np.broadcast_to(t2 > 0, g.shape)
    xi_s = xi.fill(mask)
    b = (xiz / xi_s).masked(mask)
    T2 = Jet.profile(t2, t2p, t2pp)
    q = T2 * (X - b * Psi)
    u, v, w = tw.u, tw.v, tw.w
    lhs = q.transport(u, v, w)
    gm = leibniz_bilinear(tw, G_TERMS, a).v
    th_m = _theta_sum(tw, a).v
    psi0, eta0 = tw.arr("u", ZERO, 1), tw.arr("v", ZERO, 1)
    xs, xzz = xi_s.v, tw.arr("u", ZERO, 4)
    xz = tw.arr("u", ZERO, 3)
    dpsi, dxi, du = tw.arr("u", E1, 1), tw.arr("u", E1, 2), tw.arr("u", E1, 0)
    pm = np.where(mask, (2 * (psi0 * dxi - du * xz) / xs
                         - (psi0 * dpsi - du * xs) * xz / xs ** 2
                         - 2 * xzz * xz / xs ** 2 + 2 * xz ** 3 / xs ** 3) * t2 * Psi.v, 0.0)
    th12 = leibniz_bilinear(tw, THETA_TERMS[0], ZERO) + leibniz_bilinear(tw, THETA_TERMS[1], ZERO)
    completion = np.where(mask, -t2 * Psi.v * (th12.z - eta0 * tw.arr("u", E2, 2)
                                                + tw.arr("v", E2, 0) * xz - b.v * th12.v) / xs, 0.0)
    terms = {
        "theta_m": t2 * th_m,
        "b_gm": -b.v * t2 * gm,
        "leibniz_xi": -t2 * transport_sum(tw, "u", 2, a),
        "b_leibniz_psi": b.v * t2 * transport_sum(tw, "u", 1, a),
        "dz_b": 2 * b.z * (T2 * Psi).z,
        "cutoff_bw": -t2p * b.v * w * Psi.v,
        "cutoff_bpp": b.v * t2pp * Psi.v,
        "cutoff_2bp": 2 * b.v * t2p * X.v,
        "cutoff_wp": t2p * (v if literal else w) * X.v,
        "cutoff_pp": -t2pp * X.v,
        "cutoff_dz": -2 * t2p * X.z,
        "P_m": pm,
    }
    if not literal:
        terms["P_m_completion"] = completion

    def rec(G):
        return np.where(mask, t2 * (G("xi", a) - b.v * G("psi", a)
                                    - Psi.v * (G("xiz", ZERO) - b.v * G("xi", ZERO)) / xs), 0.0)

    name = ("q_m" if d == E1 else "tilde_q_m") + ("_literal" if literal else "")
    return _finish(name, ctx, lhs, terms, 0.0, rec, cache, m)


# ----- weighted tau2 d^m psi -----

def xi_weighted_equation(ctx: Context, cut, m: int, direction="x",
                         cache: BaseCache | None = None) -> EquationResult:
    """Equation for |xi|^{-1/2} tau2 d^m psi, with the sign branch of xi on supp tau2."""
    tw, g = ctx.tower, ctx.grid
    cache = cache or BaseCache(ctx)
    a = mscale(_direction(direction), m)
    Psi = tw.prim("u", a, 1)
    xi = tw.prim("u", ZERO, 2)
    t2, t2p, t2pp = cut.tau2[None, None, :], cut.tau2p[None, None, :], cut.tau2pp[None, None, :]
    mask = np.broadcast_to(t2 > 0, g.shape)
    vals = xi.v[mask]
    if vals.size and not (np.all(vals < 0) or np.all(vals > 0)):
        raise IdentityError("xi changes sign inside supp tau2")
    s = -1.0 if (vals.size == 0 or vals[0] < 0) else 1.0
    xs = (xi * s).fill(mask)
    amp = (xs ** -0.5).masked(mask)
    Q = Jet.profile(t2, t2p, t2pp) * Psi
    u, v, w = tw.u, tw.v, tw.w
    lhs = (amp * Q).transport(u, v, w) + np.where(mask, s * t2 * tw.warr(a) * np.sqrt(xs.v), 0.0)
    terms = {
        "cutoff_w": amp.v * w * t2p * Psi.v,
        "cutoff_pp": -amp.v * t2pp * Psi.v,
        "cutoff_p": -2 * amp.v * t2p * Psi.z,
        "transport_weight": amp.transport(u, v, w) * t2 * Psi.v,
        "dz_weight": -2 * amp.z * Q.z,
        "source": amp.v * t2 * (leibniz_bilinear(tw, G_TERMS, a).v - transport_sum(tw, "u", 1, a)),
    }

    def rec(G):
        return amp.v * t2 * G("psi", a)

    return _finish("xi_weighted", ctx, lhs, terms, 0.0, rec, cache, m,
                   note="branch=-1" if s < 0 else "branch=+1")


# ----- bilinear engine: G_m, H_m, theta, mu -----

def _spec_field(spec):
    var, alpha, k = spec
    return FIELD_OF[(var, k)], tuple(alpha)


def bilinear_equation(ctx: Context, name: str, terms_spec, weight=0.0, order=None,
                      cache: BaseCache | None = None) -> EquationResult:
    """Equation for sum c A B with A, B primitive quantities.

    L(AB) = A LB + B LA - 2 A_z B_z with each L replaced by its base right-hand side.
    """
    tw = ctx.tower
    cache = cache or BaseCache(ctx)
    Q = Jet()
    src_lin = 0.0
    src_cross = 0.0
    for c, sa, sb in terms_spec:
        A, Bj = tw.prim(*sa), tw.prim(*sb)
        Q = Q + c * (A * Bj)
        fa, aa = _spec_field(sa)
        fb, ab = _spec_field(sb)
        src_lin = src_lin + c * (A.v * cache.rhs(fb, ab) + Bj.v * cache.rhs(fa, aa))
        src_cross = src_cross - 2 * c * A.z * Bj.z
    lhs = Q.transport(tw.u, tw.v, tw.w)
    terms = {"linear_sources": src_lin, "cross_dz": src_cross}

    def rec(G):
        out = 0.0
        for c, sa, sb in terms_spec:
            fa, aa = _spec_field(sa)
            fb, ab = _spec_field(sb)
            out = out + c * (tw.arr(sa[0], sa[1], sa[2]) * G(fb, ab) + tw.arr(sb[0], sb[1], sb[2]) * G(fa, aa))
        return out

    return _finish(name, ctx, lhs, terms, weight, rec, cache, order)


def G_spec(m, direction="x"):
    a = mscale(_direction(direction), m)
    return [(1.0, ("u", ZERO, 2), ("u", a, 0)), (-1.0, ("u", ZERO, 1), ("u", a, 1))]


def H_spec(m, direction="x"):
    a = mscale(_direction(direction), m)
    return [(1.0, ("u", ZERO, 2), ("v", a, 0)), (-1.0, ("v", ZERO, 1), ("u", a, 1))]


def leibniz_spec(terms, alpha):
    """Expand d^alpha of a bilinear form into primitive products."""
    out = []
    for c, (va, aa, ka), (vb, ab, kb) in terms:
        for beta in sub_indices(alpha):
            out.append((c * mbinom(alpha, beta), (va, madd(aa, beta), ka),
                        (vb, madd(ab, msub(alpha, beta)), kb)))
    return out


def theta_equation(ctx, j: int, alpha=ZERO, cache=None) -> EquationResult:
    return bilinear_equation(ctx, f"theta_{j}", leibniz_spec(THETA_TERMS[j - 1], tuple(alpha)),
                             order=tuple(alpha), cache=cache)


def mu_equation(ctx, j: int, alpha=ZERO, cache=None) -> EquationResult:
    return bilinear_equation(ctx, f"mu_{j}", leibniz_spec(MU_TERMS[j - 1], tuple(alpha)),
                             order=tuple(alpha), cache=cache)


# ----- weighted maximum-principle form of the regularized psi equation -----

def weighted_psi_equation(ctx: Context, delta: float) -> EquationResult:
    """Equation for Phi = (1 + z)^delta psi under the regularized system.

    L_eps Phi equals a zeroth-order coefficient times Phi plus the cross term
    from the weight, which is the form the parabolic maximum principle uses.
    """
    tw, g = ctx.tower, ctx.grid
    z = g.z[None, None, :]
    wgt = Jet.profile((1 + z) ** delta, delta * (1 + z) ** (delta - 1),
                      delta * (delta - 1) * (1 + z) ** (delta - 2))
    psi = tw.prim("u", ZERO, 1)
    Phi = wgt * psi
    eps = ctx.epsilon
    lhs = Phi.transport(tw.u, tw.v, tw.w)
    if eps:
        lhs = lhs - eps * (wgt.v * (tw.arr("u", (2, 0), 1) + tw.arr("u", (0, 2), 1)))
    psi_s = np.where(psi.v == 0, 1.0, psi.v)
    coef = (tw.arr("v", E2, 0) - tw.arr("u", E2, 0) * tw.arr("v", ZERO, 1) / psi_s
            + delta * tw.w / (1 + z) + delta * (delta + 1) / (1 + z) ** 2)
    coef = np.where(psi.v == 0, 0.0, coef)
    terms = {"zeroth_order": coef * Phi.v,
             "weight_cross": -2 * delta / (1 + z) * Phi.z,
             "gap": np.where(psi.v == 0, wgt.v * leibniz_bilinear(tw, G_TERMS, ZERO).v, 0.0)}
    if ctx.forcing is not None:
        terms["forcing"] = wgt.v * ctx.forcing("psi", ZERO)
    res = lhs - sum(terms.values())
    base = base_equation(ctx, "psi", ZERO, with_extras=True)
    return EquationResult("weighted_psi", res, lhs, terms, 0.0, wgt.v * base.residual, None, ZERO)


# ----- drivers -----

def convergence_order(errors, ratio: float = 2.0):
    """Observed orders between successive refinement levels."""
    out = []
    for e0, e1 in zip(errors[:-1], errors[1:]):
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(ratio))
        else:
            out.append(math.inf if e1 == 0 else math.nan)
    return out


def derived_suite(ctx: Context, cut, ms=(1, 2, 3), alphas=((0, 0), (1, 0), (0, 1), (1, 1)),
                  weights=None, include_xi=True) -> list[EquationResult]:
    """All derived equations at one time level for the configured orders."""
    cache = BaseCache(ctx)
    out = []
    for m in ms:
        out.append(fm_equation(ctx, cut, m, "x", weights, cache))
        out.append(fm_equation(ctx, cut, m, "y", weights, cache))
        out.append(gamma_equation(ctx, m, "x", weights, cache))
        out.append(gamma_equation(ctx, m, "y", weights, cache))
        out.append(qm_equation(ctx, cut, m, "x", cache=cache))
        out.append(bilinear_equation(ctx, "G_m", G_spec(m), order=m, cache=cache))
        out.append(bilinear_equation(ctx, "H_m", H_spec(m), order=m, cache=cache))
        out.append(bilinear_equation(ctx, "tilde_G_m", G_spec(m, "y"), order=m, cache=cache))
        out.append(bilinear_equation(ctx, "tilde_H_m", H_spec(m, "y"), order=m, cache=cache))
        if include_xi:
            try:
                out.append(xi_weighted_equation(ctx, cut, m, "x", cache))
            except IdentityError:
                pass
    for a in alphas:
        out.append(g_equation(ctx, a, weights, cache))
        out.append(h_equation(ctx, a, weights))
        for j in (1, 2, 3):
            out.append(theta_equation(ctx, j, a, cache))
            out.append(mu_equation(ctx, j, a, cache))
    return out


def base_suite(ctx: Context, ms=(1, 2, 3)) -> list[EquationResult]:
    out = [base_equation(ctx, f) for f in ("u", "v", "psi", "eta", "xi", "zeta")]
    for m in ms:
        out.append(base_equation(ctx, "u", (m, 0)))
        out.append(base_equation(ctx, "psi", (m, 0)))
        out[-2].name, out[-1].name = "base:u_m", "base:psi_m"
    return out
