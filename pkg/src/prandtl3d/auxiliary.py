"""Cutoffs, critical-curve detection, structural hypotheses and the
auxiliary cancellation quantities built from a flow state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .jets import E1, E2, G_TERMS, H_TERMS, MU_TERMS, THETA_TERMS, ZERO, Tower, leibniz_bilinear, mscale
from .state import FlowState

DIVISION_FLOOR = 1e-8


class AuxError(ValueError):
    pass


# ----- smooth transition -----

def smooth_step(x):
    """s(x) = e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)}) with s', s''.

    Exactly 0 for x <= 0 and exactly 1 for x >= 1.
    """
    x = np.asarray(x, dtype=float)
    s = np.where(x >= 1, 1.0, 0.0)
    s1 = np.zeros_like(x)
    s2 = np.zeros_like(x)
    m = (x > 0) & (x < 1)
    if np.any(m):
        xm = x[m]
        with np.errstate(over="ignore"):
            sm = 1.0 / (1.0 + np.exp(1.0 / xm - 1.0 / (1.0 - xm)))
        p1 = 1.0 / xm ** 2 + 1.0 / (1.0 - xm) ** 2
        p1d = -2.0 / xm ** 3 + 2.0 / (1.0 - xm) ** 3
        q = sm * (1.0 - sm)
        d1 = q * p1
        s[m] = sm
        s1[m] = d1
        s2[m] = d1 * (1.0 - 2.0 * sm) * p1 + q * p1d
    return s, s1, s2


@dataclass
class CutoffPair:
    z: np.ndarray
    tau1: np.ndarray
    tau1p: np.ndarray
    tau1pp: np.ndarray
    tau2: np.ndarray
    tau2p: np.ndarray
    tau2pp: np.ndarray
    eps_c: float
    gamma_ref: float = 1.0

    def support_identities(self) -> dict:
        """Pointwise defects of the four support relations."""
        t1, t2 = self.tau1, self.tau2
        return {"sum_min": float(np.min(t1 + t2)),
                "tau1p": float(np.max(np.abs(self.tau1p - self.tau1p * t2))),
                "tau2p": float(np.max(np.abs(self.tau2p - self.tau2p * t1))),
                "one_minus_tau2": float(np.max(np.abs((1 - t2) - (1 - t2) * t1)))}


def cutoff_profiles(z, eps_c: float, gamma_ref: float = 1.0):
    z = np.asarray(z, dtype=float)
    d = z - gamma_ref
    r = np.abs(d)
    sg = np.sign(d)
    a, a1, a2 = smooth_step((r - eps_c) / (eps_c / 2))
    b, b1, b2 = smooth_step((r - 1.5 * eps_c) / (eps_c / 2))
    k1, k2 = 2.0 / eps_c, 4.0 / eps_c ** 2
    return (a, sg * k1 * a1, k2 * a2, 1.0 - b, -sg * k1 * b1, -k2 * b2)


def build_cutoffs(eps_c: float, gamma_ref: float, grid: Grid) -> CutoffPair:
    if not (0 < eps_c < 0.25):
        raise AuxError("eps_c must lie in (0, 1/4)")
    lo, hi = gamma_ref - 2 * eps_c, gamma_ref + 2 * eps_c
    if not (lo > 0 and hi < grid.z[-1]):
        raise AuxError(f"cutoff bands [{lo:g}, {hi:g}] exceed the domain (0, {grid.z[-1]:g})")
    return CutoffPair(grid.z, *cutoff_profiles(grid.z, eps_c, gamma_ref), eps_c=eps_c, gamma_ref=gamma_ref)


def vartheta_profile(z):
    """Identically 1 on [0, 2], supported in [0, 2.5]."""
    s, s1, s2 = smooth_step((np.asarray(z, dtype=float) - 2.0) / 0.5)
    return 1.0 - s, -2.0 * s1, -4.0 * s2


# ----- critical curve -----

@dataclass
class CurveReport:
    gamma: np.ndarray
    xi_at_gamma: np.ndarray
    zero_counts: np.ndarray
    unique: bool
    bad_columns: list
    variant: str

    def to_dict(self) -> dict:
        g = self.gamma[np.isfinite(self.gamma)]
        return {"unique": self.unique, "variant": self.variant,
                "bad_columns": [list(map(int, c)) for c in self.bad_columns[:50]],
                "n_bad_columns": len(self.bad_columns),
                "gamma_min": float(g.min()) if g.size else None,
                "gamma_max": float(g.max()) if g.size else None,
                "min_abs_xi_at_gamma": float(np.nanmin(np.abs(self.xi_at_gamma))) if g.size else None}


def _quad_root(zs, ps):
    """Root in [zs[0], zs[1]] of the quadratic through three (z, p) points."""
    c = np.polyfit(zs, ps, 2)
    roots = np.roots(c) if abs(c[0]) > 0 else np.array([-c[2] / c[1]])
    lo, hi = min(zs[0], zs[1]), max(zs[0], zs[1])
    ok = [r.real for r in roots if abs(r.imag) < 1e-12 and lo - 1e-12 <= r.real <= hi + 1e-12]
    if ok:
        return ok[0]
    return zs[0] - ps[0] * (zs[1] - zs[0]) / (ps[1] - ps[0])


def detect_critical_curve(psi: np.ndarray, grid: Grid, xi: np.ndarray | None = None,
                          floor: float = DIVISION_FLOOR) -> CurveReport:
    """Locate interior sign changes of psi per column.

    Sign changes where both nodes lie below ``floor`` times the column max
    are treated as roundoff in the decayed tail and ignored.
    """
    if isinstance(psi, FlowState):
        xi = psi.xi
        psi = psi.psi
    if xi is None:
        xi = grid.dz(psi, 1)
    z = grid.z
    nx, ny, nz = psi.shape
    gamma = np.full((nx, ny), np.nan)
    xig = np.full((nx, ny), np.nan)
    counts = np.zeros((nx, ny), dtype=int)
    bad = []
    colmax = np.max(np.abs(psi), axis=-1)
    for i in range(nx):
        for j in range(ny):
            p = psi[i, j]
            thr = floor * colmax[i, j]
            big = np.abs(p) > thr
            idx = [k for k in range(1, nz - 2)
                   if (big[k] or big[k + 1]) and (p[k] * p[k + 1] < 0 or (p[k] == 0 and k > 0))]
            counts[i, j] = len(idx)
            if len(idx) != 1:
                bad.append((i, j))
                continue
            k = idx[0]
            k3 = k - 1 if z[k + 1] - z[k - 1] <= z[k + 2] - z[k] else k + 2
            nodes = [k, k + 1, k3]
            r = _quad_root(z[nodes], p[nodes])
            gamma[i, j] = r
            c = np.polyfit(z[nodes], xi[i, j, nodes], 2)
            xig[i, j] = np.polyval(c, r)
    if not bad:
        variant = "unique"
    elif np.all(counts == 0):
        variant = "no critical point"
    else:
        variant = "multiple critical points" if np.any(counts > 1) else "partial"
    return CurveReport(gamma, xig, counts, not bad, bad, variant)


def weighted_lower_bound(state: FlowState, delta: float = 2.5, eps_c: float = 0.2,
                         curve: CurveReport | None = None) -> float:
    """min (1+z)^delta |psi| off the eps-band around the detected curve.

    The band follows gamma(x, y) of the current state, so a curve drifting
    under the flow is not mistaken for a loss of the lower bound.
    """
    g = state.grid
    curve = curve or detect_critical_curve(state.psi, g, state.xi)
    gam = np.where(np.isfinite(curve.gamma), curve.gamma, np.inf)
    off = np.abs(g.Z - gam[..., None]) >= eps_c
    return float(np.min(((1 + g.Z) ** delta * np.abs(state.psi))[off]))


# ----- structural hypotheses -----

@dataclass
class StructuralParams:
    delta: float = 2.5
    ell: float = 1.75
    kappa: float = 1.0
    eps_c: float = 0.2
    gamma_ref: float = 1.0
    sigma: float = 1.5
    N: int = 6
    tail_ratio: float = 2.0
    C_max: float = math.inf


@dataclass
class StructuralReport:
    curve: CurveReport
    applicable: bool
    constants: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.applicable and all(self.lines.values())

    def to_dict(self) -> dict:
        return {"applicable": self.applicable, "ok": self.ok, "curve": self.curve.to_dict(),
                "constants": self.constants, "lines": self.lines, "bounds": self.bounds,
                "notes": self.notes}


def _window(z, lo, hi):
    return (z >= lo) & (z <= hi)


def _tail_ratios(vals_min, vals_max, z, z_max):
    """Compare the outer half-window against the preceding one."""
    mid, out = _window(z, z_max / 4, z_max / 2), _window(z, z_max / 2, z_max)
    lo = float(np.min(vals_min[..., out]) / max(np.min(vals_min[..., mid]), 1e-300))
    hi = float(np.max(vals_max[..., out]) / max(np.max(vals_max[..., mid]), 1e-300))
    return lo, hi


def _sup_bound_sum(state: FlowState, p: StructuralParams, order_lo: int, order_hi: int) -> float:
    """Realized constant of the sup-norm hypothesis (orders 3/4 or N+1/N+2)."""
    g = state.grid
    tw = Tower(g, state.u, state.v)
    jz = g.jz[None, None, :]
    top_u = state.u[..., -1:]
    top_v = state.v[..., -1:]
    total = 0.0
    for a1 in range(order_hi + 1):
        for a2 in range(order_hi + 1 - a1):
            a = (a1, a2)
            na = a1 + a2
            if na <= order_lo:
                uu = tw.arr("u", a, 0) - (top_u if a == ZERO else 0)
                vv = tw.arr("v", a, 0) - (top_v if a == ZERO else 0)
                total += float(np.max(np.abs(jz ** (p.ell - 1) * uu)))
                total += float(np.max(np.abs(jz ** p.kappa * vv)))
                total += float(np.max(np.abs(tw.warr(a))))
            total += float(np.max(g.l2_columns(tw.arr("u", a, 1), p.ell)))
            for j in range(1, order_hi - na + 1):
                total += float(np.max(g.l2_columns(tw.arr("u", a, 1 + j), p.ell + 1)))
            for j in range(0, order_hi - na + 1):
                total += float(np.max(g.l2_columns(tw.arr("v", a, 1 + j), p.kappa + 2)))
    return total


def check_structural(state: FlowState, curve: CurveReport | None = None,
                     params: StructuralParams | None = None) -> StructuralReport:
    """Realized constants and pass flags for each structural line."""
    p = params or StructuralParams()
    g = state.grid
    curve = curve or detect_critical_curve(state.psi, g, state.xi)
    if not np.any(state.u) and not np.any(state.v):
        return StructuralReport(curve, False, notes=["zero state: hypothesis not applicable"])
    z = g.z
    jz = g.jz
    absp = np.abs(state.psi)
    rep = StructuralReport(curve, curve.unique)
    gam = curve.gamma[np.isfinite(curve.gamma)]
    rep.constants["gamma_offset"] = float(np.max(np.abs(gam - p.gamma_ref))) if gam.size else None
    rep.lines["critical_curve"] = bool(curve.unique and np.all(np.abs(curve.xi_at_gamma) > 0))
    near = np.abs(z - p.gamma_ref) <= 2 * p.eps_c
    c2 = float(np.min(np.abs(state.xi[..., near]))) if np.any(near) else math.inf
    rep.constants["c_curvature"] = c2
    rep.lines["curvature"] = c2 > 0
    off = (np.abs(z - p.gamma_ref) >= p.eps_c)
    scaled = absp * jz ** p.delta
    c3lo = float(np.min(scaled[..., off]))
    c3hi = float(np.max(scaled[..., off]))
    lo_ratio, hi_ratio = _tail_ratios(scaled, scaled, z, z[-1])
    rep.constants.update({"c_decay_lower": c3lo, "c_decay_upper": 1.0 / c3hi if c3hi > 0 else math.inf,
                          "tail_lower_ratio": lo_ratio, "tail_upper_ratio": hi_ratio})
    rep.lines["decay_window"] = bool(c3lo > 0 and lo_ratio >= 1.0 / p.tail_ratio
                                     and hi_ratio <= p.tail_ratio)
    for first, key in ((2, "derivative_sum"), (1, "derivative_sum_with_j1")):
        ssum = sum(np.abs(g.dz(state.u, j)) for j in range(first, 7)) * jz ** (p.delta + 1)
        c4 = float(np.max(ssum))
        _, r4 = _tail_ratios(ssum, ssum, z, z[-1])
        rep.constants[f"c_{key}"] = 1.0 / c4 if c4 > 0 else math.inf
        rep.constants[f"tail_{key}_ratio"] = r4
        ok = bool(np.isfinite(c4) and r4 <= p.tail_ratio)
        if first == 2:
            rep.lines[key] = ok
        else:
            rep.bounds[key] = ok
    cands = [rep.constants[k] for k in ("c_curvature", "c_decay_lower", "c_decay_upper", "c_derivative_sum")]
    rep.constants["c"] = float(min([0.25] + [c for c in cands if c is not None]))
    if p.sigma < 1.5:
        C = _sup_bound_sum(state, p, p.N + 1, p.N + 2)
        rep.bounds["variant"] = "N-shifted"
    else:
        C = _sup_bound_sum(state, p, 3, 4)
        rep.bounds["variant"] = "standard"
    rep.constants["C"] = C
    rep.lines["sup_bounds"] = bool(np.isfinite(C) and C <= p.C_max)
    return rep


# ----- auxiliary quantities -----

@dataclass
class AuxSet:
    order: int
    alpha: tuple
    fields: dict
    unavailable: dict

    def __getitem__(self, key):
        return self.fields[key]


def _masked_ratio(num, den, mask, floor):
    """num/den on ``mask``; reports the support nodes breaching the floor."""
    colmax = np.max(np.abs(den), axis=-1, keepdims=True)
    small = np.abs(den) <= floor * colmax
    breach = bool(np.any(small & mask))
    safe = np.where(mask & ~small, den, 1.0)
    return np.where(mask & ~small, num / safe, 0.0), breach


def compute_aux(state: FlowState, cutoffs: CutoffPair, m: int = 1, alpha=None,
                floor: float = DIVISION_FLOOR) -> AuxSet:
    g = state.grid
    if m < 1:
        raise AuxError("order m must be >= 1")
    alpha = (m, 0) if alpha is None else tuple(alpha)
    tw = Tower(g, state.u, state.v)
    out: dict = {}
    bad: dict = {}
    t1 = cutoffs.tau1[None, None, :]
    t2 = cutoffs.tau2[None, None, :]
    psi, xi, eta = tw.arr("u", ZERO, 1), tw.arr("u", ZERO, 2), tw.arr("v", ZERO, 1)
    m1 = np.broadcast_to(t1 > 0, g.shape)
    m2 = np.broadcast_to(t2 > 0, g.shape)
    chi, b1 = _masked_ratio(xi, psi, m1, floor)
    b, b2 = _masked_ratio(tw.arr("u", ZERO, 3), xi, m2, floor)
    out["chi"], out["b"] = chi, b
    for d, suf in ((E1, ""), (E2, "tilde_")):
        a = mscale(d, m)
        B, Psi, X = tw.arr("u", a, 0), tw.arr("u", a, 1), tw.arr("u", a, 2)
        V = tw.arr("v", a, 0)
        if b1:
            bad[suf + "f_m"] = "psi below the division floor on supp tau1"
        else:
            out[suf + "f_m"] = t1 * (Psi - chi * B)
        if b2:
            bad[suf + "q_m"] = "xi below the division floor on supp tau2"
        else:
            out[suf + "q_m"] = t2 * (X - b * Psi)
        out[suf + "Gamma_m"] = psi * V - eta * B
        out[suf + "H_m"] = xi * V - eta * Psi
        out[suf + "G_m"] = xi * B - psi * Psi
    out["g"] = leibniz_bilinear(tw, G_TERMS, ZERO).v
    out["h"] = leibniz_bilinear(tw, H_TERMS, ZERO).v
    out["g_alpha"] = leibniz_bilinear(tw, G_TERMS, alpha).v
    out["h_alpha"] = leibniz_bilinear(tw, H_TERMS, alpha).v
    out["theta_vec"] = np.stack([leibniz_bilinear(tw, t, alpha).v for t in THETA_TERMS])
    out["mu_vec"] = np.stack([leibniz_bilinear(tw, t, alpha).v for t in MU_TERMS])
    return AuxSet(m, alpha, out, bad)


def f_m_quotient_form(state: FlowState, cutoffs: CutoffPair, m: int = 1,
                      floor: float = DIVISION_FLOOR) -> np.ndarray:
    """tau1 psi dz(d_x^m u / psi), the second form of f_m."""
    g = state.grid
    B = g.dxy(state.u, (m, 0))
    mask = np.broadcast_to(cutoffs.tau1[None, None, :] > 0, g.shape)
    band = np.abs(state.psi) > floor * np.max(np.abs(state.psi), axis=-1, keepdims=True)
    q = np.where(band, B / np.where(band, state.psi, 1.0), 0.0)
    return np.where(mask, cutoffs.tau1[None, None, :] * state.psi * g.dz(q, 1), 0.0)


# ----- representation of d_x^m u -----

@dataclass
class RepresentationSet:
    order: int
    vartheta: np.ndarray
    phi_m: np.ndarray
    alpha_m: np.ndarray
    beta_m: np.ndarray | None
    valid: np.ndarray
    G_m: np.ndarray
    notes: list = field(default_factory=list)

    def phi_G_defect(self, z, z_hi: float = 2.0) -> float:
        on = z <= z_hi
        return float(np.max(np.abs(self.phi_m[..., on] + self.G_m[..., on])))


def _interp_columns(z, f, z0):
    k = int(np.searchsorted(z, z0))
    if k < len(z) and z[k] == z0:
        return f[..., k]
    lo = max(k - 2, 0)
    nodes = slice(lo, lo + 4)
    zz = z[nodes]
    out = np.zeros(f.shape[:-1])
    for i, zi in enumerate(zz):
        li = np.prod([(z0 - zj) / (zi - zj) for j, zj in enumerate(zz) if j != i])
        out = out + li * f[..., lo + i]
    return out


def compute_representation(state: FlowState, m: int, eps_c: float = 0.2,
                           gamma_ref: float = 1.0, floor: float = DIVISION_FLOOR) -> RepresentationSet:
    """phi_m, the two-branch alpha_m and beta_m.

    The lower branch integrates from the wall to z < gamma - eps; the upper
    branch integrates from z = 2 and is used for z > gamma + eps.  Nodes
    inside the band are marked invalid and never used.
    """
    g = state.grid
    z = g.z
    tw = Tower(g, state.u, state.v)
    psi, xi = tw.arr("u", ZERO, 1), tw.arr("u", ZERO, 2)
    a = (m, 0)
    B, Psi = tw.arr("u", a, 0), tw.arr("u", a, 1)
    th = vartheta_profile(z)[0][None, None, :]
    on = np.broadcast_to(th == 1.0, g.shape)
    den = th * psi + 1 - th
    small = np.abs(psi) <= floor * np.max(np.abs(psi), axis=-1, keepdims=True)
    psi_s = np.where(small, 1.0, psi)
    phi = np.where(on, psi * Psi - xi * B, den * (Psi - xi * B / psi_s))
    Gm = xi * B - psi * Psi
    lower = z < gamma_ref - eps_c
    upper = z > gamma_ref + eps_c
    valid = np.broadcast_to(lower | upper, g.shape) & ~small
    dd = den * psi
    integrand = np.where(valid, phi / np.where(valid, dd, 1.0), 0.0)
    notes = []
    alpha = np.zeros(g.shape)
    ilo = np.nonzero(lower)[0]
    if ilo.size:
        k1 = ilo[-1] + 1
        seg = integrand[..., :k1]
        P = np.zeros_like(seg)
        P[..., 1:] = np.cumsum(0.5 * (seg[..., 1:] + seg[..., :-1]) * np.diff(z[:k1]), axis=-1)
        alpha[..., :k1] = psi[..., :k1] * P
    iup = np.nonzero(upper)[0]
    beta = None
    if iup.size:
        k0 = iup[0]
        seg = integrand[..., k0:]
        P = np.zeros_like(seg)
        P[..., 1:] = np.cumsum(0.5 * (seg[..., 1:] + seg[..., :-1]) * np.diff(z[k0:]), axis=-1)
        P2 = _interp_columns(z[k0:], P, 2.0)
        alpha[..., k0:] = psi[..., k0:] * (P - P2[..., None])
        psi2 = _interp_columns(z, psi, 2.0)
        if np.any(np.abs(psi2) <= floor * np.max(np.abs(psi), axis=-1)):
            notes.append("psi(2) below the division floor: beta_m unavailable")
        else:
            beta = _interp_columns(z, B, 2.0) / psi2
    return RepresentationSet(m, th[0, 0], phi, alpha, beta, valid, Gm, notes)


def representation_defect(state: FlowState, rep: RepresentationSet, gamma_ref: float = 1.0) -> float:
    """max |d_x^m u - alpha_m - psi beta_m 1_{z > gamma}| over valid nodes."""
    if rep.beta_m is None:
        return math.nan
    g = state.grid
    B = g.dxy(state.u, (rep.order, 0))
    ind = (g.z > gamma_ref)[None, None, :]
    d = B - rep.alpha_m - state.psi * rep.beta_m[..., None] * ind
    return float(np.max(np.abs(d[rep.valid])))
