"""Anisotropic tangential Gevrey norms, their extended and N-shifted
variants, an empirical radius fit and the elementary norm inequalities.

All tangential L^2 norms are evaluated in Fourier space: each field is
transformed once, its z-weighted energy per mode is accumulated, and the
norm of every d^alpha follows from the mode symbols.  This agrees with
physical-space differentiation followed by quadrature (Parseval) while
costing one transform per field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .auxiliary import CutoffPair, DIVISION_FLOOR, build_cutoffs
from .grid import Grid
from .jets import E1, E2, G_TERMS, H_TERMS, MU_TERMS, THETA_TERMS, ZERO, Tower, leibniz_bilinear, mscale
from .state import FlowState, OuterFlow

NOISE_FLOOR = 1e-10
SPECTRAL_FILTER = 1e-14

TRINORM_LINES = ("uv_high", "uv_low", "psi", "eta", "mixed_psi", "mixed_eta")
EXTENDED_LINES = ("hi_f", "hi_ft", "hi_G", "hi_Gt", "hi_g", "lo_f", "lo_G", "lo_g")


class GevreyError(ValueError):
    pass


@dataclass(frozen=True)
class GevreyParams:
    rho: float = 0.5
    sigma: float = 1.5
    ell: float = 1.75
    kappa: float = 1.0
    delta: float = 2.5
    m_max: int = 16
    n_shift: int | None = None

    def __post_init__(self):
        if not (0 < self.rho <= 1):
            raise GevreyError("rho must lie in (0, 1]")
        if not (1 < self.sigma <= 2):
            raise GevreyError("sigma must lie in (1, 2]")
        if not self.kappa >= 1:
            raise GevreyError("kappa must be >= 1")
        if not self.ell > 1.5:
            raise GevreyError("ell must exceed 3/2")
        if not (self.ell + 0.5 < self.delta <= self.ell + 1):
            raise GevreyError(f"delta={self.delta} violates ell + 1/2 < delta <= ell + 1 (ell={self.ell})")
        if not self.delta > 2:
            raise GevreyError("delta must exceed 2")
        if self.m_max < 8:
            raise GevreyError("m_max must be >= 8 so the high-order suprema are non-empty")
        if self.n_shift is not None:
            if self.n_shift < 2:
                raise GevreyError("n_shift must be >= 2")
            if (self.n_shift + 1) / self.n_shift > self.sigma:
                raise GevreyError("n_shift violates (N + 1)/N <= sigma")

    def with_rho(self, rho: float) -> "GevreyParams":
        return replace(self, rho=rho)

    @property
    def thresholds(self) -> tuple[int, int]:
        """(first high order, last low order)."""
        if self.n_shift is None:
            return 7, 6
        return self.n_shift + 5, self.n_shift + 4

    def to_dict(self) -> dict:
        return {"rho": self.rho, "sigma": self.sigma, "ell": self.ell, "kappa": self.kappa,
                "delta": self.delta, "m_max": self.m_max, "n_shift": self.n_shift}


def log_factor(n: int, rho: float, sigma: float, p_shift: int, f_shift: int) -> float:
    """log of rho^(n - p_shift) / ((n - f_shift)!)^sigma."""
    return (n - p_shift) * math.log(rho) - sigma * float(gammaln(n - f_shift + 1))


def F1(n, rho, sigma):
    return math.exp(log_factor(n, rho, sigma, 6, 7))


def F3(n, rho, sigma):
    return math.exp(log_factor(n, rho, sigma, 5, 6))


# ----- spectral energies -----

class SpectralEnergy:
    """Per-mode z-weighted energy of one field; norms of every d^alpha."""

    def __init__(self, grid: Grid, f: np.ndarray, a: float = 0.0, filt: float = SPECTRAL_FILTER):
        self.grid = grid
        f = np.asarray(f, dtype=float)
        twod = f.ndim == 2
        F = np.fft.rfft2(f[..., None] if twod else f, axes=(0, 1))
        mag = np.abs(F)
        top = mag.max() if mag.size else 0.0
        if top > 0 and filt > 0:
            F = np.where(mag <= filt * top, 0.0, F)
        nyh = F.shape[1]
        c = np.full(nyh, 2.0)
        c[0] = 1.0
        if grid.ny % 2 == 0:
            c[-1] = 1.0
        if twod:
            wz = np.ones(1)
            norm = grid.dx * grid.dy / (grid.nx * grid.ny)
        else:
            wz = grid.zweights * grid.jz ** (2 * a)
            norm = grid.dx * grid.dy / (grid.nx * grid.ny)
        self.P = norm * c[None, :] * np.sum(np.abs(F) ** 2 * wz[None, None, :], axis=-1)
        self.kx = np.abs(grid.kx[:, 0, 0])
        self.ky = np.abs(grid.ky[0, :, 0])
        self.nyq_x = grid.nx // 2
        self.nyq_y = nyh - 1 if grid.ny % 2 == 0 else None
        self._cache: dict = {}

    def norm(self, alpha) -> float:
        a1, a2 = alpha
        key = (a1, a2)
        if key not in self._cache:
            wx = self.kx ** (2 * a1)
            wy = self.ky ** (2 * a2)
            if a1 % 2:
                wx = wx.copy()
                wx[self.nyq_x] = 0.0
            if a2 % 2 and self.nyq_y is not None:
                wy = wy.copy()
                wy[self.nyq_y] = 0.0
            self._cache[key] = float(np.sqrt(max(np.sum(self.P * wx[:, None] * wy[None, :]), 0.0)))
        return self._cache[key]


def multi_indices(n_max: int):
    return [(a1, n - a1) for n in range(n_max + 1) for a1 in range(n, -1, -1)]


# ----- breakdown -----

@dataclass
class NormBreakdown:
    params: GevreyParams
    lines: dict = field(default_factory=dict)
    sups: dict = field(default_factory=dict)
    argsup: dict = field(default_factory=dict)
    unavailable: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(self.lines.values()))

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "total": self.total, "lines": dict(self.lines),
                "sups": dict(self.sups), "argsup": {k: list(v) if v is not None else None
                                                   for k, v in self.argsup.items()},
                "unavailable": list(self.unavailable)}


class _Sup:
    def __init__(self):
        self.value = 0.0
        self.arg = None

    def offer(self, v, arg):
        if v > self.value:
            self.value, self.arg = v, arg


def _floored(n: float, ref: float, noise: float) -> float:
    return 0.0 if n < noise * ref or n == 0.0 else n


class _Blocks:
    """Spectral energies of the fields entering the norm."""

    def __init__(self, state: FlowState, outer: OuterFlow, p: GevreyParams):
        g = state.grid
        outer = outer or OuterFlow()
        U = outer.trace("U", state.t, g)[..., None]
        V = outer.trace("V", state.t, g)[..., None]
        du, dv = state.u - U, state.v - V
        # U, V do not depend on z, so differentiating du, dv instead of u, v
        # changes nothing but keeps the pure outer state exactly zero
        self.E = {"u": SpectralEnergy(g, du, p.ell - 1),
                  "v": SpectralEnergy(g, dv, p.kappa),
                  "psi": SpectralEnergy(g, g.dz(du, 1), p.ell),
                  "eta": SpectralEnergy(g, g.dz(dv, 1), p.kappa + 2)}
        # dz^j psi is taken as D^(j+1) u: composing D^j with the one-sided
        # wall row of D^(1) amplifies its truncation error by h^-j
        for j in range(1, 5):
            self.E[f"psi{j}"] = SpectralEnergy(g, g.dz(du, j + 1), p.ell + 1)
            self.E[f"eta{j}"] = SpectralEnergy(g, g.dz(dv, j + 1), p.kappa + 2)
        self.ref = {k: e.norm(ZERO) for k, e in self.E.items()}

    def n(self, key, alpha, noise=NOISE_FLOOR):
        return _floored(self.E[key].norm(alpha), self.ref[key], noise)


def trinorm(state: FlowState, outer: OuterFlow | None, params: GevreyParams,
            blocks: _Blocks | None = None) -> NormBreakdown:
    """The six-line tangential Gevrey norm with per-line suprema."""
    p = params
    hi, lo = p.thresholds
    if p.m_max < hi + 1:
        raise GevreyError(f"m_max={p.m_max} leaves the high-order suprema empty")
    B = blocks or _Blocks(state, outer, p)
    S = {k: _Sup() for k in ("uv_high", "uv_low", "psi_high", "psi_low", "eta_high", "eta_low",
                             "mixed_psi_high", "mixed_psi_low", "mixed_eta_high", "mixed_eta_low")}
    r, s = p.rho, p.sigma
    for a in multi_indices(p.m_max):
        n = a[0] + a[1]
        uv = B.n("u", a) + B.n("v", a)
        if n >= hi:
            S["uv_high"].offer(F1(n, r, s) * uv, a)
            S["psi_high"].offer(F1(n, r, s) * B.n("psi", a), a)
            S["eta_high"].offer(F3(n, r, s) * n * B.n("eta", a), a)
        if n <= lo:
            S["uv_low"].offer(uv, a)
            S["psi_low"].offer(B.n("psi", a), a)
            S["eta_low"].offer(B.n("eta", a), a)
        for j in range(1, 5):
            nj = n + j
            if nj > p.m_max:
                continue
            if nj >= hi:
                S["mixed_psi_high"].offer(F1(nj, r, s) * B.n(f"psi{j}", a), a + (j,))
                S["mixed_eta_high"].offer(F3(nj, r, s) * n * B.n(f"eta{j}", a), a + (j,))
            if nj <= lo:
                S["mixed_psi_low"].offer(B.n(f"psi{j}", a), a + (j,))
                S["mixed_eta_low"].offer(B.n(f"eta{j}", a), a + (j,))
    out = NormBreakdown(p)
    for k, v in S.items():
        out.sups[k] = v.value
        out.argsup[k] = v.arg
    out.lines = {"uv_high": S["uv_high"].value, "uv_low": S["uv_low"].value,
                 "psi": S["psi_high"].value + S["psi_low"].value,
                 "eta": S["eta_high"].value + S["eta_low"].value,
                 "mixed_psi": S["mixed_psi_high"].value + S["mixed_psi_low"].value,
                 "mixed_eta": S["mixed_eta_high"].value + S["mixed_eta_low"].value}
    return out


# ----- extended norm -----

def _aux_norms(state: FlowState, cut: CutoffPair, p: GevreyParams, floor: float = DIVISION_FLOOR):
    """Weighted norms of the auxiliary quantities for every order."""
    g = state.grid
    tw = Tower(g, state.u, state.v)
    psi, xi, eta = tw.arr("u", ZERO, 1), tw.arr("u", ZERO, 2), tw.arr("v", ZERO, 1)
    t1 = cut.tau1[None, None, :]
    t2 = cut.tau2[None, None, :]
    m1 = np.broadcast_to(t1 > 0, g.shape)
    m2 = np.broadcast_to(t2 > 0, g.shape)
    small1 = np.abs(psi) <= floor * np.max(np.abs(psi), axis=-1, keepdims=True)
    small2 = np.abs(xi) <= floor * np.max(np.abs(xi), axis=-1, keepdims=True)
    chi = np.where(m1 & ~small1, xi / np.where(small1, 1.0, psi), 0.0)
    b = np.where(m2 & ~small2, tw.arr("u", ZERO, 3) / np.where(small2, 1.0, xi), 0.0)
    per_m: dict = {}
    unavailable = []
    wl, wkd = p.ell, p.kappa + p.delta
    for m in range(1, p.m_max + 1):
        for d, tag in ((E1, ""), (E2, "t")):
            a = mscale(d, m)
            Bm, Psi, X, V = tw.arr("u", a, 0), tw.arr("u", a, 1), tw.arr("u", a, 2), tw.arr("v", a, 0)
            if np.any(m1 & small1 & (Bm != 0)):
                unavailable.append(f"f{tag}_{m}")
            if np.any(m2 & small2 & (Psi != 0)):
                unavailable.append(f"q{tag}_{m}")
            f = t1 * (Psi - chi * Bm)
            q = t2 * (X - b * Psi)
            per_m[(tag, m)] = {
                "f": g.l2(f, wl) + g.l2(q) + g.l2(t2 * X),
                "G": g.l2(psi * V - eta * Bm, wkd) + g.l2(xi * Bm - psi * Psi) + g.l2(xi * V - eta * Psi),
            }
    gfield = leibniz_bilinear(tw, G_TERMS, ZERO).v
    hfield = leibniz_bilinear(tw, H_TERMS, ZERO).v
    E = {"g": SpectralEnergy(g, gfield, wkd), "h": SpectralEnergy(g, hfield, wkd)}
    for j, terms in enumerate(THETA_TERMS, 1):
        E[f"theta{j}"] = SpectralEnergy(g, leibniz_bilinear(tw, terms, ZERO).v)
    for j, terms in enumerate(MU_TERMS, 1):
        E[f"mu{j}"] = SpectralEnergy(g, leibniz_bilinear(tw, terms, ZERO).v)
    ref = {k: e.norm(ZERO) for k, e in E.items()}

    def galpha(a):
        n = {k: _floored(e.norm(a), ref[k], NOISE_FLOOR) for k, e in E.items()}
        th = math.sqrt(sum(n[f"theta{j}"] ** 2 for j in (1, 2, 3)))
        mu = math.sqrt(sum(n[f"mu{j}"] ** 2 for j in (1, 2, 3)))
        return n["g"] + n["h"] + th + mu

    return per_m, galpha, unavailable


def extended_norm(state: FlowState, outer: OuterFlow | None, params: GevreyParams,
                  cutoffs: CutoffPair | None = None, eps_c: float = 0.2, gamma_ref: float = 1.0,
                  base: NormBreakdown | None = None, aux=None) -> NormBreakdown:
    """Norm plus the auxiliary-quantity suprema; the base norm is a summand.

    ``aux`` is a precomputed result of the auxiliary-norm pass at the same
    state (see :class:`NormEvaluator`); it must cover orders up to m_max.
    """
    p = params
    hi, lo = p.thresholds
    tri = base or trinorm(state, outer, p)
    if aux is None:
        cut = cutoffs or build_cutoffs(eps_c, gamma_ref, state.grid)
        aux = _aux_norms(state, cut, p)
    per_m, galpha, unavailable = aux
    if ("", p.m_max) not in per_m:
        raise GevreyError(f"auxiliary norms missing for orders up to m_max={p.m_max}")
    r, s = p.rho, p.sigma
    S = {k: _Sup() for k in EXTENDED_LINES}
    for m in range(1, p.m_max + 1):
        fx, ft = per_m[("", m)], per_m[("t", m)]
        if m >= hi:
            S["hi_f"].offer(F1(m, r, s) * fx["f"], (m,))
            S["hi_ft"].offer(F1(m, r, s) * ft["f"], (m,))
            S["hi_G"].offer(F1(m, r, s) * fx["G"], (m,))
            S["hi_Gt"].offer(F1(m, r, s) * ft["G"], (m,))
        if m <= lo:
            S["lo_f"].offer(fx["f"] + ft["f"], (m,))
            S["lo_G"].offer(fx["G"] + ft["G"], (m,))
    for a in multi_indices(p.m_max):
        n = a[0] + a[1]
        v = galpha(a)
        if n >= hi:
            S["hi_g"].offer(F3(n, r, s) * n * v, a)
        if n <= lo:
            S["lo_g"].offer(v, a)
    out = NormBreakdown(p, dict(tri.lines), dict(tri.sups), dict(tri.argsup), unavailable)
    for k, v in S.items():
        out.lines[k] = v.value
        out.sups[k] = v.value
        out.argsup[k] = v.arg
    if out.total < tri.total:
        raise GevreyError("extended norm fell below the base norm")
    return out


class NormEvaluator:
    """Spectral energies and auxiliary norms of one state, reusable across rho."""

    def __init__(self, state: FlowState, outer: OuterFlow | None, params: GevreyParams,
                 cutoffs: CutoffPair | None = None, extended: bool = True):
        self.state, self.outer, self.params = state, outer, params
        self.blocks = _Blocks(state, outer, params)
        self.aux = None
        if extended:
            cut = cutoffs or build_cutoffs(0.2, 1.0, state.grid)
            self.aux = _aux_norms(state, cut, params)

    def trinorm(self, rho: float) -> NormBreakdown:
        return trinorm(self.state, self.outer, self.params.with_rho(rho), self.blocks)

    def extended(self, rho: float) -> NormBreakdown:
        if self.aux is None:
            raise GevreyError("evaluator was built without auxiliary norms")
        p = self.params.with_rho(rho)
        return extended_norm(self.state, self.outer, p, base=self.trinorm(rho), aux=self.aux)

    def norm(self, rho: float, extended: bool = True) -> NormBreakdown:
        return self.extended(rho) if extended and self.aux is not None else self.trinorm(rho)


def norm_variant_N(state: FlowState, outer: OuterFlow | None, params: GevreyParams,
                   extended: bool = False, cutoffs: CutoffPair | None = None) -> NormBreakdown:
    """Norm with the split orders moved from 7/6 to N+5/N+4."""
    if params.sigma >= 1.5:
        raise GevreyError("the N-shifted variant is only used for sigma < 3/2")
    p = params if params.n_shift is not None else replace(params, n_shift=max(2, math.ceil(1 / (params.sigma - 1))))
    if p.m_max < p.thresholds[0] + 1:
        p = replace(p, m_max=p.thresholds[0] + 4)
    if extended:
        return extended_norm(state, outer, p, cutoffs)
    return trinorm(state, outer, p)


# ----- radius fit -----

def radius_fit_from_norms(ms, norms, sigma: float) -> dict:
    """Fit log n_m = A + sigma log((m-7)!) - (m-6) log R by least squares."""
    ms = np.asarray(ms, dtype=float)
    y = np.log(np.asarray(norms, dtype=float)) - sigma * gammaln(ms - 6)
    A = np.vstack([np.ones_like(ms), -(ms - 6)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return {"radius": float(math.exp(coef[1])), "log_amplitude": float(coef[0])}


def fit_radius(state: FlowState, outer: OuterFlow | None, params: GevreyParams) -> float:
    """Empirical radius from the decay of ||d_x^m (u - U)||, 7 <= m <= m_max.

    The fitted R is the largest rho for which rho^(m-6) ||d_x^m (u-U)|| / ((m-7)!)^sigma
    stays bounded by exp(A) along the fitted model.  Returns +inf when fewer than
    three orders rise above the noise floor.
    """
    g = state.grid
    U = (outer or OuterFlow()).trace("U", state.t, g)[..., None]
    E = SpectralEnergy(g, state.u - U, params.ell - 1)
    ref = E.norm(ZERO)
    ms, ns = [], []
    for m in range(7, params.m_max + 1):
        n = _floored(E.norm((m, 0)), ref, NOISE_FLOOR)
        if n > 0:
            ms.append(m)
            ns.append(n)
    if len(ms) < 3:
        return math.inf
    return radius_fit_from_norms(ms, ns, params.sigma)["radius"]


def planted_field(grid: Grid, K: float, sigma: float, profile=None) -> np.ndarray:
    """sum_k exp(-K k^(1/sigma)) cos(k x) times a z profile (default z e^-z)."""
    prof = grid.z * np.exp(-grid.z) if profile is None else np.asarray(profile, dtype=float)
    k = np.arange(1, grid.nx // 2)
    row = np.cos(np.outer(grid.x, k)) @ np.exp(-K * k ** (1.0 / sigma))
    return np.broadcast_to(row[:, None, None] * prof[None, None, :], grid.shape).copy()


def planted_radius_reference(K: float, sigma: float, m_max: int = 16, k_cut: int = 100000) -> dict:
    """Radius model fitted to the closed-form mode sums of the planted field.

    ||d_x^m f|| is proportional to (sum_k k^(2m) exp(-2 K k^(1/sigma)))^(1/2);
    the common z and amplitude factors drop into the intercept.  Also returns
    the asymptotic radius (K/sigma)^sigma and the ratio between the two, which
    is the polynomial bias of the (m-7)! model on this class of spectra.
    """
    k = np.arange(1, k_cut + 1, dtype=float)
    logc = -2 * K * k ** (1.0 / sigma)
    ms = np.arange(7, m_max + 1)
    logn = []
    for m in ms:
        a = 2 * m * np.log(k) + logc
        top = a.max()
        logn.append(0.5 * (top + np.log(np.sum(np.exp(a - top)))))
    fit = radius_fit_from_norms(ms, np.exp(logn), sigma)
    asym = (K / sigma) ** sigma
    return {"radius": fit["radius"], "asymptotic": asym, "bias": fit["radius"] / asym}


# ----- elementary inequalities -----

@dataclass
class InequalityReport:
    factor_worst_slack: float
    factor_cases: int
    realp_worst_slack: float
    realp_cases: int
    tol: float = 1e-12

    @property
    def ok(self) -> bool:
        return self.factor_worst_slack >= -self.tol and self.realp_worst_slack >= -self.tol

    def to_dict(self) -> dict:
        return {"factor_worst_slack": self.factor_worst_slack, "factor_cases": self.factor_cases,
                "realp_worst_slack": self.realp_worst_slack, "realp_cases": self.realp_cases,
                "ok": self.ok}


def factor_slack(k: int, rho: float, rho_t: float) -> float:
    """Smaller relative slack of the two-sided bound k q^k <= k q^k / rho~ <= 1/(rho~ - rho)."""
    q = rho / rho_t
    a = k * q ** k
    b = a / rho_t
    c = 1.0 / (rho_t - rho)
    return min((b - a) / max(b, 1e-300), (c - b) / c)


def random_torus_field(grid: Grid, rng: np.random.Generator, decay: float = 0.5) -> np.ndarray:
    """Random real trig polynomial on T^2 without Nyquist content."""
    kx = grid.kx[:, 0, 0]
    ky = grid.ky[0, :, 0]
    amp = np.exp(-decay * (np.abs(kx)[:, None] + np.abs(ky)[None, :]))
    F = (rng.standard_normal(amp.shape) + 1j * rng.standard_normal(amp.shape)) * amp
    F[grid.nx // 2, :] = 0.0
    F[:, -1] = 0.0
    return np.fft.irfft2(F, s=(grid.nx, grid.ny))


def realp_slack(E: SpectralEnergy, alpha) -> float:
    n = alpha[0] + alpha[1]
    lhs = E.norm(alpha) ** 2
    rhs = E.norm((n, 0)) ** 2 + E.norm((0, n)) ** 2
    scale = max(rhs, lhs, 1e-300)
    return (rhs - lhs) / scale if scale > 1e-300 else 0.0


def check_inequalities(params: GevreyParams | None = None, trials: int = 100, seed: int = 0,
                       k_max: int = 64, pairs: int = 1000, grid: Grid | None = None,
                       alpha_max: int = 8) -> InequalityReport:
    if trials < 1:
        raise GevreyError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst_f = math.inf
    nf = 0
    for _ in range(pairs):
        r1, r2 = np.sort(rng.uniform(1e-3, 1.0, size=2))
        if r2 - r1 < 1e-9:
            continue
        for k in range(1, k_max + 1):
            worst_f = min(worst_f, factor_slack(k, r1, r2))
            nf += 1
    if grid is None:
        from .grid import GridSpec
        grid = GridSpec(32, 32, 16).build()
    worst_r = math.inf
    nr = 0
    for _ in range(trials):
        F = random_torus_field(grid, rng)
        E = SpectralEnergy(grid, F, filt=0.0)
        for a in multi_indices(alpha_max):
            worst_r = min(worst_r, realp_slack(E, a))
            nr += 1
    return InequalityReport(worst_f, nf, worst_r, nr)
