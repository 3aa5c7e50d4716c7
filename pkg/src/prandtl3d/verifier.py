"""Residuals on stored trajectories, the companion g evolution and the
empirical a priori monitor.

Time derivatives of snapshots come from three-point Lagrange differencing
(central in the interior, one-sided at the ends), so verification does not
depend on the scheme that produced the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .auxiliary import CutoffPair, build_cutoffs
from .gevrey import GevreyParams, NormEvaluator
from .identities import (BaseCache, Context, IdentityError, ResidualReport, base_equation,
                         fm_equation, g_equation, gamma_equation, h_equation, make_report,
                         qm_equation, xi_weighted_equation)
from .jets import G_TERMS, ZERO, Tower, leibniz_bilinear
from .solver import ImplicitOperator, apply_A
from .state import FlowState, OuterFlow


class TrajectoryError(ValueError):
    pass


def _check_grids(states):
    g0 = states[0].grid
    for s in states[1:]:
        if s.grid.spec != g0.spec:
            raise TrajectoryError("snapshots live on different grids")


def lagrange_dt(ts, fs, i: int):
    """d/dt at ts[i] from the quadratic through three neighbouring snapshots."""
    n = len(ts)
    if n < 2:
        raise TrajectoryError("time derivative needs at least two snapshots")
    if n == 2:
        return (fs[1] - fs[0]) / (ts[1] - ts[0])
    j = min(max(i - 1, 0), n - 3)
    t0, t1, t2 = ts[j], ts[j + 1], ts[j + 2]
    t = ts[i]
    c0 = ((t - t1) + (t - t2)) / ((t0 - t1) * (t0 - t2))
    c1 = ((t - t0) + (t - t2)) / ((t1 - t0) * (t1 - t2))
    c2 = ((t - t0) + (t - t1)) / ((t2 - t0) * (t2 - t1))
    return c0 * fs[j] + c1 * fs[j + 1] + c2 * fs[j + 2]


def snapshot_context(states, i: int, outer: OuterFlow | None = None) -> Context:
    """Residual context at snapshot ``i`` with differenced time derivatives."""
    _check_grids(states)
    ts = [s.t for s in states]
    if len(set(ts)) != len(ts):
        raise TrajectoryError("snapshot times must be distinct")
    s = states[i]
    ut = lagrange_dt(ts, [x.u for x in states], i)
    vt = lagrange_dt(ts, [x.v for x in states], i)
    tw = Tower(s.grid, s.u, s.v, ut, vt)
    px = py = None
    if outer is not None:
        px, py = outer.pressure_gradient(s.t, s.grid)
    return Context(tw, px, py, s.epsilon)


def interior_mask(grid, order: int = 3) -> np.ndarray:
    """Nodes whose D^(order) stencil avoids the wall and top rows.

    A run imposes Dirichlet data on those rows instead of the equation, and
    every normal derivative whose stencil reaches them inherits that defect.
    """
    D = grid.dz_matrix(order)
    ok = (D[:, 0] == 0) & (D[:, -1] == 0)
    ok[0] = ok[-1] = False
    return ok


def interior(res, grid, order: int = 3):
    keep = interior_mask(grid, order)
    for name in ("residual", "recombination", "forcing_image"):
        a = getattr(res, name)
        if a is not None:
            a = np.where(keep, np.broadcast_to(a, grid.shape), 0.0)
            setattr(res, name, a)
    return res


def _report(res, grid):
    return make_report(interior(res, grid), grid)


def residual_base(states, outer: OuterFlow | None = None, i: int | None = None,
                  ms=(1, 2, 3)) -> list[ResidualReport]:
    """Reports for the u, v, psi, eta, xi, zeta equations and d_x^m of u, psi.

    Residuals are measured on the nodes given by :func:`interior_mask`.
    """
    i = len(states) // 2 if i is None else i
    ctx = snapshot_context(states, i, outer)
    out = []
    for f in ("u", "v", "psi", "eta", "xi", "zeta"):
        out.append(_report(base_equation(ctx, f), ctx.grid))
    for m in ms:
        for f in ("u", "psi"):
            r = base_equation(ctx, f, (m, 0))
            r.name = f"base:{f}_m"
            out.append(_report(r, ctx.grid))
    return out


def _cut(states, cutoffs):
    return cutoffs or build_cutoffs(0.2, 1.0, states[0].grid)


def residual_fm(states, cutoffs: CutoffPair | None = None, m: int = 1, outer=None, i=None):
    i = len(states) // 2 if i is None else i
    ctx = snapshot_context(states, i, outer)
    return _report(fm_equation(ctx, _cut(states, cutoffs), m), ctx.grid)


def residual_gamma(states, m: int = 1, outer=None, i=None):
    i = len(states) // 2 if i is None else i
    ctx = snapshot_context(states, i, outer)
    return _report(gamma_equation(ctx, m), ctx.grid)


def residual_g(states, alpha=ZERO, outer=None, i=None, which: str = "g"):
    i = len(states) // 2 if i is None else i
    ctx = snapshot_context(states, i, outer)
    res = g_equation(ctx, alpha) if which == "g" else h_equation(ctx, alpha)
    return _report(res, ctx.grid)


def residual_qm(states, cutoffs: CutoffPair | None = None, m: int = 1, outer=None, i=None):
    i = len(states) // 2 if i is None else i
    ctx = snapshot_context(states, i, outer)
    return _report(qm_equation(ctx, _cut(states, cutoffs), m), ctx.grid)


def residual_xi_weighted(states, cutoffs: CutoffPair | None = None, m: int = 1, outer=None, i=None):
    """Report, or None with the reason when xi changes sign on supp tau2."""
    i = len(states) // 2 if i is None else i
    ctx = snapshot_context(states, i, outer)
    try:
        return _report(xi_weighted_equation(ctx, _cut(states, cutoffs), m, cache=BaseCache(ctx)),
                           ctx.grid)
    except IdentityError as e:
        return ResidualReport("xi_weighted", m, math.nan, math.nan, math.nan, None,
                              (ctx.grid.nx, ctx.grid.ny, ctx.grid.nz), None, f"skipped: {e}")


def trajectory_residuals(states, outer=None, cutoffs=None, ms=(1, 2, 3)) -> list[ResidualReport]:
    """Every residual at every snapshot that has two neighbours."""
    if len(states) < 3:
        raise TrajectoryError("residuals need at least three snapshots")
    out = []
    for i in range(1, len(states) - 1):
        reps = residual_base(states, outer, i, ms)
        for m in ms:
            reps += [residual_fm(states, cutoffs, m, outer, i), residual_gamma(states, m, outer, i),
                     residual_qm(states, cutoffs, m, outer, i),
                     residual_xi_weighted(states, cutoffs, m, outer, i)]
        reps += [residual_g(states, ZERO, outer, i), residual_g(states, ZERO, outer, i, "h")]
        for r in reps:
            r.note = (r.note + f" t={states[i].t:.6g}").strip()
        out += reps
    return out


# ----- companion g evolution -----

def g_direct(state: FlowState) -> np.ndarray:
    """g = (dy v) psi - (dy u) eta from the stored velocity."""
    return leibniz_bilinear(Tower(state.grid, state.u, state.v), G_TERMS, ZERO).v


def g_source(state: FlowState) -> np.ndarray:
    """Right-hand side 2 (dy psi) dz eta - 2 (dy eta) dz psi."""
    tw = Tower(state.grid, state.u, state.v)
    return 2 * (tw.arr("u", (0, 1), 1) * tw.arr("v", ZERO, 2) - tw.arr("v", (0, 1), 1) * tw.arr("u", ZERO, 2))


@dataclass
class CompanionResult:
    times: list
    drift: list
    g_norm: list
    scheme: str

    @property
    def max_drift(self) -> float:
        return max(self.drift) if self.drift else 0.0

    def to_rows(self):
        return [{"t": t, "drift": d, "g_norm": n} for t, d, n in zip(self.times, self.drift, self.g_norm)]


def companion_g(states, epsilon: float = 0.0, scheme: str = "imex-cn-ab2") -> CompanionResult:
    """Step the g equation with coefficients frozen from a stride-1 run.

    The companion G starts from the directly computed g, uses the same IMEX
    scheme as the run (implicit normal diffusion, Adams-Bashforth transport
    and source) and takes its boundary values from the direct g.  Drift is
    ||G - g||_{L^2} / max_t ||g||_{L^2} at each epoch.
    """
    _check_grids(states)
    if len(states) < 2:
        raise TrajectoryError("companion evolution needs at least two snapshots")
    g = states[0].grid
    dts = np.diff([s.t for s in states])
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-9, atol=0):
        raise TrajectoryError("companion evolution needs uniformly spaced snapshots")
    theta = 0.5 if scheme == "imex-cn-ab2" else 1.0
    op = ImplicitOperator(g, dt, epsilon, theta)
    direct = [g_direct(s) for s in states]
    scale = max(max(g.l2(d) for d in direct), 1e-300)
    G = direct[0].copy()
    prev = None
    times, drift, norms = [states[0].t], [0.0], [g.l2(direct[0])]
    for n in range(len(states) - 1):
        s = states[n]
        N = -(s.u * g.dxy(G, (1, 0)) + s.v * g.dxy(G, (0, 1)) + s.w * g.dz(G, 1)) + g_source(s)
        if theta == 1.0 or prev is None:
            e = N
        else:
            e = 1.5 * N - 0.5 * prev
        prev = N
        rhs = G + dt * e
        if theta < 1.0:
            rhs = rhs + (1 - theta) * dt * apply_A(g, G, epsilon)
        nxt = direct[n + 1]
        rhs[..., 0], rhs[..., -1] = nxt[..., 0], nxt[..., -1]
        G = g.ifft(op.solve(g.fft(rhs)))
        G[..., 0], G[..., -1] = nxt[..., 0], nxt[..., -1]
        times.append(states[n + 1].t)
        drift.append(g.l2(G - nxt) / scale)
        norms.append(g.l2(nxt))
    return CompanionResult(times, drift, norms, scheme)


# ----- a priori monitor -----

def _trapz_cumulative(ts, ys):
    out = [0.0]
    for k in range(1, len(ts)):
        out.append(out[-1] + 0.5 * (ys[k] + ys[k - 1]) * (ts[k] - ts[k - 1]))
    return out


@dataclass
class AprioriTrace:
    times: list
    rho_grid: list
    norms_sq: dict                      # rho -> list of |a|^2 per epoch
    pairs: list = field(default_factory=list)
    integrals: dict = field(default_factory=dict)   # (rho, rho~) -> (I, J) lists
    ratios: dict = field(default_factory=dict)      # (rho, rho~) -> per-epoch ratio
    c_star: dict = field(default_factory=dict)      # (rho, rho~) -> fitted constant
    peak_ratio: dict = field(default_factory=dict)  # (rho, rho~) -> max ratio over t > 0
    violation_epoch: int | None = None
    violation_time: float | None = None
    c_max: float = 1e3
    variant: str = "standard"

    @property
    def flagged(self) -> bool:
        return self.violation_epoch is not None

    @property
    def worst_c_star(self) -> float:
        return max(self.c_star.values()) if self.c_star else 1.0

    def to_dict(self) -> dict:
        key = lambda p: f"{p[0]:g}-{p[1]:g}"  # noqa: E731
        return {"times": list(self.times), "rho_grid": list(self.rho_grid), "variant": self.variant,
                "norms_sq": {f"{r:g}": v for r, v in self.norms_sq.items()},
                "c_star": {key(p): c for p, c in self.c_star.items()},
                "peak_ratio": {key(p): c for p, c in self.peak_ratio.items()},
                "worst_c_star": self.worst_c_star, "violation_epoch": self.violation_epoch,
                "violation_time": self.violation_time, "c_max": self.c_max}

    def to_rows(self):
        rows = []
        for k, t in enumerate(self.times):
            row = {"t": t}
            for r in self.rho_grid:
                row[f"a2_rho{r:g}"] = self.norms_sq[r][k]
            for p in self.pairs:
                row[f"ratio_{p[0]:g}_{p[1]:g}"] = self.ratios[p][k]
            rows.append(row)
        return rows


def epoch_norms(states, outer, params: GevreyParams, rho_grid, cutoffs=None,
                extended: bool = True) -> dict:
    """|a|^2 per rho per epoch; non-finite states give +inf."""
    out = {r: [] for r in rho_grid}
    for s in states:
        finite = np.all(np.isfinite(s.u)) and np.all(np.isfinite(s.v))
        if not finite:
            for r in rho_grid:
                out[r].append(math.inf)
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            ev = NormEvaluator(s, outer, params, cutoffs, extended=extended)
            for r in rho_grid:
                v = ev.norm(r, extended).total
                out[r].append(v * v if math.isfinite(v) else math.inf)
    return out


def monitor_apriori(states, params: GevreyParams, rho_grid, outer: OuterFlow | None = None,
                    cutoffs: CutoffPair | None = None, c_max: float = 1e3,
                    extended: bool = True, norms_sq: dict | None = None) -> AprioriTrace:
    """Smallest C_* >= 1 making the a priori inequality hold at every epoch.

    For each adjacent pair rho < rho~ of ``rho_grid`` and each epoch t_i the
    required constant is A_i / (A_0 + I_i + J_i) with A = |a|^2_rho,
    I = int (A + A^2) ds and J = int |a|^2_rho~ / (rho~ - rho) ds (trapezoid
    over epochs).  The first epoch whose required constant exceeds ``c_max``
    or whose norm is not finite is flagged.  With sigma < 3/2 the norms use
    the N-shifted split orders.
    """
    rho_grid = sorted(float(r) for r in rho_grid)
    if len(rho_grid) < 2:
        raise TrajectoryError("the monitor needs at least two rho values")
    variant = "standard"
    if params.sigma < 1.5 and params.n_shift is None:
        from dataclasses import replace
        params = replace(params, n_shift=max(2, math.ceil(1 / (params.sigma - 1))))
    if params.n_shift is not None:
        variant = f"N={params.n_shift}"
        if params.m_max < params.thresholds[0] + 1:
            from dataclasses import replace
            params = replace(params, m_max=params.thresholds[0] + 4)
    ts = [s.t for s in states]
    A = norms_sq or epoch_norms(states, outer, params, rho_grid, cutoffs, extended)
    tr = AprioriTrace(ts, rho_grid, A, c_max=c_max, variant=variant)
    first_bad = None
    for r, rt in zip(rho_grid[:-1], rho_grid[1:]):
        a = A[r]
        with np.errstate(over="ignore", invalid="ignore"):
            I = _trapz_cumulative(ts, [x + x * x for x in a])
            J = _trapz_cumulative(ts, [x / (rt - r) for x in A[rt]])
        ratios = []
        for k in range(len(ts)):
            den = a[0] + I[k] + J[k]
            if not (math.isfinite(a[k]) and math.isfinite(den)):
                ratios.append(math.inf)
            elif a[k] == 0:
                ratios.append(0.0)
            elif den == 0:
                ratios.append(math.inf)
            else:
                ratios.append(a[k] / den)
        pair = (r, rt)
        tr.pairs.append(pair)
        tr.integrals[pair] = (I, J)
        tr.ratios[pair] = ratios
        tr.c_star[pair] = max([1.0] + ratios)
        tr.peak_ratio[pair] = max(ratios[1:]) if len(ratios) > 1 else 0.0
        for k, q in enumerate(ratios):
            if not q <= c_max:
                if first_bad is None or k < first_bad:
                    first_bad = k
                break
    if first_bad is not None:
        tr.violation_epoch = first_bad
        tr.violation_time = ts[first_bad]
    return tr
