"""The eleven acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary, before
asserting.  Run alone with ``pytest tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest

from prandtl3d.auxiliary import (build_cutoffs, compute_aux, compute_representation, detect_critical_curve,
                                 representation_defect, weighted_lower_bound)
from prandtl3d.gevrey import GevreyParams, NormEvaluator, TRINORM_LINES, norm_variant_N, trinorm
from prandtl3d.grid import GridSpec
from prandtl3d.solver import SolverConfig, run
from prandtl3d.state import OuterFlow, canonical_profile, divergence_report, make_state, tanh_profile
from prandtl3d.suites import suite_identities, suite_inequalities, suite_mms, suite_structural
from prandtl3d.verifier import companion_g, monitor_apriori

from .conftest import ACCEPTANCE, smooth_random_field
from .oracles import heat_reference, single_mode_trinorm

RHO = (0.3, 0.6)


def report(n: int, title: str, ok: bool, detail: str, t0: float):
    ACCEPTANCE.append(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
                      f"[{time.perf_counter() - t0:.1f}s]")
    assert ok, detail


def canonical_run(dt, t_end=0.05, epsilon=1e-3, stride=1, nz=65, pert=0.1):
    g = GridSpec(16, 16, nz).build()
    u, v = canonical_profile(g, pert=pert, vpert=pert)
    outer = OuterFlow(U=float(u[0, 0, -1]))
    return run(make_state(g, u, v), outer, SolverConfig(dt=dt, t_end=t_end, epsilon=epsilon), stride=stride), outer


def tanh_run(dt, t_end=0.04, stride=1):
    g = GridSpec(16, 16, 65).build()
    u, v = tanh_profile(g)
    return run(make_state(g, u, v), OuterFlow(U=1.0), SolverConfig(dt=dt, t_end=t_end), stride=stride)


@pytest.fixture(scope="module")
def runs():
    """Every trajectory the criteria below rely on, keyed by name."""
    out = {}
    for dt in (2e-3, 1e-3):
        out[f"canonical dt={dt:g}"] = canonical_run(dt)
        out[f"tanh dt={dt:g}"] = (tanh_run(dt), OuterFlow(U=1.0))
    g = GridSpec(16, 16, 65).build()
    u, v = canonical_profile(g, pert=3.0, vpert=3.0)
    outer = OuterFlow(U=float(np.mean(u[..., -1])))
    cfg = SolverConfig(dt=0.05, t_end=1.5, check_cfl=False, blowup_factor=math.inf)
    with np.errstate(over="ignore", invalid="ignore"):
        out["blow-up"] = (run(make_state(g, u, v), outer, cfg), outer)
    return out


def test_c1_divergence(runs):
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    with np.errstate(over="ignore", invalid="ignore"):
        for tr, _ in runs.values():
            for s in tr.snapshots:
                if np.all(np.isfinite(s.u)) and np.all(np.isfinite(s.v)):
                    worst = max(worst, divergence_report(s)["interior"])
                    n += 1
    report(1, "divergence identity", worst <= 1e-10, f"max relative {worst:.2e} over {n} snapshots (tol 1e-10)", t0)


def test_c2_shear_oracle():
    t0 = time.perf_counter()
    g = GridSpec(16, 16, 128).build()
    u, v = tanh_profile(g)
    tr = run(make_state(g, u, v), OuterFlow(U=1.0), SolverConfig(dt=1e-3, t_end=0.1, epsilon=0.0))
    ref = heat_reference(g.z, np.tanh, 1.0, 0.1, 8 * g.nz, g.z[-1])
    num = tr.snapshots[-1].u
    err = math.sqrt(np.sum(g.zweights * (num[0, 0] - ref) ** 2) / np.sum(g.zweights * ref ** 2))
    flat = float(np.max(np.abs(num - num[:1, :1])))
    ok = err <= 1e-4 and flat == 0.0
    report(2, "shear oracle", ok, f"relative L2 {err:.2e} (tol 1e-4), tangential spread {flat:.1e}", t0)


def _suite_line(n, title, checks, t0):
    bad = [c.name for c in checks if not c.passed]
    vals = "; ".join(f"{c.name}={c.value:.4g}" for c in checks if c.value is not None)
    report(n, title, not bad, f"{len(checks) - len(bad)}/{len(checks)} checks ({vals})" +
           (f" failed: {bad}" if bad else ""), t0)


def test_c3_mms():
    t0 = time.perf_counter()
    _suite_line(3, "MMS convergence", suite_mms(), t0)


def test_c4_derived_equations():
    t0 = time.perf_counter()
    _suite_line(4, "derived-equation certification", suite_identities(), t0)


def test_c5_companion(runs):
    t0 = time.perf_counter()
    tr, _ = runs["canonical dt=0.001"]
    res = companion_g(tr.snapshots)
    report(5, "two-way g consistency", res.max_drift <= 1e-3,
           f"max relative drift {res.max_drift:.2e} over t in [0, {tr.snapshots[-1].t:g}] (tol 1e-3)", t0)


def test_c6_representation():
    t0 = time.perf_counter()
    parts, ok = [], True
    states = []
    for nz in (65, 129, 257):
        g = GridSpec(16, 16, nz).build()
        u, v = canonical_profile(g, pert=0.1, vpert=0.1)
        states.append(make_state(g, u, v))
    for m in (1, 2, 3):
        defects = [representation_defect(s, compute_representation(s, m)) for s in states]
        orders = [math.log2(a / b) for a, b in zip(defects, defects[1:])]
        s0 = states[0]
        on = s0.grid.z <= 2.0
        # phi_m from the representation against G_m from the auxiliary engine
        G = compute_aux(s0, build_cutoffs(0.2, 1.0, s0.grid), m)["G_m"]
        phi = float(np.max(np.abs(compute_representation(s0, m).phi_m[..., on] + G[..., on])))
        ok &= min(orders) >= 1.0 and defects[0] > defects[1] > defects[2] and phi <= 1e-10
        parts.append(f"m={m} defects {defects[0]:.1e}->{defects[-1]:.1e} order {min(orders):.2f}, phi+G {phi:.1e}")
    report(6, "representation identity", ok, "; ".join(parts), t0)


def test_c7_norm_properties():
    t0 = time.perf_counter()
    g = GridSpec(16, 16, 65).build()
    rng = np.random.default_rng(7)
    p = GevreyParams()
    pv = GevreyParams(rho=0.5, sigma=1.3, n_shift=4)
    base_v = GevreyParams(rho=0.5, sigma=1.3)
    u0, v0 = canonical_profile(g)
    mono = sand = var = 0
    for _ in range(100):
        s = make_state(g, u0 + smooth_random_field(g, rng), v0 + smooth_random_field(g, rng))
        ev = NormEvaluator(s, OuterFlow(U=1.0), p)
        lo, hi = np.sort(rng.uniform(0.05, 1.0, 2))
        a, b = ev.trinorm(lo), ev.trinorm(hi)
        mono += all(a.lines[k] <= b.lines[k] for k in TRINORM_LINES)
        sand += ev.trinorm(hi).total <= ev.extended(hi).total
        var += trinorm(s, OuterFlow(U=1.0), base_v).total <= norm_variant_N(s, OuterFlow(U=1.0), pv).total
    k = g.nx // 4
    u = 0.25 * np.rint(np.cos(k * g.X)) * np.exp(-g.Z) + 0 * g.Y
    prof = {j: g.dz(u, j)[0, 0] / 0.25 for j in range(6)}
    brute = 0.0
    for rho, sigma in ((0.5, 1.5), (1.0, 1.2), (0.3, 2.0)):
        q = GevreyParams(rho=rho, sigma=sigma)
        n = trinorm(make_state(g, u, 0.0), OuterFlow(), q)
        lines, _ = single_mode_trinorm(g, 0.25, k, prof, q)
        for key in TRINORM_LINES:
            if lines[key]:
                brute = max(brute, abs(n.lines[key] - lines[key]) / lines[key])
    ok = mono == 100 and sand == 100 and var == 100 and brute <= 1e-10
    report(7, "norm properties", ok, f"monotone {mono}/100, sandwich {sand}/100, variant lower sandwich "
           f"{var}/100, brute-force relative {brute:.1e} (tol 1e-10)", t0)


def test_c8_inequalities():
    t0 = time.perf_counter()
    _suite_line(8, "inequality checks", suite_inequalities(seed=0, trials=100, pairs=1000), t0)


def test_c9_structural_preservation(runs):
    t0 = time.perf_counter()
    tr, _ = runs["canonical dt=0.001"]
    s0 = tr.snapshots[0]
    c0 = detect_critical_curve(s0.psi, s0.grid, s0.xi)
    xi0 = float(np.min(np.abs(c0.xi_at_gamma)))
    lb0 = weighted_lower_bound(s0, curve=c0)
    unique, xi_ratio, lb_ratio = True, math.inf, math.inf
    for s in tr.snapshots:
        c = detect_critical_curve(s.psi, s.grid, s.xi)
        unique &= c.unique
        if c.unique:
            xi_ratio = min(xi_ratio, float(np.min(np.abs(c.xi_at_gamma))) / xi0)
            lb_ratio = min(lb_ratio, weighted_lower_bound(s, curve=c) / lb0)
    ok = unique and xi_ratio >= 0.5 and lb_ratio >= 0.5
    report(9, "structural preservation", ok, f"unique curve at all {len(tr.snapshots)} snapshots: {unique}; "
           f"min |xi(gamma)| ratio {xi_ratio:.3f}; weighted lower bound ratio {lb_ratio:.3f} (both >= 0.5)", t0)


def test_c10_apriori_monitor(runs):
    t0 = time.perf_counter()
    parts, ok = [], True
    p = GevreyParams()
    for name in ("canonical", "tanh"):
        cs, peaks = [], []
        for dt in (2e-3, 1e-3):
            tr, outer = runs[f"{name} dt={dt:g}"]
            step = int(round(0.01 / dt))
            m = monitor_apriori(tr.snapshots[::step], p, RHO, outer)
            cs.append(m.worst_c_star)
            peaks.append(max(m.peak_ratio.values()))
        stable = abs(cs[1] - cs[0]) <= 0.2 * cs[0]
        ok &= all(math.isfinite(c) and c >= 1 for c in cs) and stable
        parts.append(f"{name} C* {cs[0]:.4g} -> {cs[1]:.4g} (peak ratio {peaks[0]:.4g} -> {peaks[1]:.4g})")
    tr, outer = runs["blow-up"]
    states = tr.snapshots + ([tr.blowup_state] if tr.blowup_state is not None else [])
    with np.errstate(over="ignore", invalid="ignore"):
        m = monitor_apriori(states, p, RHO, outer)
    ok &= m.flagged and m.violation_time is not None
    parts.append(f"blow-up flagged {m.flagged} at t={m.violation_time}")
    report(10, "a priori monitor", ok, "; ".join(parts), t0)


def test_c11_compatibility():
    t0 = time.perf_counter()
    checks = [c for c in suite_structural() if c.name.startswith("compatibility")]
    bad = [c.name for c in checks if not c.passed]
    report(11, "compatibility validator", not bad and len(checks) == 6,
           "; ".join(f"{c.name.removeprefix('compatibility ')}: {c.detail or c.value}" for c in checks), t0)
