import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from prandtl3d.grid import GridSpec
from prandtl3d.gevrey import GevreyParams
from prandtl3d.solver import SolverConfig, run
from prandtl3d.state import FlowState, OuterFlow, canonical_profile, make_state, tanh_profile
from prandtl3d.verifier import (TrajectoryError, companion_g, epoch_norms, g_direct, lagrange_dt,
                                monitor_apriori, residual_base, residual_fm, residual_g, residual_gamma,
                                residual_qm, residual_xi_weighted, snapshot_context, trajectory_residuals)

from .oracles import x

RHO = (0.3, 0.6)


@pytest.fixture(scope="module")
def g():
    return GridSpec(16, 16, 65).build()


@pytest.fixture(scope="module")
def canonical_run(g):
    u, v = canonical_profile(g, pert=0.1, vpert=0.1)
    outer = OuterFlow(U=float(u[0, 0, -1]))
    tr = run(make_state(g, u, v), outer, SolverConfig(dt=1e-3, t_end=0.05))
    return tr.snapshots, outer


def reflect(s: FlowState) -> FlowState:
    """(x, u) -> (-x, -u): a symmetry of the system that flips the sign of xi."""
    idx = (-np.arange(s.grid.nx)) % s.grid.nx
    return make_state(s.grid, -s.u[idx], s.v[idx], s.t, s.epsilon)


class TestLagrangeDt:
    @given(t0=st.floats(0, 1), h1=st.floats(0.01, 1), h2=st.floats(0.01, 1), i=st.integers(0, 2))
    def test_exact_on_quadratics(self, t0, h1, h2, i):
        ts = [t0, t0 + h1, t0 + h1 + h2]
        f = lambda t: 3.0 - 2.0 * t + 0.7 * t * t  # noqa: E731
        d = lagrange_dt(ts, [np.array(f(t)) for t in ts], i)
        assert float(d) == pytest.approx(-2.0 + 1.4 * ts[i], rel=1e-9, abs=1e-9)

    def test_two_points_and_rejects(self):
        assert float(lagrange_dt([0.0, 0.5], [np.array(1.0), np.array(2.0)], 0)) == 2.0
        with pytest.raises(TrajectoryError):
            lagrange_dt([0.0], [np.array(1.0)], 0)


class TestContext:
    def test_rejects_mixed_grids(self, g):
        other = GridSpec(16, 16, 33).build()
        with pytest.raises(TrajectoryError):
            snapshot_context([make_state(g, 0.0, 0.0), make_state(other, 0.0, 0.0, 0.1)], 0)

    def test_rejects_repeated_times(self, g):
        s = make_state(g, 0.0, 0.0)
        with pytest.raises(TrajectoryError):
            snapshot_context([s, s, s], 1)

    def test_needs_three_snapshots(self, canonical_run):
        with pytest.raises(TrajectoryError):
            trajectory_residuals(canonical_run[0][:2])


class TestResiduals:
    def test_zero_trajectory(self, g):
        states = [make_state(g, 0.0, 0.0, t) for t in (0.0, 0.01, 0.02)]
        for r in residual_base(states) + [residual_g(states), residual_gamma(states, 2)]:
            assert r.residual == 0.0, r.equation

    def test_run_residuals_converge(self):
        """Equations for normal derivatives carry the O(dz^2) commutator of the
        discrete operators; the u and v equations carry only the O(dt^2) error of
        the scheme and of the snapshot differencing."""
        def reps(nz, dt):
            g = GridSpec(16, 16, nz).build()
            u, v = canonical_profile(g, pert=0.1, vpert=0.1)
            outer = OuterFlow(U=float(u[0, 0, -1]))
            st = run(make_state(g, u, v), outer, SolverConfig(dt=dt, t_end=0.02)).snapshots
            st = [s for s in st if abs(s.t - 0.01) <= 1.5 * dt]
            out = residual_base(st, outer, ms=(1,)) + [residual_fm(st, m=1, outer=outer),
                                                       residual_qm(st, m=1, outer=outer),
                                                       residual_gamma(st, 1, outer), residual_g(st, outer=outer)]
            return {f"{r.equation}{r.order}": r.residual for r in out}

        coarse, fine, fine_dt = reps(65, 1e-3), reps(129, 1e-3), reps(65, 5e-4)
        for k in coarse:
            if k.startswith(("base:u(", "base:v(", "base:u_m")):
                assert fine[k] == pytest.approx(coarse[k], rel=0.05), k
                assert coarse[k] / fine_dt[k] >= 3.5, k
            elif k.startswith("base:xi("):
                # one-sided stencils of D2 D2 at the first wall nodes cap this one at first order
                assert coarse[k] / fine[k] >= 2.0, k
            else:
                assert coarse[k] / fine[k] >= 3.5, k

    def test_pressure_constant_invariance(self, canonical_run):
        states, _ = canonical_run
        U = sp.Float(float(states[0].u[0, 0, -1]))
        p = 0.01 * sp.sin(x)
        a = OuterFlow(U=U, p=p)
        b = OuterFlow(U=U, p=p + 7.5)
        for fn in (lambda o: residual_base(states, o, ms=(1,)),
                   lambda o: [residual_fm(states, m=2, outer=o), residual_qm(states, m=1, outer=o),
                              residual_gamma(states, 1, o), residual_g(states, (1, 0), o)]):
            for ra, rb in zip(fn(a), fn(b)):
                # the constant only shifts the sampled trace, so gradients agree to FFT roundoff
                assert rb.residual == pytest.approx(ra.residual, rel=1e-12)

    def test_xi_branch_reflection(self, canonical_run):
        states, outer = canonical_run
        trip = states[10:13]
        a = residual_xi_weighted(trip, m=1, outer=outer)
        b = residual_xi_weighted([reflect(s) for s in trip], m=1, outer=OuterFlow(U=-outer.U))
        assert "branch=-1" in a.note and "branch=+1" in b.note
        assert b.relative == pytest.approx(a.relative, rel=1e-9)

    def test_xi_mixed_sign_is_skipped(self, g):
        u = np.broadcast_to(np.sin(3 * g.Z) * np.exp(-g.Z), g.shape)
        states = [make_state(g, u, 0.0, t) for t in (0.0, 0.01, 0.02)]
        r = residual_xi_weighted(states, m=1)
        assert math.isnan(r.residual) and r.note.startswith("skipped")

    def test_trajectory_rows(self, canonical_run):
        states, outer = canonical_run
        reps = trajectory_residuals(states[:4], outer, ms=(1,))
        assert len(reps) == 2 * (8 + 4 + 2)
        assert all("t=" in r.note for r in reps)


class TestCompanion:
    def test_drift_small_on_canonical_run(self, canonical_run):
        states, _ = canonical_run
        res = companion_g(states)
        assert res.max_drift <= 1e-3
        assert np.max(np.abs(g_direct(states[-1]))) > 0

    def test_needs_uniform_snapshots(self, canonical_run):
        states, _ = canonical_run
        with pytest.raises(TrajectoryError):
            companion_g([states[0], states[1], states[3]])


class TestMonitor:
    def test_zero_trajectory(self, g):
        states = [make_state(g, 0.0, 0.0, t) for t in (0.0, 0.01, 0.02)]
        tr = monitor_apriori(states, GevreyParams(), RHO, OuterFlow())
        assert tr.worst_c_star == 1.0 and not tr.flagged

    def test_rejects_single_rho(self, g):
        with pytest.raises(TrajectoryError):
            monitor_apriori([make_state(g, 0.0, 0.0)], GevreyParams(), (0.5,))

    def test_truncation_monotone(self, canonical_run):
        states, outer = canonical_run
        p = GevreyParams()
        sub = states[::5]
        A = epoch_norms(sub, outer, p, RHO)
        full = monitor_apriori(sub, p, RHO, outer, norms_sq=A)
        prev = 0.0
        for k in range(1, len(sub) + 1):
            part = monitor_apriori(sub[:k], p, RHO, outer, norms_sq={r: v[:k] for r, v in A.items()})
            assert part.worst_c_star >= prev
            prev = part.worst_c_star
        assert prev == full.worst_c_star

    def test_shear_trajectory_stable_under_dt_halving(self):
        g = GridSpec(16, 16, 65).build()
        u, v = tanh_profile(g)
        cs = []
        for dt in (2e-3, 1e-3):
            tr = run(make_state(g, u, v), OuterFlow(U=1.0), SolverConfig(dt=dt, t_end=0.04),
                     stride=int(round(0.01 / dt)))
            m = monitor_apriori(tr.snapshots, GevreyParams(), RHO, OuterFlow(U=1.0))
            assert math.isfinite(m.worst_c_star) and m.worst_c_star >= 1.0
            cs.append(m.worst_c_star)
        assert abs(cs[1] - cs[0]) <= 0.2 * cs[0]

    def test_blowup_is_flagged(self):
        g = GridSpec(16, 16, 65).build()
        u, v = canonical_profile(g, pert=3.0, vpert=3.0)
        outer = OuterFlow(U=float(np.mean(u[..., -1])))
        cfg = SolverConfig(dt=0.05, t_end=1.5, check_cfl=False, blowup_factor=math.inf)
        tr = run(make_state(g, u, v), outer, cfg)
        states = tr.snapshots + ([tr.blowup_state] if tr.blowup_state is not None else [])
        m = monitor_apriori(states, GevreyParams(), RHO, outer)
        assert m.flagged and 0 < m.violation_epoch < len(states)
        assert m.violation_time == states[m.violation_epoch].t

    def test_variant_selected_for_small_sigma(self, g):
        states = [make_state(g, 0.0, 0.0, t) for t in (0.0, 0.01)]
        m = monitor_apriori(states, GevreyParams(sigma=1.3), RHO, OuterFlow())
        assert m.variant.startswith("N=")
