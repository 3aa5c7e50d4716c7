import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from prandtl3d.auxiliary import (AuxError, StructuralParams, build_cutoffs, check_structural, compute_aux,
                                 compute_representation, cutoff_profiles, detect_critical_curve, f_m_quotient_form,
                                 representation_defect, smooth_step, vartheta_profile)
from prandtl3d.grid import GridSpec
from prandtl3d.state import canonical_dz_profile, canonical_profile, make_state

from .conftest import smooth_random_field
from .oracles import compatible_profile, x, y, z

DELTA = 2.5


@pytest.fixture(scope="module")
def g():
    return GridSpec(16, 16, 65).build()


@pytest.fixture(scope="module")
def cut(g):
    return build_cutoffs(0.2, 1.0, g)


class TestCutoffs:
    def test_smooth_step_ends(self):
        s, s1, s2 = smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
        assert list(s) == [0.0, 0.0, 0.5, 1.0, 1.0]
        assert s1[0] == s1[-1] == s2[0] == s2[-1] == 0.0

    def test_values_at_gamma_and_beyond(self):
        eps = 0.2
        t1, _, _, t2, _, _ = cutoff_profiles(np.array([1.0, 1.0 + 3 * eps, 1.0 - 3 * eps]), eps, 1.0)
        assert list(t1) == [0.0, 1.0, 1.0] and list(t2) == [1.0, 0.0, 0.0]

    def test_support_identities_on_grid(self, cut):
        ids = cut.support_identities()
        assert ids["tau1p"] == 0.0 and ids["tau2p"] == 0.0 and ids["one_minus_tau2"] == 0.0
        assert ids["sum_min"] >= 1.0

    @given(eps=st.floats(0.01, 0.249), gam=st.floats(0.6, 8.0))
    def test_support_identities_property(self, eps, gam):
        c = build_cutoffs(eps, gam, GridSpec(8, 8, 129).build())
        ids = c.support_identities()
        assert ids["tau1p"] == ids["tau2p"] == ids["one_minus_tau2"] == 0.0
        assert ids["sum_min"] >= 1.0
        r = np.abs(c.z - gam)
        assert np.all(c.tau1[r <= eps] == 0.0) and np.all(c.tau1[r > 1.5 * eps] == 1.0)
        assert np.all(c.tau2[r <= 1.5 * eps] == 1.0) and np.all(c.tau2[r >= 2 * eps] == 0.0)
        assert np.all((0 <= c.tau1) & (c.tau1 <= 1) & (0 <= c.tau2) & (c.tau2 <= 1))

    @pytest.mark.parametrize("eps,gam", [(0.0, 1.0), (0.25, 1.0), (0.2, 0.3), (0.2, 15.8)])
    def test_rejects(self, g, eps, gam):
        with pytest.raises(AuxError):
            build_cutoffs(eps, gam, g)

    def test_derivatives_match_finite_differences(self):
        zz = np.linspace(0.5, 1.5, 20001)
        prof = cutoff_profiles(zz, 0.2, 1.0)
        h = zz[1] - zz[0]
        for f, f1 in ((prof[0], prof[1]), (prof[3], prof[4])):
            assert np.max(np.abs(np.gradient(f, h) - f1)) <= 1e-3 * np.max(np.abs(f1))

    def test_vartheta(self):
        th, _, _ = vartheta_profile(np.array([0.0, 2.0, 2.25, 2.5, 3.0]))
        assert th[0] == th[1] == 1.0 and 0 < th[2] < 1 and th[3] == th[4] == 0.0


class TestCriticalCurve:
    def test_closed_form_root_and_slope(self):
        for nz in (65, 129):
            g = GridSpec(8, 8, nz).build()
            psi = np.broadcast_to((1 - g.Z) * g.jz ** (-DELTA - 1), g.shape).copy()
            c = detect_critical_curve(psi, g)
            k = int(np.searchsorted(g.z, 1.0))
            h = max(g.z[k + 1] - g.z[k], g.z[k] - g.z[k - 1])
            assert c.unique and c.variant == "unique"
            assert np.max(np.abs(c.gamma - 1.0)) <= h ** 2
            assert np.max(np.abs(c.xi_at_gamma + 2.0 ** (-(DELTA + 1) / 2))) <= h ** 2

    def test_off_node_root(self):
        g = GridSpec(8, 8, 129).build()
        r = 1.2345
        psi = np.broadcast_to((r - g.Z) * np.exp(-g.Z), g.shape).copy()
        c = detect_critical_curve(psi, g)
        k = int(np.searchsorted(g.z, r))
        assert c.unique and np.max(np.abs(c.gamma - r)) <= (g.z[k] - g.z[k - 1]) ** 2

    def test_monotone_has_no_critical_point(self, g):
        psi = np.broadcast_to(np.exp(-g.Z), g.shape).copy()
        c = detect_critical_curve(psi, g)
        assert not c.unique and c.variant == "no critical point"
        assert len(c.bad_columns) == g.nx * g.ny

    def test_planted_double_zero_columns_reported(self, g):
        psi = np.broadcast_to((1 - g.Z) * g.jz ** (-DELTA - 1), g.shape).copy()
        planted = [(2, 3), (5, 7)]
        for i, j in planted:
            psi[i, j] *= 3 - g.z
        c = detect_critical_curve(psi, g)
        assert not c.unique and c.variant == "multiple critical points"
        assert sorted(c.bad_columns) == planted
        assert all(c.zero_counts[i, j] == 2 for i, j in planted)

    def test_canonical_curve_matches_closed_form_root(self):
        g = GridSpec(16, 8, 129).build()
        u, v = canonical_profile(g, pert=0.1)
        s = make_state(g, u, v)
        c = detect_critical_curve(s.psi, g, s.xi)

        def dpsi(zz, sx):
            dB = (3 * zz ** 5 - zz ** 6) * np.exp(-2 * zz)
            return canonical_dz_profile(zz) + 0.1 * sx * dB

        roots = np.array([brentq(dpsi, 0.5, 1.5, args=(np.sin(xx),)) for xx in g.x])
        k = int(np.searchsorted(g.z, 1.0))
        h = g.z[k + 1] - g.z[k - 1]
        assert c.unique and np.max(np.abs(c.gamma - roots[:, None])) <= h ** 2


class TestStructural:
    def test_canonical_passes(self, canonical):
        rep = check_structural(canonical)
        assert rep.applicable and rep.ok, rep.to_dict()
        assert rep.constants["c"] > 0 and math.isfinite(rep.constants["C"])

    def test_exponential_profile_fails_decay_window(self, g):
        u = np.broadcast_to(g.Z * np.exp(-g.Z), g.shape).copy()
        rep = check_structural(make_state(g, u, 0.0))
        assert rep.curve.unique
        assert not rep.lines["decay_window"] and not rep.ok
        assert rep.constants["tail_lower_ratio"] < 0.5

    def test_zero_state_not_applicable(self, g):
        rep = check_structural(make_state(g, 0.0, 0.0))
        assert not rep.applicable and not rep.ok and rep.curve.variant == "no critical point"

    def test_variant_bounds_selected_by_sigma(self, canonical):
        std = check_structural(canonical)
        var = check_structural(canonical, params=StructuralParams(sigma=1.3, N=3))
        assert std.bounds["variant"] == "standard" and var.bounds["variant"] == "N-shifted"
        assert var.constants["C"] > std.constants["C"]


def closed_form_profile(nz, a=0.3):
    """u = (1 + a sin x) W(z) with W = 1 - e^{-z}, so W' - W W''/W' = 1."""
    g = GridSpec(16, 8, nz).build()
    W = 1 - np.exp(-g.Z)
    return g, make_state(g, (1 + a * np.sin(g.X)) * W + 0 * g.Y, 0.0)


class TestAux:
    def test_x_independent_vanishes(self, g, cut):
        u, v = canonical_profile(g)
        v = v + 0.2 * np.cos(g.Y) * g.Z * np.exp(-g.Z)
        s = make_state(g, u, v)
        for m in (1, 2, 3):
            A = compute_aux(s, cut, m)
            for k in ("f_m", "q_m", "G_m"):
                assert np.max(np.abs(A[k])) <= 1e-12 * m, k

    def test_proportional_fields_cancel(self, g, cut, canonical):
        s = make_state(g, canonical.u, -0.7 * canonical.u)
        for m in (1, 2, 4):
            A = compute_aux(s, cut, m)
            # v and u are differentiated separately, so the cancellation holds to FFT roundoff
            tol = 64 * np.finfo(float).eps * (g.nx / 2) ** m * np.max(np.abs(s.psi)) * np.max(np.abs(s.u))
            assert np.max(np.abs(A["Gamma_m"])) <= tol
            assert np.max(np.abs(A["tilde_Gamma_m"])) <= tol

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_separable_closed_form(self, m):
        a = 0.3
        g, s = closed_form_profile(257, a)
        cu = build_cutoffs(0.2, 1.0, g)
        A = compute_aux(s, cu, m)
        W = 1 - np.exp(-g.z)
        col = np.broadcast_to(W, g.shape).copy()
        d1, d2 = g.dz(col, 1)[0, 0], g.dz(col, 2)[0, 0]
        expect = cu.tau1 * a * np.sin(g.X + m * np.pi / 2) * (d1 - W * d2 / d1) + 0 * g.Y
        # beyond z = 8, W' ~ e^{-z} nears the FD roundoff of W ~ 1 and the quotient loses digits
        on = g.z <= 8.0
        assert np.max(np.abs(A["f_m"] - expect)[..., on]) <= 1e-8 * np.max(np.abs(expect))

    def test_separable_converges_to_symbolic(self):
        errs = []
        for nz in (257, 1025):
            g, s = closed_form_profile(nz)
            cu = build_cutoffs(0.2, 1.0, g)
            exact = cu.tau1 * 0.3 * np.cos(g.X) + 0 * g.Y
            errs.append(np.max(np.abs(compute_aux(s, cu, 1)["f_m"] - exact)))
        assert errs[0] / errs[1] >= 12

    def test_cutoff_supports(self, canonical, cut):
        A = compute_aux(canonical, cut, 2)
        off1 = cut.tau1 == 0
        off2 = cut.tau2 == 0
        for k in ("f_m", "tilde_f_m"):
            assert not np.any(A[k][..., off1])
        for k in ("q_m", "tilde_q_m"):
            assert not np.any(A[k][..., off2])

    def test_division_floor_flags_field(self, g, cut):
        u = np.broadcast_to(np.cumsum((1 - g.z) * (3 - g.z) * np.gradient(g.z)), g.shape).copy()
        A = compute_aux(make_state(g, u, 0.0), cut, 1, floor=1e-2)
        assert "f_m" in A.unavailable and "f_m" not in A.fields
        assert "q_m" in A.fields

    def test_rejects_order_zero(self, canonical, cut):
        with pytest.raises(AuxError):
            compute_aux(canonical, cut, 0)


class TestAuxInvariants:
    def test_wall_traces_second_order(self):
        uc = sp.lambdify((x, y, z), compatible_profile(), "numpy")
        vals = []
        for nz in (129, 257, 513):
            g = GridSpec(8, 8, nz).build()
            u = np.broadcast_to(uc(g.X, g.Y, g.Z), g.shape).copy()
            v = (1 + 0.5 * np.cos(g.Y)) * g.Z * np.exp(-g.Z ** 2) + 0 * g.X
            s = make_state(g, u, v)
            A = compute_aux(s, build_cutoffs(0.2, 1.0, g), 2, alpha=(1, 2))
            for k in ("Gamma_m", "g_alpha", "h_alpha"):
                assert np.max(np.abs(A[k][..., 0])) == 0.0
            w = max(np.max(np.abs(s.xi[..., 0])), np.max(np.abs(s.zeta[..., 0])))
            assert w <= 50 * g.z[1] ** 2
            vals.append(w)
        assert vals[0] / vals[1] >= 3.8 and vals[1] / vals[2] >= 3.8

    def test_f_m_quotient_form_agrees(self):
        diffs = []
        for nz in (129, 257, 513):
            g = GridSpec(16, 16, nz).build()
            u, v = canonical_profile(g, pert=0.1, vpert=0.1)
            s = make_state(g, u, v)
            cu = build_cutoffs(0.2, 1.0, g)
            A = compute_aux(s, cu, 1)
            Q = f_m_quotient_form(s, cu, 1)
            inner = (g.z <= 8.0) & (cu.tau1 > 0)
            diffs.append(np.max(np.abs(A["f_m"] - Q)[..., inner]))
        assert diffs[-1] <= 1e-3
        assert diffs[0] / diffs[1] >= 3 and diffs[1] / diffs[2] >= 3

    @given(seed=st.integers(0, 2 ** 32 - 1), a1=st.integers(0, 2), a2=st.integers(0, 2))
    def test_leibniz_matches_direct_differentiation(self, g, cut, seed, a1, a2):
        rng = np.random.default_rng(seed)
        u = smooth_random_field(g, rng, amp=1.0)
        v = smooth_random_field(g, rng, amp=1.0)
        s = make_state(g, u, v)
        A = compute_aux(s, cut, 1, alpha=(a1, a2))
        # bandlimited to |k| <= 3, so the quadratic product stays alias-free on 16 points
        gfield = g.dxy(v, (0, 1)) * s.psi - g.dxy(u, (0, 1)) * s.eta
        hfield = g.dxy(u, (1, 0)) * s.eta - g.dxy(v, (1, 0)) * s.psi
        for key, f in (("g_alpha", gfield), ("h_alpha", hfield)):
            direct = g.dxy(f, (a1, a2))
            scale = max(1.0, float(np.max(np.abs(direct))))
            assert np.max(np.abs(A[key] - direct)) <= 1e-11 * scale

    @pytest.mark.parametrize("alpha", [(0, 0), (1, 0), (2, 1), (0, 3)])
    def test_theta_mu_swap_symmetry(self, g, cut, canonical, alpha):
        u, v = canonical.u, canonical.v
        swapped = make_state(g, np.swapaxes(v, 0, 1).copy(), np.swapaxes(u, 0, 1).copy())
        th = compute_aux(swapped, cut, 1, alpha=alpha[::-1])["theta_vec"]
        mu = compute_aux(canonical, cut, 1, alpha=alpha)["mu_vec"]
        scale = max(1.0, float(np.max(np.abs(mu))))
        assert np.max(np.abs(np.swapaxes(th, 1, 2) - mu)) <= 1e-13 * scale


class TestRepresentation:
    def test_x_independent_vanishes(self, g):
        u, _ = canonical_profile(g)
        rep = compute_representation(make_state(g, u, 0.0), 2)
        assert not np.any(rep.phi_m) and not np.any(rep.alpha_m) and not np.any(rep.beta_m)

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_phi_equals_minus_G(self, canonical, m):
        rep = compute_representation(canonical, m)
        assert rep.phi_G_defect(canonical.grid.z) <= 1e-10

    def test_valid_mask_excludes_band(self, canonical):
        rep = compute_representation(canonical, 1)
        band = np.abs(canonical.grid.z - 1.0) <= 0.2
        assert not np.any(rep.valid[..., band])

    def test_decomposition_converges(self):
        errs = []
        for nz in (65, 129, 257):
            g = GridSpec(16, 16, nz).build()
            u, v = canonical_profile(g, pert=0.1, vpert=0.1)
            s = make_state(g, u, v)
            errs.append(representation_defect(s, compute_representation(s, 2)))
        assert errs[0] / errs[1] >= 2 and errs[1] / errs[2] >= 2

    def test_degenerate_psi_at_two_drops_beta(self, g):
        # psi = (1 - z)(2 - z)e^{-z}; FD leaves O(dz^2) at z = 2, so the floor is raised above it
        u = (1 - (1 - g.Z + g.Z ** 2) * np.exp(-g.Z)) * (1 + 0.1 * np.sin(g.X)) + 0 * g.Y
        s = make_state(g, u, 0.0)
        rep = compute_representation(s, 1, floor=1e-2)
        assert rep.beta_m is None and rep.notes
        assert math.isnan(representation_defect(s, rep))
