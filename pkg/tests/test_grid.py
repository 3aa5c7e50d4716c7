import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from prandtl3d.grid import (GridError, GridSpec, ScalarField, cumulative_normal_integral, normal_derivative,
                            tangential_derivative, weighted_l2)


def field(grid, values):
    return ScalarField(np.broadcast_to(values, grid.shape).copy(), grid)


@pytest.fixture(scope="module")
def g():
    return GridSpec(16, 16, 65).build()


@pytest.fixture(scope="module")
def uniform():
    return GridSpec(8, 8, 129, stretch=None).build()


class TestGridSpec:
    @pytest.mark.parametrize("kw", [dict(nx=12, ny=16, nz=33), dict(nx=16, ny=4, nz=33),
                                    dict(nx=16, ny=16, nz=8), dict(nx=16, ny=16, nz=33, z_max=math.inf),
                                    dict(nx=16, ny=16, nz=33, stretch=-1.0)])
    def test_rejects_invalid(self, kw):
        with pytest.raises(GridError):
            GridSpec(**kw)

    def test_roundtrip_and_refine(self):
        s = GridSpec(16, 8, 33)
        assert GridSpec.from_dict(s.to_dict()) == s
        assert s.refined().nz == 65

    def test_mapped_nodes(self, g):
        assert g.z[0] == 0.0
        assert g.z[-1] == pytest.approx(16.0)
        assert np.all(np.diff(g.z) > 0)


class TestTangentialDerivative:
    def test_sine_first_derivative(self, g):
        f = field(g, np.sin(g.X) * np.exp(-g.Z))
        d = tangential_derivative(f, (1, 0)).values
        exact = np.cos(g.X) * np.exp(-g.Z) + 0 * g.Y
        assert np.max(np.abs(d - exact)) <= 1e-12 * np.max(np.abs(exact))

    @pytest.mark.parametrize("m", range(1, 9))
    def test_sine_mth_derivative(self, g, m):
        d = g.dxy(np.broadcast_to(np.sin(g.X), g.shape), (m, 0))
        exact = np.broadcast_to(np.sin(g.X + m * np.pi / 2), g.shape)
        # FFT roundoff is amplified by the largest resolved wavenumber to the m-th power
        assert np.max(np.abs(d - exact)) <= 64 * np.finfo(float).eps * (g.nx / 2) ** m

    @pytest.mark.parametrize("alpha", [(1, 0), (0, 1), (2, 3)])
    def test_constant_gives_zero(self, g, alpha):
        f = field(g, 3.0 + g.Z)
        assert np.max(np.abs(tangential_derivative(f, alpha).values)) <= 1e-13

    @given(k=st.integers(0, 7), l=st.integers(0, 7), a1=st.integers(0, 4), a2=st.integers(0, 4))
    def test_exact_on_trig_polynomials(self, g, k, l, a1, a2):
        f = np.cos(k * g.X + l * g.Y) + 0 * g.Z
        d = g.dxy(f, (a1, a2))
        ph = (a1 + a2) * np.pi / 2
        exact = (k ** a1) * (l ** a2) * np.cos(k * g.X + l * g.Y + ph) + 0 * g.Z
        scale = max(1.0, float(k ** a1 * l ** a2))
        # same roundoff amplification as the m-th sine derivative above
        assert np.max(np.abs(d - exact)) <= 64 * np.finfo(float).eps * (g.nx / 2) ** (a1 + a2) * scale

    def test_mixed_derivatives_commute(self, g, canonical):
        a = g.dxy(g.dxy(canonical.u, (1, 0)), (0, 1))
        b = g.dxy(g.dxy(canonical.u, (0, 1)), (1, 0))
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_order_cap_and_non_finite(self, g):
        with pytest.raises(GridError):
            g.dxy(np.zeros(g.shape), (g.spec.m_max + 1, 0))
        bad = np.zeros(g.shape)
        bad[0, 0, 0] = np.nan
        with pytest.raises(GridError):
            g.dxy(bad, (1, 0))


class TestNormalDerivative:
    def test_quadratic_exact_uniform(self, uniform):
        f = field(uniform, uniform.Z ** 2)
        d = normal_derivative(f, 1).values
        exact = 2 * uniform.Z + 0 * uniform.X
        assert np.max(np.abs(d[..., 1:-1] - exact[..., 1:-1])) <= 1e-12

    def test_second_derivative_refinement(self):
        errs = []
        for nz in (65, 129, 257):
            g = GridSpec(8, 8, nz).build()
            d = g.dz(np.exp(-g.z), 2)
            errs.append(np.max(np.abs(d - np.exp(-g.z))))
        assert errs[0] / errs[1] >= 3.8 and errs[1] / errs[2] >= 3.8

    def test_constant_gives_zero(self, g):
        f = field(g, 2.5)
        assert np.max(np.abs(normal_derivative(f, 1).values)) <= 1e-12
        assert np.max(np.abs(normal_derivative(f, 2).values)) <= 1e-10

    def test_only_first_and_second(self, g):
        with pytest.raises(GridError):
            normal_derivative(field(g, 0.0), 3)


class TestWeightedL2:
    def test_zero(self, g):
        assert weighted_l2(field(g, 0.0), 1.5) == 0.0

    def test_exponential_profile(self):
        g = GridSpec(8, 8, 2049, z_max=40.0).build()
        val = weighted_l2(field(g, np.exp(-g.Z)), 0.0)
        assert abs(val - math.sqrt(4 * math.pi ** 2 / 2)) <= 1e-6 * val

    def test_homogeneous(self, g, canonical):
        f = ScalarField(canonical.u, g)
        assert weighted_l2(ScalarField(2 * canonical.u, g), 1.0) == 2 * weighted_l2(f, 1.0)

    def test_rejects_non_finite_weight(self, g):
        with pytest.raises(GridError):
            weighted_l2(field(g, 1.0), math.nan)

    @given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(0, 3))
    def test_norm_axioms(self, g, seed, a):
        rng = np.random.default_rng(seed)
        f, h = rng.normal(size=g.shape), rng.normal(size=g.shape)
        nf, nh, nfh = g.l2(f, a), g.l2(h, a), g.l2(f + h, a)
        assert nf > 0 and nh > 0
        assert nfh <= (nf + nh) * (1 + 1e-14)


class TestCumulativeIntegral:
    def test_constant_and_linear_exact(self, uniform):
        one = cumulative_normal_integral(field(uniform, 1.0)).values
        assert np.max(np.abs(one - uniform.Z)) <= 1e-12
        lin = cumulative_normal_integral(field(uniform, uniform.Z)).values
        assert np.max(np.abs(lin - uniform.Z ** 2 / 2)) <= 1e-12

    def test_exponential_second_order(self):
        errs = []
        for nz in (65, 129, 257):
            g = GridSpec(8, 8, nz).build()
            F = g.cumulative_trapezoid(np.exp(-g.z))
            errs.append(np.max(np.abs(F - (1 - np.exp(-g.z)))))
        assert errs[0] / errs[1] >= 3.8 and errs[1] / errs[2] >= 3.8

    def test_derivative_recovers_integrand(self):
        errs = []
        for nz in (65, 129, 257):
            g = GridSpec(8, 8, nz).build()
            f = np.cos(g.z) * np.exp(-g.z / 2)
            d = g.dz(g.cumulative_trapezoid(f), 1)
            errs.append(np.max(np.abs(d - f)[1:-1]))
        assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5
