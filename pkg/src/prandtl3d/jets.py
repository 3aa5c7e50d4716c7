"""Discrete differential algebra for nonlinear quantities.

A :class:`Jet` carries a field together with its t, x, y, z and zz
derivatives.  Jets of primitive quantities (d^alpha dz^k of u or v) are read
from a :class:`Tower` that caches spectral tangential derivatives and finite
difference normal derivatives.  Products and quotients then follow the
Leibniz and quotient rules exactly, so recombinations of discrete equations
hold to roundoff rather than to truncation error.
"""

from __future__ import annotations

import math
from itertools import product as _iprod

import numpy as np

from .grid import Grid

_COMPS = ("v", "t", "x", "y", "z", "zz")

E1 = (1, 0)
E2 = (0, 1)


def madd(a, b):
    return (a[0] + b[0], a[1] + b[1])


def msub(a, b):
    return (a[0] - b[0], a[1] - b[1])


def mscale(a, m):
    return (a[0] * m, a[1] * m)


def mbinom(a, b) -> int:
    return math.comb(a[0], b[0]) * math.comb(a[1], b[1])


def sub_indices(alpha):
    """All beta <= alpha (componentwise), in deterministic order."""
    return [(i, j) for i, j in _iprod(range(alpha[0] + 1), range(alpha[1] + 1))]


class Jet:
    """Value plus first derivatives in t, x, y, z and the second z-derivative."""

    __slots__ = _COMPS

    def __init__(self, v=0.0, t=0.0, x=0.0, y=0.0, z=0.0, zz=0.0):
        self.v, self.t, self.x, self.y, self.z, self.zz = v, t, x, y, z, zz

    @staticmethod
    def const(c) -> "Jet":
        return Jet(c)

    @staticmethod
    def profile(f, fz, fzz) -> "Jet":
        """Jet of a function of z alone."""
        return Jet(f, 0.0, 0.0, 0.0, fz, fzz)

    def __add__(self, o):
        if not isinstance(o, Jet):
            return Jet(self.v + o, self.t, self.x, self.y, self.z, self.zz)
        return Jet(*(getattr(self, c) + getattr(o, c) for c in _COMPS))

    __radd__ = __add__

    def __neg__(self):
        return Jet(*(-getattr(self, c) for c in _COMPS))

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Jet):
            return Jet(*(getattr(self, c) * o for c in _COMPS))
        a, b = self, o
        return Jet(a.v * b.v,
                   a.t * b.v + a.v * b.t,
                   a.x * b.v + a.v * b.x,
                   a.y * b.v + a.v * b.y,
                   a.z * b.v + a.v * b.z,
                   a.zz * b.v + 2 * a.z * b.z + a.v * b.zz)

    __rmul__ = __mul__

    def reciprocal(self):
        r = 1.0 / self.v
        r2 = r * r
        return Jet(r, -self.t * r2, -self.x * r2, -self.y * r2, -self.z * r2,
                   -self.zz * r2 + 2 * self.z * self.z * r2 * r)

    def __truediv__(self, o):
        if not isinstance(o, Jet):
            return self * (1.0 / o)
        return self * o.reciprocal()

    def __pow__(self, p: float):
        f0 = self.v ** p
        f1 = p * self.v ** (p - 1)
        f2 = p * (p - 1) * self.v ** (p - 2)
        return Jet(f0, f1 * self.t, f1 * self.x, f1 * self.y, f1 * self.z,
                   f1 * self.zz + f2 * self.z * self.z)

    def masked(self, mask) -> "Jet":
        """Zero every component outside ``mask``."""
        return Jet(*(np.where(mask, getattr(self, c), 0.0) for c in _COMPS))

    def fill(self, mask, value=1.0) -> "Jet":
        """Replace outside ``mask`` by the constant ``value`` (safe denominators)."""
        return Jet(np.where(mask, self.v, value),
                   *(np.where(mask, getattr(self, c), 0.0) for c in _COMPS[1:]))

    def transport(self, u, v, w) -> np.ndarray:
        """L F = F_t + u F_x + v F_y + w F_z - F_zz, with plain-array velocities."""
        return self.t + u * self.x + v * self.y + w * self.z - self.zz


class Tower:
    """Lazy cache of d^alpha D^(k) u and d^alpha D^(k) v plus time derivatives.

    ``D^(k)`` is the grid's k-th normal derivative operator; ``D^(1)`` and
    ``D^(2)`` are the mapped second-order stencils, higher orders use
    Fornberg weights.  The vertical velocity is the FD antiderivative of the
    tangential divergence.
    """

    def __init__(self, grid: Grid, u, v, ut=None, vt=None, w=None, wt=None):
        self.grid = grid
        z = np.zeros(grid.shape)
        self._base = {"u": np.asarray(u, float), "v": np.asarray(v, float),
                      "ut": z if ut is None else np.asarray(ut, float),
                      "vt": z if vt is None else np.asarray(vt, float)}
        self._hat: dict = {}
        self._arr: dict = {}
        self._w = w
        self._wt = wt
        self._what: dict = {}

    # ----- primitive arrays -----
    def _khat(self, name, k):
        key = (name, k)
        if key not in self._hat:
            self._hat[key] = self.grid.fft(self.grid.dz(self._base[name], k))
        return self._hat[key]

    def arr(self, name: str, alpha=(0, 0), k: int = 0) -> np.ndarray:
        """d^alpha D^(k) of u, v, ut or vt."""
        key = (name, tuple(alpha), k)
        if key not in self._arr:
            if alpha == (0, 0):
                self._arr[key] = self.grid.dz(self._base[name], k)
            else:
                self._arr[key] = self.grid.dxy_hat(self._khat(name, k), tuple(alpha))
        return self._arr[key]

    def prim(self, var: str, alpha=(0, 0), k: int = 0) -> Jet:
        """Jet of d^alpha D^(k) var for var in {'u', 'v'}."""
        a = tuple(alpha)
        return Jet(self.arr(var, a, k), self.arr(var + "t", a, k),
                   self.arr(var, madd(a, E1), k), self.arr(var, madd(a, E2), k),
                   self.arr(var, a, k + 1), self.arr(var, a, k + 2))

    # ----- vertical velocity -----
    def _wbase(self, t: bool):
        if not t:
            if self._w is None:
                div = self.arr("u", E1) + self.arr("v", E2)
                self._w = -self.grid.antiderivative_fd(div)
            return self._w
        if self._wt is None:
            div = self.arr("ut", E1) + self.arr("vt", E2)
            self._wt = -self.grid.antiderivative_fd(div)
        return self._wt

    def warr(self, alpha=(0, 0), t: bool = False) -> np.ndarray:
        key = (tuple(alpha), t)
        if key not in self._what:
            base = self._wbase(t)
            self._what[key] = base if alpha == (0, 0) else self.grid.dxy(base, tuple(alpha))
        return self._what[key]

    def wjet(self, alpha=(0, 0)) -> Jet:
        a = tuple(alpha)
        return Jet(self.warr(a), self.warr(a, True), self.warr(madd(a, E1)),
                   self.warr(madd(a, E2)),
                   -(self.arr("u", madd(a, E1), 0) + self.arr("v", madd(a, E2), 0)),
                   -(self.arr("u", madd(a, E1), 1) + self.arr("v", madd(a, E2), 1)))

    @property
    def u(self):
        return self._base["u"]

    @property
    def v(self):
        return self._base["v"]

    @property
    def w(self):
        return self._wbase(False)

    def swapped(self) -> "SwappedTower":
        return SwappedTower(self)


def _swap_alpha(a):
    return (a[1], a[0])


class SwappedTower:
    """View of a tower under the exchange (u, x) <-> (v, y)."""

    _names = {"u": "v", "v": "u", "ut": "vt", "vt": "ut"}

    def __init__(self, base: Tower):
        self.base = base
        self.grid = base.grid

    def arr(self, name, alpha=(0, 0), k=0):
        return self.base.arr(self._names[name], _swap_alpha(alpha), k)

    def prim(self, var, alpha=(0, 0), k=0) -> Jet:
        j = self.base.prim(self._names[var], _swap_alpha(alpha), k)
        return Jet(j.v, j.t, j.y, j.x, j.z, j.zz)

    def warr(self, alpha=(0, 0), t=False):
        return self.base.warr(_swap_alpha(alpha), t)

    def wjet(self, alpha=(0, 0)) -> Jet:
        j = self.base.wjet(_swap_alpha(alpha))
        return Jet(j.v, j.t, j.y, j.x, j.z, j.zz)

    @property
    def u(self):
        return self.base.v

    @property
    def v(self):
        return self.base.u

    @property
    def w(self):
        return self.base.w

    def swapped(self):
        return self.base


def leibniz_bilinear(tower, terms, alpha) -> Jet:
    """Jet of d^alpha of sum c * A * B for primitive specs A, B = (var, a, k)."""
    out = Jet()
    for c, (va, aa, ka), (vb, ab, kb) in terms:
        for beta in sub_indices(alpha):
            coef = c * mbinom(alpha, beta)
            out = out + coef * (tower.prim(va, madd(aa, beta), ka)
                                * tower.prim(vb, madd(ab, msub(alpha, beta)), kb))
    return out


# quadratic sources written as bilinear forms over primitive specs
ZERO = (0, 0)
G_TERMS = [(1.0, ("v", E2, 0), ("u", ZERO, 1)), (-1.0, ("u", E2, 0), ("v", ZERO, 1))]
H_TERMS = [(1.0, ("u", E1, 0), ("v", ZERO, 1)), (-1.0, ("v", E1, 0), ("u", ZERO, 1))]
THETA_TERMS = [
    [(2.0, ("u", ZERO, 2), ("v", E2, 0)), (-2.0, ("v", ZERO, 1), ("u", E2, 1))],
    [(1.0, ("u", ZERO, 1), ("v", E2, 1)), (-1.0, ("v", ZERO, 2), ("u", E2, 0))],
    [(1.0, ("u", ZERO, 2), ("u", E1, 0)), (-1.0, ("u", ZERO, 1), ("u", E1, 1))],
]
MU_TERMS = [
    [(2.0, ("v", ZERO, 2), ("u", E1, 0)), (-2.0, ("u", ZERO, 1), ("v", E1, 1))],
    [(1.0, ("v", ZERO, 1), ("u", E1, 1)), (-1.0, ("u", ZERO, 2), ("v", E1, 0))],
    [(1.0, ("v", ZERO, 2), ("v", E2, 0)), (-1.0, ("v", ZERO, 1), ("v", E2, 1))],
]
