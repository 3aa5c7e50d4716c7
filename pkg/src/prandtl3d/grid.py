"""Discretization of the periodic-in-(x, y), half-line-in-z domain.

Tangential directions use Fourier collocation on [0, 2pi)^2.  The normal
direction is truncated at ``z_max`` and optionally stretched by the map
z(s) = L s / (1 - s) sampled at uniform s, so nodes cluster near the wall.
Normal derivatives are second-order finite differences in s with the chain
rule applied; higher normal derivatives use Fornberg weights on the physical
nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

DEFAULT_M_MAX = 32


class GridError(ValueError):
    """Raised for invalid grid parameters or operator requests."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fornberg_weights(x0: float, nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``.

    Standard recursion of Fornberg (1988) on arbitrary nodes.
    """
    n = len(nodes)
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _stencil_points(order: int) -> int:
    # odd orders: k + 2 symmetric points; even orders: k + 3 to stay symmetric
    return order + 2 if order % 2 == 1 else order + 3


@dataclass(frozen=True)
class GridSpec:
    """Grid parameters.  ``stretch=None`` selects a uniform normal grid."""

    nx: int
    ny: int
    nz: int
    z_max: float = 16.0
    stretch: float | None = 2.0
    m_max: int = DEFAULT_M_MAX

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 8 or not _is_pow2(int(n)):
                raise GridError(f"{name} must be a power of two >= 8, got {n!r}")
        if not isinstance(self.nz, (int, np.integer)) or self.nz < 16:
            raise GridError(f"nz must be an integer >= 16, got {self.nz!r}")
        if not (math.isfinite(self.z_max) and self.z_max >= 8.0):
            raise GridError(f"z_max must be finite and >= 8, got {self.z_max!r}")
        if self.stretch is not None and not (self.stretch > 0 and math.isfinite(self.stretch)):
            raise GridError(f"stretch must be positive or None, got {self.stretch!r}")
        if self.m_max < 1:
            raise GridError("m_max must be >= 1")

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "nz": self.nz, "z_max": self.z_max,
                "stretch": self.stretch, "m_max": self.m_max}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)

    def refined(self, factor: int = 2) -> "GridSpec":
        """Same grid with ``factor`` times as many normal intervals."""
        return GridSpec(self.nx, self.ny, (self.nz - 1) * factor + 1, self.z_max,
                        self.stretch, self.m_max)

    def build(self) -> "Grid":
        return Grid(self)


class Grid:
    """Nodes, metric terms, and cached derivative operators for a GridSpec."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.nx, self.ny, self.nz = spec.nx, spec.ny, spec.nz
        self.shape = (spec.nx, spec.ny, spec.nz)
        self.x = 2 * np.pi * np.arange(spec.nx) / spec.nx
        self.y = 2 * np.pi * np.arange(spec.ny) / spec.ny
        if spec.stretch is None:
            self.s = np.linspace(0.0, spec.z_max, spec.nz)
            self.z = self.s.copy()
            self.zs = np.ones_like(self.s)
            self.zss = np.zeros_like(self.s)
        else:
            L = spec.stretch
            s_max = spec.z_max / (L + spec.z_max)
            self.s = np.linspace(0.0, s_max, spec.nz)
            self.z = L * self.s / (1 - self.s)
            self.z[-1] = spec.z_max
            self.zs = L / (1 - self.s) ** 2
            self.zss = 2 * L / (1 - self.s) ** 3
        self.h = self.s[1] - self.s[0]
        if not np.all(np.diff(self.z) > 0):
            raise GridError("normal nodes are not strictly increasing")
        self.jz = np.sqrt(1 + self.z ** 2)
        self.dx = 2 * np.pi / spec.nx
        self.dy = 2 * np.pi / spec.ny
        kx = np.fft.fftfreq(spec.nx, 1.0 / spec.nx)
        ky = np.fft.rfftfreq(spec.ny, 1.0 / spec.ny)
        self.kx = kx[:, None, None]
        self.ky = ky[None, :, None]
        self._nyq_x = np.abs(kx) == spec.nx // 2
        self._nyq_y = np.abs(ky) == spec.ny // 2
        self._dz_cache: dict[int, np.ndarray] = {}

    # broadcasting helpers
    @property
    def X(self) -> np.ndarray:
        return self.x[:, None, None]

    @property
    def Y(self) -> np.ndarray:
        return self.y[None, :, None]

    @property
    def Z(self) -> np.ndarray:
        return self.z[None, None, :]

    def weight(self, a: float) -> np.ndarray:
        """<z>^a as a broadcastable (1, 1, nz) array."""
        return (self.jz ** a)[None, None, :]

    # ----- tangential (spectral) -----
    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(f, axes=(0, 1))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(fh, s=(self.nx, self.ny), axes=(0, 1))

    def spectral_multiplier(self, alpha: tuple[int, int]) -> np.ndarray:
        a1, a2 = alpha
        mult = (1j * self.kx) ** a1 * (1j * self.ky) ** a2
        mult = np.array(mult, dtype=complex)
        if a1 % 2 == 1:
            mult[self._nyq_x, :, :] = 0
        if a2 % 2 == 1:
            mult[:, self._nyq_y, :] = 0
        return mult

    def dxy_hat(self, fh: np.ndarray, alpha: tuple[int, int]) -> np.ndarray:
        """Apply d^alpha to already-transformed data and return physical values."""
        if alpha == (0, 0):
            return self.ifft(fh)
        return self.ifft(fh * self.spectral_multiplier(alpha))

    def dxy(self, f: np.ndarray, alpha: tuple[int, int]) -> np.ndarray:
        a1, a2 = alpha
        if a1 < 0 or a2 < 0:
            raise GridError(f"negative multi-index {alpha}")
        if a1 + a2 > self.spec.m_max:
            raise GridError(f"derivative order {a1 + a2} exceeds cap m_max={self.spec.m_max}")
        if not np.all(np.isfinite(f)):
            raise GridError("non-finite input to tangential derivative")
        if a1 + a2 == 0:
            return np.array(f, dtype=float, copy=True)
        squeeze = f.ndim == 2
        g = f[:, :, None] if squeeze else f
        out = self.dxy_hat(self.fft(g), alpha)
        return out[:, :, 0] if squeeze else out

    # ----- normal (finite differences) -----
    def dz_matrix(self, order: int) -> np.ndarray:
        """Dense (nz, nz) matrix of the order-th normal derivative."""
        if order in self._dz_cache:
            return self._dz_cache[order]
        n, h = self.nz, self.h
        if order == 0:
            D = np.eye(n)
        elif order in (1, 2):
            Ds = np.zeros((n, n))
            Dss = np.zeros((n, n))
            i = np.arange(1, n - 1)
            Ds[i, i - 1], Ds[i, i + 1] = -0.5 / h, 0.5 / h
            Ds[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
            Ds[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
            Dss[i, i - 1], Dss[i, i], Dss[i, i + 1] = 1 / h**2, -2 / h**2, 1 / h**2
            Dss[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
            Dss[-1, -4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
            D1 = Ds / self.zs[:, None]
            if order == 1:
                D = D1
            else:
                D = (Dss - self.zss[:, None] * D1) / self.zs[:, None] ** 2
        else:
            npts = _stencil_points(order)
            if npts > n:
                raise GridError(f"nz={n} too small for a derivative of order {order}")
            r = npts // 2
            D = np.zeros((n, n))
            for j in range(n):
                lo = min(max(j - r, 0), n - npts)
                idx = np.arange(lo, lo + npts)
                D[j, idx] = fornberg_weights(self.z[j], self.z[idx], order)
        self._dz_cache[order] = D
        return D

    def dz(self, f: np.ndarray, order: int = 1) -> np.ndarray:
        if order == 0:
            return np.array(f, dtype=float, copy=True)
        if self.nz < 5:
            raise GridError("normal derivative needs nz >= 5")
        return f @ self.dz_matrix(order).T

    def antiderivative_fd(self, f: np.ndarray) -> np.ndarray:
        """W with W(0) = 0 and dz(W, 1) = f at every node except the top one.

        The wall row fixes W_1 and centered rows then leapfrog upward, so the
        stored W is the exact inverse of the first-derivative operator on the
        nodes 0 .. nz-2.  The top row uses a one-sided stencil that cannot be
        satisfied simultaneously (the FD matrix has a left null vector).
        """
        g = 2 * self.h * f * self.zs
        W = np.zeros_like(np.asarray(f, dtype=float))
        W[..., 2] = g[..., 1]
        W[..., 1] = 0.25 * (g[..., 0] + W[..., 2])
        for j in range(2, self.nz - 1):
            W[..., j + 1] = W[..., j - 1] + g[..., j]
        return W

    def cumulative_trapezoid(self, f: np.ndarray) -> np.ndarray:
        """int_0^z f dz' by the composite trapezoid rule on the physical nodes."""
        dz = np.diff(self.z)
        inc = 0.5 * (f[..., 1:] + f[..., :-1]) * dz
        out = np.zeros_like(np.asarray(f, dtype=float))
        out[..., 1:] = np.cumsum(inc, axis=-1)
        return out

    @cached_property
    def zweights(self) -> np.ndarray:
        dz = np.diff(self.z)
        w = np.zeros(self.nz)
        w[:-1] += 0.5 * dz
        w[1:] += 0.5 * dz
        return w

    def l2(self, f: np.ndarray, a: float = 0.0) -> float:
        """Weighted L^2 norm (sum <z>^{2a} f^2 quadrature weights)^{1/2}."""
        f = np.asarray(f, dtype=float)
        w = self.zweights * self.jz ** (2 * a)
        if f.ndim == 1:
            return float(np.sqrt(np.sum(f * f * w)))
        return float(np.sqrt(self.dx * self.dy * np.sum(f * f * w[None, None, :])))

    def l2_columns(self, f: np.ndarray, a: float = 0.0) -> np.ndarray:
        """Weighted L^2_z norm per tangential column."""
        w = self.zweights * self.jz ** (2 * a)
        return np.sqrt(np.sum(f * f * w[None, None, :], axis=-1))


@dataclass
class ScalarField:
    """A named real field on the grid."""

    values: np.ndarray
    grid: Grid
    name: str = "f"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GridError(f"field {self.name!r} has non-finite entries")

    def save(self, path: str | Path) -> tuple[Path, Path]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = np.ascontiguousarray(self.values, dtype="<f8")
        path.write_bytes(data.tobytes(order="C"))
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps({"name": self.name, "shape": list(self.values.shape),
                                       "dtype": "float64-le", "order": "x,y,z",
                                       "grid": self.grid.spec.to_dict(), "meta": self.meta},
                                      indent=2, sort_keys=True))
        return path, sidecar

    @classmethod
    def load(cls, path: str | Path, grid: Grid | None = None) -> "ScalarField":
        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        try:
            info = json.loads(sidecar.read_text())
            raw = path.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read field {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise OSError(f"corrupted sidecar {sidecar}: {exc}") from exc
        shape = tuple(info["shape"])
        expected = int(np.prod(shape)) * 8
        if len(raw) != expected:
            raise OSError(f"field file {path} has {len(raw)} bytes, expected {expected}")
        spec = GridSpec.from_dict(info["grid"])
        if grid is None:
            grid = Grid(spec)
        elif grid.spec != spec:
            raise GridError(f"grid mismatch for {path}")
        vals = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
        return cls(vals, grid, info.get("name", path.stem), info.get("meta", {}))


# ----- module-level operations on ScalarFields -----

def tangential_derivative(f: ScalarField, alpha: tuple[int, int]) -> ScalarField:
    return ScalarField(f.grid.dxy(f.values, tuple(alpha)), f.grid, f"d{alpha}{f.name}")


def normal_derivative(f: ScalarField, order: int = 1) -> ScalarField:
    if order not in (1, 2):
        raise GridError("normal_derivative order must be 1 or 2")
    return ScalarField(f.grid.dz(f.values, order), f.grid, f"dz{order}{f.name}")


def weighted_l2(f: ScalarField, a: float = 0.0) -> float:
    if not math.isfinite(a):
        raise GridError("weight power must be finite")
    return f.grid.l2(f.values, a)


def cumulative_normal_integral(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid.cumulative_trapezoid(f.values), f.grid, f"int{f.name}")
