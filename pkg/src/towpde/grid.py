"""Uniform lattices, multilinear interpolation and space-time grid functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import DomainGeometry, GameParams


class OutOfDomainError(ValueError):
    """An interpolation query fell outside the lattice box."""

    def __init__(self, point):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"query point {self.point.tolist()} lies outside the interpolation domain")


@dataclass(frozen=True)
class Lattice:
    origin: np.ndarray
    h: float
    shape: tuple[int, ...]

    @classmethod
    def covering(cls, domain: DomainGeometry, eps: float, h: float) -> "Lattice":
        """Smallest lattice of spacing ``h`` whose box contains the domain padded by ``eps``."""
        lo, hi = domain.bounding_box
        origin = lo - eps
        # round before ceil so that exact multiples do not gain a node from roundoff
        counts = np.ceil(np.round((hi - lo + 2 * eps) / h, 9)).astype(int) + 1
        return cls(origin=origin, h=float(h), shape=tuple(int(c) for c in counts))

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.h * (np.asarray(self.shape) - 1)

    def axes(self) -> list[np.ndarray]:
        return [self.origin[i] + self.h * np.arange(s) for i, s in enumerate(self.shape)]

    def nodes(self) -> np.ndarray:
        """Node coordinates as an (size, n) array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of nodal ``values`` at ``points`` (m, n)."""
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        flat = np.ascontiguousarray(values, dtype=float).reshape(-1)
        out = np.empty(len(pts))
        shape = np.asarray(self.shape, dtype=np.int64)
        bad = _KERNELS[self.n](flat, self.origin, 1.0 / self.h, shape, pts, out)
        if bad >= 0:
            raise OutOfDomainError(pts[bad])
        return out

    def same_as(self, other: "Lattice") -> bool:
        return (self.shape == other.shape and math.isclose(self.h, other.h)
                and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12))


class GridSlice:
    """Nodal values on a lattice, callable on (m, n) point arrays."""

    def __init__(self, lattice: Lattice, values: np.ndarray):
        self.lattice = lattice
        self.values = np.asarray(values, dtype=float).reshape(lattice.shape)

    def __call__(self, points) -> np.ndarray:
        return self.lattice.interpolate(self.values, points)


class GridFunction:
    """Values of a DPP solution on ``lattice x {k * eps^2 / 2 : k = 0..K}``."""

    def __init__(self, domain: DomainGeometry, params: GameParams, lattice: Lattice,
                 values: np.ndarray, meta: dict | None = None):
        self.domain = domain
        self.params = params
        self.lattice = lattice
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[1:] != lattice.shape:
            raise ValueError("values do not match the lattice")
        self.meta = dict(meta or {})

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.params.dt

    def level_of(self, t: float) -> int:
        """Index of the level at time ``t``; ``t`` must be grid-aligned."""
        dt = self.params.dt
        k = int(round(t / dt))
        if abs(t - k * dt) > 1e-9 * dt or not 0 <= k <= self.K:
            raise ValueError(f"time {t} is not a grid level in [0, {self.K * dt}]")
        return k

    def level_slice(self, k: int) -> GridSlice:
        if not 0 <= k <= self.K:
            raise ValueError(f"level {k} outside 0..{self.K}")
        return GridSlice(self.lattice, self.values[k])

    def evaluate(self, x, t: float) -> np.ndarray | float:
        pts = np.asarray(x, dtype=float)
        single = pts.ndim <= 1 and not (self.lattice.n == 1 and pts.ndim == 1 and pts.size > 1)
        if self.lattice.n == 1 and pts.ndim == 1:
            pts = pts[:, None]
        vals = self.level_slice(self.level_of(t))(np.atleast_2d(pts))
        return float(vals[0]) if single else vals

    def header(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "domain": self.domain.as_dict(),
            "h": self.h,
            "K": self.K,
            "lattice_shape": list(self.lattice.shape),
            "lattice_origin": [float(v) for v in self.lattice.origin],
            **self.meta,
        }

    def rows(self):
        """Yield CSV rows ``(level, t, x_1..x_n, value)``."""
        nodes = self.lattice.nodes()
        for k in range(self.K + 1):
            t = k * self.params.dt
            vals = self.values[k].reshape(-1)
            for node, v in zip(nodes, vals):
                yield (k, t, *node.tolist(), float(v))

    def columns(self) -> list[str]:
        return ["level", "t", *[f"x{i + 1}" for i in range(self.lattice.n)], "value"]


_SLACK = 1e-9


@njit(cache=True)
def _locate(s, n_nodes):
    if s < -_SLACK or s > n_nodes - 1 + _SLACK:
        return -1, 0.0
    i = int(np.floor(s))
    if i < 0:
        i = 0
    elif i > n_nodes - 2:
        i = n_nodes - 2
    f = s - i
    if f < 0.0:
        f = 0.0
    elif f > 1.0:
        f = 1.0
    return i, f


@njit(cache=True)
def _interp1(flat, origin, inv_h, shape, pts, out):
    for m in range(pts.shape[0]):
        i, f = _locate((pts[m, 0] - origin[0]) * inv_h, shape[0])
        if i < 0:
            return m
        out[m] = flat[i] * (1.0 - f) + flat[i + 1] * f
    return -1


@njit(cache=True)
def _interp2(flat, origin, inv_h, shape, pts, out):
    stride = shape[1]
    for m in range(pts.shape[0]):
        i, fx = _locate((pts[m, 0] - origin[0]) * inv_h, shape[0])
        j, fy = _locate((pts[m, 1] - origin[1]) * inv_h, shape[1])
        if i < 0 or j < 0:
            return m
        b = i * stride + j
        out[m] = ((flat[b] * (1.0 - fy) + flat[b + 1] * fy) * (1.0 - fx)
                  + (flat[b + stride] * (1.0 - fy) + flat[b + stride + 1] * fy) * fx)
    return -1


@njit(cache=True)
def _interp3(flat, origin, inv_h, shape, pts, out):
    s1 = shape[1] * shape[2]
    s2 = shape[2]
    for m in range(pts.shape[0]):
        i, fx = _locate((pts[m, 0] - origin[0]) * inv_h, shape[0])
        j, fy = _locate((pts[m, 1] - origin[1]) * inv_h, shape[1])
        k, fz = _locate((pts[m, 2] - origin[2]) * inv_h, shape[2])
        if i < 0 or j < 0 or k < 0:
            return m
        b = i * s1 + j * s2 + k
        acc = 0.0
        for dx in range(2):
            wx = fx if dx else 1.0 - fx
            for dy in range(2):
                wy = fy if dy else 1.0 - fy
                for dz in range(2):
                    wz = fz if dz else 1.0 - fz
                    acc += flat[b + dx * s1 + dy * s2 + dz] * (wx * wy * wz)
        out[m] = acc
    return -1


_KERNELS = {1: _interp1, 2: _interp2, 3: _interp3}
