"""Domains, parabolic strips and the regularizing weight.

Every domain kind supported here (interval, box, ball, annulus) has a
closed-form signed distance and satisfies the exterior sphere condition,
so the strip classification and ``delta`` are exact up to roundoff.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

BOUNDARY_TOL = 1e-12

KINDS = ("interval", "box", "ball", "annulus")


@dataclass(frozen=True)
class SpaceTimePoint:
    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or x.size not in (1, 2, 3):
            raise ValueError(f"space coordinate must have length 1, 2 or 3, got shape {x.shape}")
        if not (np.all(np.isfinite(x)) and math.isfinite(self.t)):
            raise ValueError("space-time point must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return self.x.size


class RegionTag(enum.Enum):
    INTERIOR_CORE = "interior_core"
    LATERAL_STRIP_I = "lateral_strip_I"
    OUTSIDE_STRIP_O = "outside_strip_O"
    PARABOLIC_BOUNDARY = "parabolic_boundary"
    EXTERIOR = "exterior"


@dataclass(frozen=True)
class GameParams:
    """Step size, horizon and the tug/noise split.

    Build with :meth:`from_p` or :meth:`from_alpha`; the other exponent is
    derived through ``alpha = (p - 1) / (p + n)``.
    """

    n: int
    eps: float
    alpha: float
    T: float
    p: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.n}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.eps**2 / 2 < self.T:
            raise ValueError("horizon T must exceed eps^2 / 2")
        object.__setattr__(self, "beta", 1.0 - self.alpha)
        object.__setattr__(self, "p", (1.0 + self.n * self.alpha) / (1.0 - self.alpha))

    @classmethod
    def from_p(cls, n: int, eps: float, p: float, T: float) -> "GameParams":
        if not p > 1:
            raise ValueError("p must exceed 1")
        return cls(n=n, eps=eps, alpha=(p - 1.0) / (p + n), T=T)

    @classmethod
    def from_alpha(cls, n: int, eps: float, alpha: float, T: float) -> "GameParams":
        return cls(n=n, eps=eps, alpha=alpha, T=T)

    @property
    def dt(self) -> float:
        """Time decrement of one game round."""
        return self.eps**2 / 2

    def as_dict(self) -> dict:
        return {"n": self.n, "eps": self.eps, "alpha": self.alpha, "beta": self.beta,
                "p": self.p, "T": self.T}


@dataclass(frozen=True)
class DomainGeometry:
    """A bounded domain of one of the analytic kinds.

    Parameters by kind:

    * interval: ``lo``, ``hi`` (scalars, n = 1)
    * box: ``lo``, ``hi`` (corner vectors)
    * ball: ``center``, ``radius``
    * annulus: ``center``, ``r_in``, ``r_out``
    """

    kind: str
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None
    r_in: float | None = None
    r_out: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        for name in ("lo", "hi", "center"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.atleast_1d(np.asarray(val, dtype=float)))
        if self.kind in ("interval", "box"):
            if self.lo is None or self.hi is None or self.lo.shape != self.hi.shape:
                raise ValueError(f"{self.kind} needs lo and hi of equal length")
            if self.kind == "interval" and self.lo.size != 1:
                raise ValueError("interval is one-dimensional")
            if np.any(self.hi <= self.lo):
                raise ValueError("empty interior")
        elif self.kind == "ball":
            if self.center is None or self.radius is None or not self.radius > 0:
                raise ValueError("ball needs center and positive radius")
        else:
            if self.center is None or self.r_in is None or self.r_out is None:
                raise ValueError("annulus needs center, r_in and r_out")
            if not 0 < self.r_in < self.r_out:
                raise ValueError("annulus needs 0 < r_in < r_out")
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.n}")

    @classmethod
    def interval(cls, lo: float, hi: float) -> "DomainGeometry":
        return cls("interval", lo=[lo], hi=[hi])

    @classmethod
    def box(cls, lo, hi) -> "DomainGeometry":
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius: float) -> "DomainGeometry":
        return cls("ball", center=center, radius=float(radius))

    @classmethod
    def annulus(cls, center, r_in: float, r_out: float) -> "DomainGeometry":
        return cls("annulus", center=center, r_in=float(r_in), r_out=float(r_out))

    @property
    def n(self) -> int:
        if self.kind in ("interval", "box"):
            return self.lo.size
        return self.center.size

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind in ("interval", "box"):
            return self.lo.copy(), self.hi.copy()
        r = self.radius if self.kind == "ball" else self.r_out
        return self.center - r, self.center + r

    @property
    def enclosing_ball(self) -> tuple[np.ndarray, float]:
        """Center ``z_R`` and radius ``R`` with the domain inside ``B_R(z_R)``."""
        if self.kind in ("interval", "box"):
            c = 0.5 * (self.lo + self.hi)
            return c, float(np.linalg.norm(0.5 * (self.hi - self.lo)))
        r = self.radius if self.kind == "ball" else self.r_out
        return self.center.copy(), float(r)

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        for name in ("lo", "hi", "center"):
            val = getattr(self, name)
            if val is not None:
                d[name] = [float(v) for v in val]
        for name in ("radius", "r_in", "r_out"):
            val = getattr(self, name)
            if val is not None:
                d[name] = float(val)
        return d


def _as_points(domain: DomainGeometry, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    if domain.n == 1 and arr.ndim == 1 and arr.size != 1:
        # a flat array of 1-d points
        arr = arr[:, None]
        single = False
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != domain.n:
        raise ValueError(f"point dimension {arr.shape[-1]} does not match domain dimension {domain.n}")
    return arr, single


def dist_to_boundary(domain: DomainGeometry, x):
    """Signed distance to the boundary: positive inside, negative outside.

    Accepts a single point of length n or an (m, n) array.
    """
    pts, single = _as_points(domain, x)
    if domain.kind in ("interval", "box"):
        below = pts - domain.lo
        above = domain.hi - pts
        inside = np.minimum(below, above).min(axis=1)
        gap = np.maximum(np.maximum(-below, -above), 0.0)
        d = np.where(inside >= 0, inside, -np.sqrt((gap**2).sum(axis=1)))
    elif domain.kind == "ball":
        d = domain.radius - np.linalg.norm(pts - domain.center, axis=1)
    else:
        r = np.linalg.norm(pts - domain.center, axis=1)
        d = np.minimum(domain.r_out - r, r - domain.r_in)
    return float(d[0]) if single else d


def contains(domain: DomainGeometry, x):
    """Open-domain membership."""
    d = dist_to_boundary(domain, x)
    return d > 0


def classify_region(domain: DomainGeometry, params: GameParams, point: SpaceTimePoint) -> RegionTag:
    """Place a space-time point in the strip decomposition of the cylinder.

    ``t == 0`` over the closed domain belongs to the parabolic boundary;
    ``t == 0`` over the outer strip has no home in the set definitions and
    is tagged as outer strip (its weight is 1 either way).
    """
    eps = params.eps
    t = point.t
    if t > params.T:
        raise ValueError(f"time {t} beyond horizon {params.T}")
    if t <= -eps**2 / 2:
        return RegionTag.EXTERIOR
    d = dist_to_boundary(domain, point.x)
    on_boundary = abs(d) <= BOUNDARY_TOL
    if d < -BOUNDARY_TOL and -d >= eps:
        return RegionTag.EXTERIOR
    if t < 0:
        return RegionTag.OUTSIDE_STRIP_O
    if t == 0:
        return RegionTag.PARABOLIC_BOUNDARY if d >= -BOUNDARY_TOL else RegionTag.OUTSIDE_STRIP_O
    if on_boundary:
        return RegionTag.PARABOLIC_BOUNDARY
    if d < 0:
        return RegionTag.OUTSIDE_STRIP_O
    if t < eps**2 / 2 or d < eps:
        return RegionTag.LATERAL_STRIP_I
    return RegionTag.INTERIOR_CORE


def delta_from_distance(d, t, eps: float):
    """Vectorized weight from signed distance ``d`` and time ``t``.

    ``1 - min(1, d/eps) * min(1, sqrt(2t)/eps)`` inside the domain, 1 on and
    outside the boundary and for ``t <= 0``.
    """
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    space = np.minimum(1.0, np.maximum(d, 0.0) / eps)
    time = np.minimum(1.0, np.sqrt(np.maximum(2.0 * t, 0.0)) / eps)
    out = 1.0 - space * time
    out = np.where((d <= BOUNDARY_TOL) | (t <= 0), 1.0, out)
    return out


def delta_weight(domain: DomainGeometry, params: GameParams, point: SpaceTimePoint) -> float:
    """Termination probability at ``point``; 0 in the interior core."""
    tag = classify_region(domain, params, point)
    if tag is RegionTag.EXTERIOR:
        raise ValueError("point lies outside the extended cylinder")
    d = dist_to_boundary(domain, point.x)
    return float(delta_from_distance(d, point.t, params.eps))


def delta_bar(domain: DomainGeometry, eps: float, x):
    """Long-time limit of the weight: ``1 - min(1, dist/eps)`` inside, 1 outside."""
    return delta_from_distance(dist_to_boundary(domain, x), np.inf, eps)


def exterior_sphere(domain: DomainGeometry, y, radius_hint: float) -> tuple[np.ndarray, float]:
    """Ball outside the domain touching it at boundary point ``y``.

    Returns ``(z, radius)`` with ``radius <= radius_hint`` as large as the
    domain kind allows.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not radius_hint > 0:
        raise ValueError("radius_hint must be positive")
    d = dist_to_boundary(domain, y)
    if abs(d) > BOUNDARY_TOL:
        raise ValueError(f"point {y} is not on the boundary (distance {d:.3e})")
    rho = float(radius_hint)
    if domain.kind in ("interval", "box"):
        normal = np.zeros_like(y)
        normal[np.abs(y - domain.lo) <= BOUNDARY_TOL] -= 1.0
        normal[np.abs(y - domain.hi) <= BOUNDARY_TOL] += 1.0
        normal /= np.linalg.norm(normal)
        return y + rho * normal, rho
    offset = y - domain.center
    r = np.linalg.norm(offset)
    outward = offset / r
    if domain.kind == "annulus" and abs(r - domain.r_in) <= BOUNDARY_TOL:
        rho = min(rho, domain.r_in)
        return y - rho * outward, rho
    return y + rho * outward, rho


def boundary_projection(domain: DomainGeometry, x) -> np.ndarray:
    """Nearest boundary point to each point in ``x`` ((m, n) array)."""
    pts, _ = _as_points(domain, x)
    if domain.kind in ("interval", "box"):
        out = np.clip(pts, domain.lo, domain.hi)
        inside = np.all((pts > domain.lo) & (pts < domain.hi), axis=1)
        if np.any(inside):
            p = pts[inside]
            below = p - domain.lo
            above = domain.hi - p
            gaps = np.concatenate([below, above], axis=1)
            j = np.argmin(gaps, axis=1)
            q = p.copy()
            rows = np.arange(len(p))
            axis = j % domain.n
            q[rows, axis] = np.where(j < domain.n, domain.lo[axis], domain.hi[axis])
            out[inside] = q
        return out
    offset = pts - domain.center
    r = np.linalg.norm(offset, axis=1)
    r_safe = np.where(r > 0, r, 1.0)
    unit = np.where(r[:, None] > 0, offset / r_safe[:, None], np.eye(domain.n)[0])
    if domain.kind == "ball":
        target = np.full_like(r, domain.radius)
    else:
        mid = 0.5 * (domain.r_in + domain.r_out)
        target = np.where(r >= mid, domain.r_out, domain.r_in)
    return domain.center + unit * target[:, None]
