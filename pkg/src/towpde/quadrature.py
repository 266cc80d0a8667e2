"""Direction sets, (n-1)-disk averaging and the one-step operator.

A "slice" is any callable taking an (m, n) array of points and returning
an (m,) array of values; :class:`towpde.grid.GridSlice` is the usual one.

The sup/inf over the unit sphere is realized as a scan over a fixed
direction set followed by an optional local refinement around the best
scanned direction (golden section on the angle in 2-d, a compass search
on the tangent plane in 3-d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GameParams

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_COUNTS = {1: 2, 2: 64, 3: 194}
CHUNK = 4096


def fibonacci_sphere(N: int) -> np.ndarray:
    """Golden-spiral covering of the unit 2-sphere with ``N`` points."""
    k = np.arange(N)
    z = 1.0 - (2.0 * k + 1.0) / N
    r = np.sqrt(1.0 - z**2)
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass(frozen=True)
class DirectionSet:
    n: int
    vectors: np.ndarray
    refinement: str = "local_bracket"
    theta_tol: float = 1e-4

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=float)
        if vec.ndim != 2 or vec.shape[1] != self.n:
            raise ValueError("direction vectors must be (N, n)")
        if np.any(np.abs(np.linalg.norm(vec, axis=1) - 1.0) > 1e-12):
            raise ValueError("direction vectors must be unit length")
        if self.refinement not in ("none", "local_bracket"):
            raise ValueError(f"unknown refinement {self.refinement!r}")
        object.__setattr__(self, "vectors", vec)

    @classmethod
    def default(cls, n: int, N: int | None = None, refinement: str = "local_bracket",
                theta_tol: float = 1e-4) -> "DirectionSet":
        if n == 1:
            return cls(1, np.array([[1.0], [-1.0]]), "none", theta_tol)
        N = N or DEFAULT_COUNTS[n]
        if n == 2:
            theta = 2.0 * math.pi * np.arange(N) / N
            vec = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        elif n == 3:
            vec = fibonacci_sphere(N)
            vec /= np.linalg.norm(vec, axis=1, keepdims=True)
        else:
            raise ValueError(f"unsupported dimension {n}")
        return cls(n, vec, refinement, theta_tol)

    @property
    def N(self) -> int:
        return len(self.vectors)

    @property
    def spacing(self) -> float:
        """Angular spacing of the scan (angle between neighbours)."""
        if self.n == 1:
            return math.pi
        if self.n == 2:
            return 2.0 * math.pi / self.N
        return math.sqrt(4.0 * math.pi / self.N)

    def as_dict(self) -> dict:
        return {"n": self.n, "N": self.N, "refinement": self.refinement, "theta_tol": self.theta_tol}


def _exact_unit_sum(w: np.ndarray) -> np.ndarray:
    """Rescale to sum 1 and adjust the last weight so the left-to-right
    floating-point sum is exactly 1 (constant slices then average exactly)."""
    w = np.asarray(w, dtype=float) / np.sum(w)
    head = 0.0
    for v in w[:-1]:
        head += v
    w[-1] = 1.0 - head
    return w


@dataclass(frozen=True)
class BallRule:
    """Averaging rule on the unit (n-1)-disk; nodes are scaled by eps at use."""

    n: int
    nodes: np.ndarray  # (q, n-1), inside the unit disk
    weights: np.ndarray  # (q,), sum 1

    @classmethod
    def default(cls, n: int) -> "BallRule":
        if n == 1:
            return cls(1, np.zeros((1, 0)), np.ones(1))
        if n == 2:
            x, w = np.polynomial.legendre.leggauss(5)
            return cls(2, x[:, None], _exact_unit_sum(w))
        if n == 3:
            # radial Gauss-Legendre for the measure r dr on [0, 1] times 6 equispaced angles
            x, w = np.polynomial.legendre.leggauss(3)
            r = 0.5 * (x + 1.0)
            wr = 0.5 * w * r
            ang = 2.0 * math.pi * np.arange(6) / 6
            nodes = np.array([[ri * math.cos(a), ri * math.sin(a)] for ri in r for a in ang])
            weights = np.array([wi for wi in wr for _ in ang])
            return cls(3, nodes, _exact_unit_sum(weights))
        raise ValueError(f"unsupported dimension {n}")

    @property
    def q(self) -> int:
        return len(self.weights)


def perp_frames(V: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the complement of each unit vector: (m, n, n-1)."""
    V = np.asarray(V, dtype=float)
    m, n = V.shape
    if n == 1:
        return np.zeros((m, 1, 0))
    if n == 2:
        return np.stack([-V[:, 1], V[:, 0]], axis=1)[:, :, None]
    helper = np.where(np.abs(V[:, :1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    b1 = helper - (helper * V).sum(axis=1, keepdims=True) * V
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(V, b1)
    return np.stack([b1, b2], axis=2)


def _ball_points(X: np.ndarray, V: np.ndarray, eps: float, rule: BallRule):
    frames = perp_frames(V)
    for j in range(rule.q):
        if rule.n == 1:
            yield rule.weights[j], X
        else:
            offset = np.zeros_like(X)
            for k in range(rule.n - 1):
                offset = offset + frames[:, :, k] * rule.nodes[j, k]
            yield rule.weights[j], X + eps * offset


def ball_average(slice_, x, nu, eps: float, rule: BallRule | None = None):
    """Average of ``slice_`` over the disk of radius eps through ``x`` orthogonal to ``nu``."""
    X, V, single = _pair(x, nu)
    rule = rule or BallRule.default(X.shape[1])
    out = np.zeros(len(X))
    for w, P in _ball_points(X, V, eps, rule):
        out = out + w * slice_(P)
    return float(out[0]) if single else out


def a_values(slice_, X: np.ndarray, V: np.ndarray, alpha: float, eps: float, rule: BallRule) -> np.ndarray:
    """``alpha * u(x + eps v) + beta * disk average`` row by row."""
    tug = slice_(X + eps * V)
    avg = np.zeros(len(X))
    for w, P in _ball_points(X, V, eps, rule):
        avg = avg + w * slice_(P)
    return alpha * tug + (1.0 - alpha) * avg


def _pair(x, nu):
    X = np.asarray(x, dtype=float)
    V = np.asarray(nu, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    V = np.atleast_2d(V)
    if V.shape[0] == 1 and X.shape[0] > 1:
        V = np.repeat(V, X.shape[0], axis=0)
    return X, V, single


def a_epsilon(slice_, x, nu, params: GameParams, rule: BallRule | None = None):
    X, V, single = _pair(x, nu)
    rule = rule or BallRule.default(params.n)
    out = a_values(slice_, X, V, params.alpha, params.eps, rule)
    return float(out[0]) if single else out


@dataclass
class MidrangeResult:
    value: np.ndarray
    nu_max: np.ndarray
    nu_min: np.ndarray
    a_max: np.ndarray
    a_min: np.ndarray
    coarse_max: np.ndarray
    coarse_min: np.ndarray


def _scan(slice_, X, params, dirs, rule):
    m, N = len(X), dirs.N
    Xr = np.repeat(X, N, axis=0)
    Vr = np.tile(dirs.vectors, (m, 1))
    return a_values(slice_, Xr, Vr, params.alpha, params.eps, rule).reshape(m, N)


def _golden_2d(f, theta0, half_width, tol):
    """Vectorized golden-section maximization of ``f(theta)`` on ``theta0 +- half_width``."""
    a = theta0 - half_width
    b = theta0 + half_width
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    iters = max(0, math.ceil(math.log(tol / (2.0 * half_width)) / math.log(GOLDEN)))
    for _ in range(iters):
        keep_left = fc >= fd
        a = np.where(keep_left, a, c)
        b = np.where(keep_left, d, b)
        new_c = b - GOLDEN * (b - a)
        new_d = a + GOLDEN * (b - a)
        probe = np.where(keep_left, new_c, new_d)
        fp = f(probe)
        c, fc, d, fd = (np.where(keep_left, new_c, d), np.where(keep_left, fp, fd),
                        np.where(keep_left, c, new_d), np.where(keep_left, fc, fp))
    best_left = fc >= fd
    return np.where(best_left, c, d), np.where(best_left, fc, fd)


def _compass_3d(f, V0, f0, step0, tol, max_iter=400):
    """Vectorized compass search on the sphere maximizing ``f(V)``."""
    V, fv = V0.copy(), f0.copy()
    step = np.full(len(V), step0)
    for _ in range(max_iter):
        active = step >= tol
        if not np.any(active):
            break
        frames = perp_frames(V)
        best_V, best_f = V, fv
        for k in range(2):
            for sign in (1.0, -1.0):
                trial = V + sign * step[:, None] * frames[:, :, k]
                trial /= np.linalg.norm(trial, axis=1, keepdims=True)
                ft = f(trial)
                better = (ft > best_f) & active
                best_V = np.where(better[:, None], trial, best_V)
                best_f = np.where(better, ft, best_f)
        moved = best_f > fv
        step = np.where(moved | ~active, step, 0.5 * step)
        V, fv = best_V, best_f
    return V, fv


def _candidates(S):
    """Scan indices worth refining: cyclic local maxima of ``S`` whose value is
    within one adjacent jump of the row maximum, plus the row argmax."""
    left = np.roll(S, 1, axis=1)
    right = np.roll(S, -1, axis=1)
    peak = (S >= left) & (S > right)
    margin = np.max(np.abs(right - S), axis=1)
    cand = peak & (S >= S.max(axis=1, keepdims=True) - margin[:, None])
    cand[np.arange(len(S)), np.argmax(S, axis=1)] = True
    return np.nonzero(cand)


def _refine(slice_, X, params, dirs, rule, A, idx, coarse, sign):
    """Refine the maximization of ``sign * A`` over directions.

    In 2-d every competitive coarse local extremum is bracketed, so a
    second basin that overtakes the coarse winner is not missed; in 3-d a
    compass search starts from the coarse winner.
    """
    alpha, eps = params.alpha, params.eps
    if dirs.n == 2:
        rows, cols = _candidates(sign * A)
        Xc = X[rows]

        def f(theta):
            V = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            return sign * a_values(slice_, Xc, V, alpha, eps, rule)

        theta, fv = _golden_2d(f, 2.0 * math.pi * cols / dirs.N, dirs.spacing, dirs.theta_tol)
        # best candidate per row; ties go to the lowest scan index
        order = np.lexsort((cols, -fv, rows))
        _, first = np.unique(rows[order], return_index=True)
        pick = order[first]
        theta, fv = theta[pick], fv[pick]
        V = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        def f(V):
            return sign * a_values(slice_, X, V, alpha, eps, rule)

        V, fv = _compass_3d(f, dirs.vectors[idx], sign * coarse, 0.5 * dirs.spacing, dirs.theta_tol)
    return V, sign * fv


def midrange_batch(slice_, X, params: GameParams, dirs: DirectionSet,
                   rule: BallRule | None = None, chunk: int = CHUNK) -> MidrangeResult:
    """Midrange of the one-step operator over directions at each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rule = rule or BallRule.default(params.n)
    parts = [_midrange_chunk(slice_, X[i:i + chunk], params, dirs, rule)
             for i in range(0, len(X), chunk)]
    if not parts:
        empty = np.zeros(0)
        return MidrangeResult(empty, np.zeros((0, X.shape[1])), np.zeros((0, X.shape[1])),
                              empty, empty, empty, empty)
    return MidrangeResult(*[np.concatenate([getattr(p, f) for p in parts])
                            for f in MidrangeResult.__dataclass_fields__])


def _midrange_chunk(slice_, X, params, dirs, rule):
    A = _scan(slice_, X, params, dirs, rule)
    rows = np.arange(len(X))
    imax = np.argmax(A, axis=1)
    imin = np.argmin(A, axis=1)
    cmax = A[rows, imax]
    cmin = A[rows, imin]
    nu_max = dirs.vectors[imax].copy()
    nu_min = dirs.vectors[imin].copy()
    a_max, a_min = cmax.copy(), cmin.copy()
    if dirs.refinement == "local_bracket" and dirs.n > 1:
        V, fv = _refine(slice_, X, params, dirs, rule, A, imax, cmax, 1.0)
        up = fv > a_max
        nu_max = np.where(up[:, None], V, nu_max)
        a_max = np.where(up, fv, a_max)
        V, fv = _refine(slice_, X, params, dirs, rule, A, imin, cmin, -1.0)
        down = fv < a_min
        nu_min = np.where(down[:, None], V, nu_min)
        a_min = np.where(down, fv, a_min)
    return MidrangeResult(0.5 * (a_max + a_min), nu_max, nu_min, a_max, a_min, cmax, cmin)


def midrange_over_directions(slice_, x, params: GameParams, dirs: DirectionSet,
                             rule: BallRule | None = None):
    """Return ``(value, nu_max, nu_min)`` at a single point ``x``."""
    res = midrange_batch(slice_, np.asarray(x, dtype=float)[None, :], params, dirs, rule)
    return float(res.value[0]), res.nu_max[0], res.nu_min[0]
