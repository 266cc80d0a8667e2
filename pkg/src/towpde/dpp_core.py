"""The dynamic programming operator and its solvers.

The parabolic DPP couples level ``k`` only to level ``k - 1`` (time step
``eps^2 / 2``), so it is solved by exact explicit marching; only space is
discretized (multilinear interpolation on a lattice covering the domain
padded by ``eps``).  The elliptic limit problem is solved by Picard
iteration started from both constant barriers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import DomainGeometry, GameParams, delta_from_distance, dist_to_boundary
from .grid import GridFunction, GridSlice, Lattice
from .quadrature import BallRule, DirectionSet, midrange_batch

logger = logging.getLogger(__name__)

DEFAULT_H_RATIO = 8


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


@dataclass(frozen=True)
class BoundaryData:
    """Payoff ``F(x, t)`` on the boundary strips.

    ``F`` is called with an (m, n) point array and a scalar or (m,) time
    array and returns (m,) values.  It is also evaluated at lattice
    corners lying just outside the padded domain, so it should be defined
    on the whole lattice box.
    """

    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    L: float | None = None
    name: str = "custom"

    def __call__(self, x, t) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        tt = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
        return np.asarray(self.F(X, tt), dtype=float).reshape(len(X))

    @classmethod
    def constant(cls, c: float) -> "BoundaryData":
        return cls(lambda X, t: np.full(len(X), float(c)), L=0.0, name=f"constant({c})")

    def shifted(self, c: float) -> "BoundaryData":
        return BoundaryData(lambda X, t: self.F(X, t) + c, self.L, f"{self.name}+{c}")


def default_lattice(domain: DomainGeometry, params: GameParams, h: float | None = None) -> Lattice:
    return Lattice.covering(domain, params.eps, h if h is not None else params.eps / DEFAULT_H_RATIO)


def _nodes_and_dist(lattice: Lattice, domain: DomainGeometry):
    nodes = lattice.nodes()
    return nodes, dist_to_boundary(domain, nodes)


def _midrange_values(prev: GridSlice, X, params, dirs, rule, threads: int) -> np.ndarray:
    if threads <= 1 or len(X) < 2 * 1024:
        return midrange_batch(prev, X, params, dirs, rule).value
    parts = np.array_split(np.arange(len(X)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda idx: midrange_batch(prev, X[idx], params, dirs, rule).value, parts))
    return np.concatenate(results)


def _combine(prev: GridSlice, nodes, delta, f_vals, params, dirs, rule, threads) -> np.ndarray:
    out = np.where(delta > 0, f_vals, 0.0)
    need = delta < 1.0
    if np.any(need):
        M = _midrange_values(prev, nodes[need], params, dirs, rule, threads)
        d = delta[need]
        out[need] = np.where(d > 0, (1.0 - d) * M + d * f_vals[need], M)
    return out


def apply_T(prev_slice: GridSlice, t: float, F: BoundaryData, params: GameParams,
            domain: DomainGeometry, dirs: DirectionSet | None = None,
            rule: BallRule | None = None, threads: int = 1, _geom=None) -> GridSlice:
    """One application of the DPP operator at time ``t`` from the slice at ``t - eps^2/2``."""
    if t < params.dt * (1 - 1e-12):
        raise ValueError("apply_T needs t >= eps^2 / 2")
    dirs = dirs or DirectionSet.default(params.n)
    rule = rule or BallRule.default(params.n)
    lattice = prev_slice.lattice
    nodes, dist = _geom if _geom is not None else _nodes_and_dist(lattice, domain)
    delta = delta_from_distance(dist, t, params.eps)
    f_vals = np.zeros(len(nodes))
    hit = delta > 0
    if np.any(hit):
        f_vals[hit] = F(nodes[hit], t)
    return GridSlice(lattice, _combine(prev_slice, nodes, delta, f_vals, params, dirs, rule, threads))


def march(domain: DomainGeometry, params: GameParams, F: BoundaryData, K: int,
          dirs: DirectionSet | None = None, lattice: Lattice | None = None,
          rule: BallRule | None = None, threads: int = 1):
    """Yield ``(k, slice)`` for ``k = 0..K`` without storing the history."""
    dirs = dirs or DirectionSet.default(params.n)
    rule = rule or BallRule.default(params.n)
    lattice = lattice or default_lattice(domain, params)
    geom = _nodes_and_dist(lattice, domain)
    current = GridSlice(lattice, F(geom[0], 0.0))
    yield 0, current
    for k in range(1, K + 1):
        current = apply_T(current, k * params.dt, F, params, domain, dirs, rule, threads, _geom=geom)
        yield k, current


def n_levels(params: GameParams) -> int:
    return int(math.ceil(round(params.T / params.dt, 9)))


def solve_parabolic_dpp(domain: DomainGeometry, params: GameParams, F: BoundaryData,
                        dirs: DirectionSet | None = None, h: float | None = None,
                        lattice: Lattice | None = None, rule: BallRule | None = None,
                        threads: int = 1) -> GridFunction:
    """March the DPP from ``F(., 0)`` up to the first level at or beyond ``T``."""
    dirs = dirs or DirectionSet.default(params.n)
    lattice = lattice or default_lattice(domain, params, h)
    K = n_levels(params)
    values = np.empty((K + 1, *lattice.shape))
    for k, sl in march(domain, params, F, K, dirs, lattice, rule, threads):
        values[k] = sl.values
    logger.debug("solved parabolic DPP: K=%d, lattice %s", K, lattice.shape)
    return GridFunction(domain, params, lattice, values,
                        meta={"dirs": dirs.as_dict(), "F": F.name})


def dpp_residual(u: GridFunction, params: GameParams, domain: DomainGeometry, F: BoundaryData,
                 dirs: DirectionSet | None = None, rule: BallRule | None = None) -> float:
    """Largest violation of the DPP over levels ``k >= 1`` and all lattice nodes."""
    dirs = dirs or DirectionSet.default(params.n)
    geom = _nodes_and_dist(u.lattice, domain)
    worst = 0.0
    for k in range(1, u.K + 1):
        new = apply_T(u.level_slice(k - 1), k * params.dt, F, params, domain, dirs, rule, _geom=geom)
        worst = max(worst, float(np.max(np.abs(new.values - u.values[k]))))
    return worst


class EllipticSolution(GridSlice):
    def __init__(self, lattice, values, iterations: int, residual: float, gap: float, upper: np.ndarray):
        super().__init__(lattice, values)
        self.iterations = iterations
        self.residual = residual
        self.gap = gap
        self.upper = GridSlice(lattice, upper)


def apply_T_elliptic(U: GridSlice, psi_vals: np.ndarray, delta_bar: np.ndarray, nodes: np.ndarray,
                     params: GameParams, dirs: DirectionSet, rule: BallRule, threads: int = 1) -> GridSlice:
    return GridSlice(U.lattice, _combine(U, nodes, delta_bar, psi_vals, params, dirs, rule, threads))


def solve_elliptic_dpp(domain: DomainGeometry, params: GameParams, psi: Callable[[np.ndarray], np.ndarray],
                       tol: float = 1e-9, max_iter: int = 10**6, dirs: DirectionSet | None = None,
                       h: float | None = None, lattice: Lattice | None = None,
                       rule: BallRule | None = None, threads: int = 1) -> EllipticSolution:
    """Picard iteration for the time-independent DPP from the barriers ``min psi`` and ``max psi``.

    ``psi`` takes an (m, n) array.  Converged when both iterates have
    sup-residual at most ``tol`` and differ by at most ``2 tol``.
    """
    dirs = dirs or DirectionSet.default(params.n)
    rule = rule or BallRule.default(params.n)
    lattice = lattice or default_lattice(domain, params, h)
    nodes, dist = _nodes_and_dist(lattice, domain)
    dbar = delta_from_distance(dist, np.inf, params.eps)
    psi_vals = np.zeros(len(nodes))
    on_strip = dbar > 0
    psi_vals[on_strip] = np.asarray(psi(nodes[on_strip]), dtype=float)
    lo_c, hi_c = float(psi_vals[on_strip].min()), float(psi_vals[on_strip].max())
    lower = GridSlice(lattice, np.full(len(nodes), lo_c))
    upper = GridSlice(lattice, np.full(len(nodes), hi_c))
    res_lo = res_hi = math.inf
    for it in range(max_iter + 1):
        new_lo = apply_T_elliptic(lower, psi_vals, dbar, nodes, params, dirs, rule, threads)
        new_hi = apply_T_elliptic(upper, psi_vals, dbar, nodes, params, dirs, rule, threads)
        res_lo = float(np.max(np.abs(new_lo.values - lower.values)))
        res_hi = float(np.max(np.abs(new_hi.values - upper.values)))
        gap = float(np.max(np.abs(upper.values - lower.values)))
        if res_lo <= tol and res_hi <= tol and gap <= 2 * tol:
            logger.debug("elliptic DPP converged after %d iterations", it)
            return EllipticSolution(lattice, lower.values, it, res_lo, gap, upper.values)
        lower, upper = new_lo, new_hi
    raise ConvergenceError(f"elliptic DPP did not converge in {max_iter} iterations", max(res_lo, res_hi))


@dataclass(frozen=True)
class Comparison:
    leq: bool
    geq: bool
    max_excess: float  # max(u - v, 0): violation of u <= v
    max_deficit: float  # max(v - u, 0): violation of u >= v
    worst_gap: float  # max |u - v|

    @property
    def relation(self) -> str:
        if self.leq and self.geq:
            return "equal"
        if self.leq:
            return "leq"
        if self.geq:
            return "geq"
        return "incomparable"


def compare_solutions(u: GridFunction, v: GridFunction) -> Comparison:
    """Pointwise order between two solutions on the same space-time lattice."""
    if not u.lattice.same_as(v.lattice) or u.values.shape != v.values.shape:
        raise ValueError("solutions live on different lattices")
    diff = u.values - v.values
    excess = float(max(diff.max(), 0.0))
    deficit = float(max((-diff).max(), 0.0))
    return Comparison(excess == 0.0, deficit == 0.0, excess, deficit, float(np.abs(diff).max()))
