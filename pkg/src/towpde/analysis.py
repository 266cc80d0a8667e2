"""Reference solutions, consistency checks and convergence studies."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dpp_core import BoundaryData, default_lattice, march, solve_elliptic_dpp, solve_parabolic_dpp
from .geometry import (
    DomainGeometry,
    GameParams,
    boundary_projection,
    dist_to_boundary,
    exterior_sphere,
)
from .grid import GridFunction
from .quadrature import BallRule, DirectionSet, ball_average

logger = logging.getLogger(__name__)

LOG_BRANCH_TOL = 1e-10


@dataclass
class ReferenceSolution:
    """A smooth function of ``(x, t)`` with optional exact derivatives.

    All callables take an (m, n) point array and an (m,) time array.
    """

    kind: str
    value: Callable
    dt: Callable | None = None
    grad: Callable | None = None
    hess: Callable | None = None
    params: dict = field(default_factory=dict)
    L: float | None = None

    def boundary_data(self) -> BoundaryData:
        return BoundaryData(self.value, L=self.L, name=self.kind)


def custom_smooth(value, dt, grad, hess, **params) -> ReferenceSolution:
    return ReferenceSolution("custom_smooth", value, dt, grad, hess, params)


def heat_reference(n: int = 1, p: float = 2.0, T: float = 1.0) -> ReferenceSolution:
    """``exp(-pi^2 t / 3) sin(pi x)`` on (0, 1), which solves ``3 u_t = u_xx``.

    ``T`` only enters the parabolic Lipschitz constant ``L``.
    """
    if n != 1 or p != 2.0:
        raise ValueError("the heat reference exists for n = 1, p = 2 only")
    k = math.pi**2 / 3.0

    def value(X, t):
        return np.exp(-k * np.asarray(t)) * np.sin(math.pi * X[:, 0])

    def dt(X, t):
        return -k * value(X, t)

    def grad(X, t):
        return (math.pi * np.exp(-k * np.asarray(t)) * np.cos(math.pi * X[:, 0]))[:, None]

    def hess(X, t):
        return (-(math.pi**2) * value(X, t))[:, None, None]

    L = max(math.pi, k * math.sqrt(T))
    return ReferenceSolution("heat_eigen", value, dt, grad, hess, {"n": 1, "p": 2.0}, L)


def constant_reference(c: float) -> ReferenceSolution:
    def value(X, t):
        return np.full(len(X), float(c))

    def zero(X, t):
        return np.zeros(len(X))

    return ReferenceSolution("constant", value, zero,
                             lambda X, t: np.zeros_like(X),
                             lambda X, t: np.zeros((len(X), X.shape[1], X.shape[1])), {"c": c}, 0.0)


# -- the radial comparison function of the exit-time estimate --------------------------

def _radial_consts(n, alpha, delta_ext, R, eps):
    if n < 1:
        raise ValueError("n must be positive")
    Re = R + eps
    A = -(n + 1) / (2 * alpha + n - 1)
    if n > 1 and abs(alpha - (n - 1) / (2 * n)) <= LOG_BRANCH_TOL:
        c1 = 2 * n / (n - 1) * Re**2
        A = -n / (n - 1)
        c2 = -(A * delta_ext**2 + c1 * math.log(delta_ext))
        return "log", A, c1, c2, None
    expo = (2 * alpha * n - n + 1) / ((n + 1) * alpha)
    c1 = (2 * (n + 1) ** 2 * alpha / ((2 * alpha + n - 1) * (2 * alpha * n - n + 1))
          * Re ** ((n + 2 * alpha - 1) / ((n + 1) * alpha)))
    c2 = -(A * delta_ext**2 + c1 * delta_ext**expo)
    return "power", A, c1, c2, expo


def _check_radius(r, delta_ext, R, eps):
    r = np.asarray(r, dtype=float)
    if np.any(r <= delta_ext - eps) or np.any(r > R + eps):
        raise ValueError(f"radius outside ({delta_ext - eps}, {R + eps}]")
    return r


def radial_w(r, n: int, alpha: float, delta_ext: float, R: float, eps: float):
    """Closed-form solution of ``(1-a)/(2r) (n-1)/(n+1) w' + (a/2) w'' = -1``,
    ``w(delta_ext) = 0``, ``w'(R + eps) = 0``."""
    r = _check_radius(r, delta_ext, R, eps)
    branch, A, c1, c2, expo = _radial_consts(n, alpha, delta_ext, R, eps)
    if branch == "log":
        out = A * r**2 + c1 * np.log(r) + c2
    else:
        out = A * r**2 + c1 * r**expo + c2
    return float(out) if out.ndim == 0 else out


def radial_w_prime(r, n: int, alpha: float, delta_ext: float, R: float, eps: float):
    r = _check_radius(r, delta_ext, R, eps)
    branch, A, c1, c2, expo = _radial_consts(n, alpha, delta_ext, R, eps)
    if branch == "log":
        out = 2 * A * r + c1 / r
    else:
        out = 2 * A * r + c1 * expo * r ** (expo - 1)
    return float(out) if out.ndim == 0 else out


def radial_ode_residual(w, r, n: int, alpha: float, step: float = 1e-3):
    """ODE residual of a radial profile ``w`` from fourth-order central differences."""
    r = np.asarray(r, dtype=float)
    w1 = (-w(r + 2 * step) + 8 * w(r + step) - 8 * w(r - step) + w(r - 2 * step)) / (12 * step)
    w2 = (-w(r + 2 * step) + 16 * w(r + step) - 30 * w(r) + 16 * w(r - step) - w(r - 2 * step)) / (12 * step**2)
    return (1 - alpha) / (2 * r) * (n - 1) / (n + 1) * w1 + alpha / 2 * w2 + 1.0


# -- Taylor consistency ------------------------------------------------------------------

def taylor_residual(phi: ReferenceSolution, x, t: float, nu, params: GameParams,
                    rule: BallRule | None = None) -> float:
    """Gap between the symmetric one-step average of ``phi`` at ``t - eps^2/2``
    and its second-order expansion at ``(x, t)``.

    The numeric side is ``alpha/2 [phi(x+eps nu) + phi(x-eps nu)] + beta * disk average``;
    the prediction is ``phi - eps^2/2 phi_t + alpha eps^2/2 <D2 phi nu, nu>
    + beta eps^2/(2(n+1)) Lap_perp phi``.
    """
    if phi.dt is None or phi.hess is None:
        raise ValueError("taylor_residual needs exact time derivative and Hessian")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    nu = nu / np.linalg.norm(nu)
    n, eps, a, b = params.n, params.eps, params.alpha, params.beta
    rule = rule or BallRule.default(n)
    s = t - eps**2 / 2
    X = x[None, :]

    def slice_(P):
        return phi.value(P, np.full(len(P), s))

    half_sum = 0.5 * (slice_(X + eps * nu)[0] + slice_(X - eps * nu)[0])
    avg = ball_average(slice_, x, nu, eps, rule)
    numeric = a * half_sum + b * avg
    t0 = np.array([t])
    H = phi.hess(X, t0)[0]
    along = float(nu @ H @ nu)
    lap_perp = float(np.trace(H)) - along
    predicted = (phi.value(X, t0)[0] - eps**2 / 2 * phi.dt(X, t0)[0]
                 + a * eps**2 / 2 * along + b * eps**2 / (2 * (n + 1)) * lap_perp)
    return abs(numeric - predicted)


# -- convergence as eps -> 0 -----------------------------------------------------------

@dataclass
class ErrorRow:
    eps: float
    h: float
    sup_error: float
    runtime: float


@dataclass
class ErrorTable:
    rows: list[ErrorRow]

    @property
    def verdict(self) -> str:
        for prev, cur in zip(self.rows, self.rows[1:]):
            if not cur.sup_error < prev.sup_error:
                return f"violation at eps={cur.eps}: {cur.sup_error:.3e} >= {prev.sup_error:.3e}"
        return "monotone decreasing"

    @property
    def monotone(self) -> bool:
        return self.verdict == "monotone decreasing"

    def columns(self) -> list[str]:
        return ["eps", "h", "sup_error"]

    def csv_rows(self):
        for r in self.rows:
            yield (r.eps, r.h, r.sup_error)


def sup_error(u: GridFunction, reference: ReferenceSolution) -> float:
    """Largest nodal error over the closed domain and all levels."""
    nodes = u.lattice.nodes()
    inside = dist_to_boundary(u.domain, nodes) >= 0
    pts = nodes[inside]
    worst = 0.0
    for k in range(u.K + 1):
        t = np.full(len(pts), k * u.params.dt)
        err = np.abs(u.values[k].reshape(-1)[inside] - reference.value(pts, t))
        worst = max(worst, float(err.max()))
    return worst


def convergence_study(domain: DomainGeometry, reference: ReferenceSolution, eps_list,
                      params_template: dict, h_ratio: float = 8, dirs: DirectionSet | None = None,
                      threads: int = 1) -> ErrorTable:
    """Solve with the reference as boundary data for each eps and tabulate sup errors.

    ``params_template`` holds ``n``, ``T`` and one of ``p`` / ``alpha``.
    """
    F = reference.boundary_data()
    rows = []
    for eps in sorted(eps_list, reverse=True):
        params = _params_from_template(params_template, eps)
        start = time.perf_counter()
        u = solve_parabolic_dpp(domain, params, F, dirs=dirs, h=eps / h_ratio, threads=threads)
        err = sup_error(u, reference)
        rows.append(ErrorRow(eps, eps / h_ratio, err, time.perf_counter() - start))
        logger.info("eps=%g sup error %.3e", eps, err)
    return ErrorTable(rows)


def _params_from_template(tpl: dict, eps: float) -> GameParams:
    if "p" in tpl and tpl["p"] is not None:
        return GameParams.from_p(tpl["n"], eps, tpl["p"], tpl["T"])
    return GameParams.from_alpha(tpl["n"], eps, tpl["alpha"], tpl["T"])


# -- long-time behaviour ------------------------------------------------------------------

def ramp_data(psi: Callable, phi_init: Callable, eps: float) -> BoundaryData:
    """Boundary data that switches from ``phi_init`` to the stationary ``psi``.

    ``phi_init(x, t)`` for ``t <= eps^2/2``, ``psi(x)`` for ``t > eps^2``
    and a linear ramp in between, continuous at both ends.
    """
    e2 = eps**2

    def F(X, t):
        t = np.asarray(t, dtype=float)
        early = phi_init(X, t)
        start = phi_init(X, np.full(len(X), e2 / 2))
        late = psi(X)
        w = 2 * t / e2 - 1.0
        # convex form so both ends are hit exactly
        ramp = (1.0 - w) * start + w * late
        return np.where(t <= e2 / 2, early, np.where(t <= e2, ramp, late))

    return BoundaryData(F, name="ramp")


@dataclass
class AsymptoticTable:
    K: list[int]
    t: list[float]
    sup_diff: list[float]
    all_diffs: np.ndarray
    nondecreasing: bool
    nonincreasing: bool
    diffs_nonincreasing: bool
    elliptic_iterations: int
    tol: float

    def columns(self) -> list[str]:
        return ["K", "t", "sup_diff"]

    def csv_rows(self):
        yield from zip(self.K, self.t, self.sup_diff)


def asymptotic_study(domain: DomainGeometry, psi: Callable, phi_init: Callable, params: GameParams,
                     K_list, h: float | None = None, dirs: DirectionSet | None = None,
                     tol: float = 1e-9) -> AsymptoticTable:
    """Distance between ``u(., t_K)`` and the stationary solution for each ``K``.

    Also reports whether every node's value sequence is monotone in time
    (the barrier property) and whether the sup distance is non-increasing
    from level 2 on, up to ``2 tol`` (the accuracy of the stationary solve).
    """
    K_list = sorted(int(k) for k in K_list)
    Kmax = K_list[-1]
    params = GameParams.from_alpha(params.n, params.eps, params.alpha, max(Kmax, 1) * params.dt)
    dirs = dirs or DirectionSet.default(params.n)
    lattice = default_lattice(domain, params, h)
    U = solve_elliptic_dpp(domain, params, psi, tol=tol, dirs=dirs, lattice=lattice)
    F = ramp_data(psi, phi_init, params.eps)
    diffs = np.empty(Kmax + 1)
    up = down = True
    prev = None
    for k, sl in march(domain, params, F, Kmax, dirs, lattice):
        diffs[k] = float(np.max(np.abs(sl.values - U.values)))
        if prev is not None:
            up = up and bool(np.all(sl.values >= prev))
            down = down and bool(np.all(sl.values <= prev))
        prev = sl.values
    tail = diffs[2:]
    diffs_ok = bool(np.all(np.diff(tail) <= 2 * tol)) if len(tail) > 1 else True
    return AsymptoticTable(K_list, [k * params.dt for k in K_list], [float(diffs[k]) for k in K_list],
                           diffs, up, down, diffs_ok, U.iterations, tol)


# -- boundary moduli ------------------------------------------------------------------

@dataclass(frozen=True)
class ScanSpec:
    n_pairs: int = 1000
    seed: int = 0
    radius_hint: float = 0.1


@dataclass
class ScanReport:
    max_ratio_lateral: float
    max_ratio_initial: float
    max_ratio_interior: float
    counts: dict

    @property
    def max_ratio(self) -> float:
        return max(self.max_ratio_lateral, self.max_ratio_initial, self.max_ratio_interior)

    def as_dict(self) -> dict:
        return {"max_ratio_lateral": self.max_ratio_lateral, "max_ratio_initial": self.max_ratio_initial,
                "max_ratio_interior": self.max_ratio_interior, "max_ratio": self.max_ratio,
                "counts": self.counts}


def _sample_inside(domain, rng, m):
    lo, hi = domain.bounding_box
    out = np.empty((0, domain.n))
    while len(out) < m:
        cand = rng.uniform(lo, hi, size=(2 * m, domain.n))
        out = np.concatenate([out, cand[dist_to_boundary(domain, cand) > 0]])
    return out[:m]


def _sample_boundary(domain, rng, m, radius_hint):
    """Boundary points with their outward unit normals and exterior-sphere radii."""
    pts = boundary_projection(domain, _sample_inside(domain, rng, m))
    normals = np.empty_like(pts)
    radii = np.empty(m)
    for i, b in enumerate(pts):
        z, rho = exterior_sphere(domain, b, radius_hint)
        normals[i] = (z - b) / rho
        radii[i] = rho
    return pts, normals, radii


def _eval_levels(u: GridFunction, pts, levels):
    out = np.empty(len(pts))
    for k in np.unique(levels):
        sel = levels == k
        out[sel] = u.level_slice(int(k))(pts[sel])
    return out


def boundary_modulus_scan(u: GridFunction, F: BoundaryData, domain: DomainGeometry, params: GameParams,
                          spec: ScanSpec = ScanSpec()) -> ScanReport:
    """Largest ratio of ``|u(x,t) - u(y,s)|`` to the shape of the boundary moduli.

    Lateral pairs (``y`` in the outer strip) are scaled by
    ``K + K^(1/2) + L(|x-y| + |t-s|^(1/2) + 2 rho)`` with
    ``K = min(|x-y|, t) + eps`` and ``rho`` the exterior-sphere radius;
    initial pairs (``s = 0``) by ``|x-y| + t^(1/2) + eps``.
    """
    if F.L is None:
        raise ValueError("boundary data needs a Lipschitz constant")
    rng = np.random.default_rng(spec.seed)
    eps, dt, K = params.eps, params.dt, u.K
    L = F.L
    third = spec.n_pairs // 3
    sizes = {"lateral": third, "initial": third, "interior": spec.n_pairs - 2 * third}

    def lateral(x, t_lev, y, s_lev, rho):
        t, s = t_lev * dt, s_lev * dt
        dxy = np.linalg.norm(x - y, axis=1)
        Kq = np.minimum(dxy, t) + eps
        shape = Kq + np.sqrt(Kq) + L * (dxy + np.sqrt(np.abs(t - s)) + 2 * rho)
        return np.abs(_eval_levels(u, x, t_lev) - _eval_levels(u, y, s_lev)) / shape

    # near-lateral: x within a few eps of the boundary point b, y in the outer strip at b
    m = sizes["lateral"]
    b, nrm, rho = _sample_boundary(domain, rng, m, spec.radius_hint)
    y = b + nrm * (rng.uniform(0.0, 0.999, m) * eps)[:, None]
    x = b - nrm * (rng.uniform(0.01, 4.0, m) * eps)[:, None]
    ok = dist_to_boundary(domain, x) > 0
    t_lev = rng.integers(1, K + 1, m)
    s_lev = np.clip(t_lev + rng.integers(-2, 3, m), 1, K)
    r_lat = lateral(x[ok], t_lev[ok], y[ok], s_lev[ok], rho[ok])

    # near-initial: s = 0, small t
    m = sizes["initial"]
    x = _sample_inside(domain, rng, m)
    y = x + rng.normal(scale=2 * eps, size=x.shape)
    ok = dist_to_boundary(domain, y) > 0
    t_lev = rng.integers(1, max(1, K // 4) + 1, m)
    t = t_lev[ok] * dt
    dxy = np.linalg.norm(x[ok] - y[ok], axis=1)
    diff = np.abs(_eval_levels(u, x[ok], t_lev[ok]) - _eval_levels(u, y[ok], np.zeros(ok.sum(), dtype=int)))
    r_ini = diff / (dxy + np.sqrt(t) + eps)

    # interior against boundary: x anywhere, y in the outer strip anywhere
    m = sizes["interior"]
    x = _sample_inside(domain, rng, m)
    b, nrm, rho = _sample_boundary(domain, rng, m, spec.radius_hint)
    y = b + nrm * (rng.uniform(0.0, 0.999, m) * eps)[:, None]
    t_lev = rng.integers(1, K + 1, m)
    s_lev = rng.integers(1, K + 1, m)
    r_int = lateral(x, t_lev, y, s_lev, rho)

    def top(r):
        return float(r.max()) if len(r) else 0.0

    return ScanReport(top(r_lat), top(r_ini), top(r_int),
                      {"lateral": int(len(r_lat)), "initial": int(len(r_ini)), "interior": int(len(r_int))})


# -- exit-time constant ------------------------------------------------------------------

@dataclass
class ExitFit:
    C: float
    ratios: np.ndarray
    max_rel_dev: float

    @property
    def C_bound(self) -> float:
        """Smallest constant making the bound hold for every sample."""
        return float(self.ratios.max())


def fit_exit_constant(eps, dist, mean_tau) -> ExitFit:
    """Fit one constant to ``ratio = eps^2 E[tau] / (dist + eps)``.

    ``C`` is the midrange of the ratios, the minimiser of the largest
    relative deviation ``max |ratio / C - 1|``, which is ``max_rel_dev``.
    """
    eps, dist, mean_tau = (np.asarray(a, dtype=float) for a in (eps, dist, mean_tau))
    ratios = eps**2 * mean_tau / (dist + eps)
    C = 0.5 * float(ratios.max() + ratios.min())
    return ExitFit(C, ratios, float(np.max(np.abs(ratios / C - 1.0))))
