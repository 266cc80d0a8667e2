"""Monte Carlo simulation of time-dependent tug-of-war with noise.

All trajectories started from the same point share the deterministic
clock ``t_j = t_0 - j eps^2 / 2``, so a batch is advanced in lockstep and
strategies are evaluated for all live trajectories at once.  Randomness
comes from :class:`towpde.rng.RngSpec`; per step the draws use fixed
slots: termination (0), coin winner (1), tug-vs-noise branch (2), noise
(3, 4).
"""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dpp_core import BoundaryData
from .geometry import BOUNDARY_TOL, DomainGeometry, GameParams, SpaceTimePoint, delta_from_distance, dist_to_boundary
from .grid import GridFunction
from .quadrature import BallRule, DirectionSet, midrange_batch, perp_frames
from .rng import RngSpec, hash_uniforms

logger = logging.getLogger(__name__)

SLOT_STOP, SLOT_WINNER, SLOT_BRANCH, SLOT_NOISE = 0, 1, 2, 3
UNIT_TOL = 1e-9


@dataclass
class GameTrajectory:
    states: list[tuple[int, SpaceTimePoint]]
    tau: int
    payoff: float


@dataclass
class TrajectoryBatch:
    """Lockstep record of ``M`` trajectories.

    ``c[i, j]``, ``x[i, j]``, ``t[i, j]`` hold the state ``(c_j, Z_j)``; rows
    are valid up to ``tau[i] + 1`` where ``c = 1`` marks termination and
    ``Z_{tau+1} = Z_tau``.
    """

    ids: np.ndarray
    c: np.ndarray
    x: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    payoff: np.ndarray

    @property
    def M(self) -> int:
        return len(self.ids)

    def trajectory(self, i: int) -> GameTrajectory:
        last = int(self.tau[i]) + 1
        states = [(int(self.c[i, j]), SpaceTimePoint(self.x[i, j], float(self.t[i, j])))
                  for j in range(last + 1)]
        return GameTrajectory(states, int(self.tau[i]), float(self.payoff[i]))

    def rows(self):
        """CSV rows ``(trajectory id, j, c_j, t_j, x_j...)``."""
        for i in range(self.M):
            for j in range(int(self.tau[i]) + 2):
                yield (int(self.ids[i]), j, int(self.c[i, j]), float(self.t[i, j]),
                       *[float(v) for v in self.x[i, j]])

    def columns(self) -> list[str]:
        return ["trajectory", "j", "c", "t", *[f"x{k + 1}" for k in range(self.x.shape[2])]]


class Strategy:
    """State-feedback strategy: maps the current token position to a unit vector.

    Subclasses implement :meth:`directions` (vectorized over trajectories);
    calling the strategy on a history ``[(c_0, Z_0), ..., (c_j, Z_j)]`` uses
    its last state.
    """

    def directions(self, x: np.ndarray, t: np.ndarray, step: int, histories=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, history) -> np.ndarray:
        c, z = history[-1]
        return self.directions(z.x[None, :], np.array([z.t]), len(history) - 1, [history])[0]


class FunctionStrategy(Strategy):
    """Wraps an arbitrary ``history -> unit vector`` callable."""

    def __init__(self, fn):
        self.fn = fn

    def directions(self, x, t, step, histories=None):
        if histories is None:
            raise ValueError("history-dependent strategy needs histories")
        return np.array([np.asarray(self.fn(h), dtype=float) for h in histories])

    def __call__(self, history):
        return np.asarray(self.fn(history), dtype=float)


class _GreedyOracle:
    def __init__(self, u: GridFunction, dirs: DirectionSet, rule: BallRule):
        self.u, self.dirs, self.rule = u, dirs, rule
        self._key = None
        self._res = None

    def query(self, x: np.ndarray, t: np.ndarray):
        dt = self.u.params.dt
        levels = np.rint(t / dt).astype(int) - 1
        if np.any(levels < 0):
            raise ValueError("token time below the first grid level")
        key = (x.tobytes(), levels.tobytes())
        if key != self._key:
            n = x.shape[1]
            nu_max = np.empty((len(x), n))
            nu_min = np.empty((len(x), n))
            for k in np.unique(levels):
                sel = levels == k
                res = midrange_batch(self.u.level_slice(int(k)), x[sel], self.u.params, self.dirs, self.rule)
                nu_max[sel] = res.nu_max
                nu_min[sel] = res.nu_min
            self._key, self._res = key, (nu_max, nu_min)
        return self._res


class GreedyStrategy(Strategy):
    """Best response to a DPP grid solution: maximize (I) or minimize (II) the one-step operator."""

    def __init__(self, u: GridFunction, player: str, dirs: DirectionSet | None = None,
                 rule: BallRule | None = None, oracle: _GreedyOracle | None = None):
        if player not in ("I", "II"):
            raise ValueError("player must be 'I' or 'II'")
        self.player = player
        self.oracle = oracle or _GreedyOracle(u, dirs or DirectionSet.default(u.params.n),
                                              rule or BallRule.default(u.params.n))

    def directions(self, x, t, step, histories=None):
        nu_max, nu_min = self.oracle.query(x, t)
        return nu_max if self.player == "I" else nu_min


def greedy_strategy(u: GridFunction, player: str, dirs: DirectionSet | None = None,
                    rule: BallRule | None = None) -> GreedyStrategy:
    return GreedyStrategy(u, player, dirs, rule)


def greedy_pair(u: GridFunction, dirs: DirectionSet | None = None,
                rule: BallRule | None = None) -> tuple[GreedyStrategy, GreedyStrategy]:
    """Greedy strategies for both players sharing one direction search per step."""
    oracle = _GreedyOracle(u, dirs or DirectionSet.default(u.params.n), rule or BallRule.default(u.params.n))
    return GreedyStrategy(u, "I", oracle=oracle), GreedyStrategy(u, "II", oracle=oracle)


class PullStrategy(Strategy):
    """Pull the token towards ``z`` (``sign=-1`` pushes it away).

    At ``x == z`` the first canonical basis vector is returned.
    """

    def __init__(self, z, sign: float = 1.0):
        self.z = np.atleast_1d(np.asarray(z, dtype=float))
        self.sign = float(sign)

    def directions(self, x, t, step, histories=None):
        d = self.z - x
        r = np.linalg.norm(d, axis=1, keepdims=True)
        e1 = np.zeros_like(x)
        e1[:, 0] = 1.0
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, self.sign * d / safe, e1)


def pull_strategy(z) -> PullStrategy:
    return PullStrategy(z)


class RandomStrategy(Strategy):
    """Uniformly random direction, derived by hashing the step and token position."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def directions(self, x, t, step, histories=None):
        n = x.shape[1]
        u1 = hash_uniforms(self.seed, step, x, 0)
        if n == 1:
            return np.where(u1 < 0.5, 1.0, -1.0)[:, None]
        if n == 2:
            a = 2 * np.pi * u1
            return np.stack([np.cos(a), np.sin(a)], axis=1)
        u2 = hash_uniforms(self.seed, step, x, 1)
        z = 2 * u1 - 1
        r = np.sqrt(np.maximum(1 - z**2, 0.0))
        a = 2 * np.pi * u2
        return np.stack([r * np.cos(a), r * np.sin(a), z], axis=1)


def _check_unit(v: np.ndarray, who: str):
    if np.any(np.abs(np.linalg.norm(v, axis=1) - 1.0) > UNIT_TOL):
        raise ValueError(f"strategy of player {who} returned a non-unit vector")


def _noise(x, v, radius, rng: RngSpec, ids, step):
    """Uniform point of the (n-1)-disk of the given radius through ``x`` orthogonal to ``v``."""
    n = x.shape[1]
    if n == 1:
        return x.copy()
    frames = perp_frames(v)
    u3 = rng.uniforms(ids, step, SLOT_NOISE)
    if n == 2:
        s = (2.0 * u3 - 1.0) * radius
        return x + s[:, None] * frames[:, :, 0]
    u4 = rng.uniforms(ids, step, SLOT_NOISE + 1)
    rad = radius * np.sqrt(u3)
    ang = 2.0 * np.pi * u4
    return x + (rad * np.cos(ang))[:, None] * frames[:, :, 0] + (rad * np.sin(ang))[:, None] * frames[:, :, 1]


def _start_level(z0: SpaceTimePoint, params: GameParams, domain: DomainGeometry) -> int:
    k0 = int(round(z0.t / params.dt))
    if abs(z0.t - k0 * params.dt) > 1e-9 * params.dt or k0 < 1:
        raise ValueError(f"start time {z0.t} must be a positive multiple of eps^2/2")
    if z0.t > params.T * (1 + 1e-12) + params.dt:
        raise ValueError("start time beyond the horizon")
    if not dist_to_boundary(domain, z0.x) > 0:
        raise ValueError("start point must lie inside the domain")
    return k0


def simulate_batch(z0: SpaceTimePoint, sI: Strategy, sII: Strategy, params: GameParams,
                   domain: DomainGeometry, F: BoundaryData, rng: RngSpec, M: int,
                   first_index: int = 0, record: bool = True) -> TrajectoryBatch:
    """Play ``M`` games from ``z0``; trajectory ``i`` uses stream index ``first_index + i``."""
    k0 = _start_level(z0, params, domain)
    n, eps, dt = params.n, params.eps, params.dt
    ids = np.arange(first_index, first_index + M, dtype=np.uint64)
    cols = k0 + 2 if record else 1
    X = np.zeros((M, cols, n))
    C = np.zeros((M, cols), dtype=np.int8)
    Tt = np.zeros((M, cols))
    tau = np.full(M, -1, dtype=np.int64)
    payoff = np.zeros(M)
    x = np.repeat(z0.x[None, :], M, axis=0)
    live = np.arange(M)
    if record:
        X[:, 0] = x
        Tt[:, 0] = z0.t
    for j in range(k0 + 1):
        t_j = (k0 - j) * dt
        xl = x[live]
        delta = delta_from_distance(dist_to_boundary(domain, xl), t_j, eps)
        xi = rng.uniforms(ids[live], j, SLOT_STOP)
        stop = xi > 1.0 - delta
        done = live[stop]
        if len(done):
            tau[done] = j
            payoff[done] = F(x[done], t_j)
            if record:
                X[done, j + 1] = x[done]
                Tt[done, j + 1] = t_j
                C[done, j + 1] = 1
        live = live[~stop]
        if not len(live):
            break
        xl = x[live]
        tl = np.full(len(live), t_j)
        hist = _histories(X, C, Tt, live, j) if record else None
        vI = np.asarray(sI.directions(xl, tl, j, hist), dtype=float).reshape(len(live), n)
        vII = np.asarray(sII.directions(xl, tl, j, hist), dtype=float).reshape(len(live), n)
        _check_unit(vI, "I")
        _check_unit(vII, "II")
        lid = ids[live]
        win_I = rng.uniforms(lid, j, SLOT_WINNER) <= 0.5
        v = np.where(win_I[:, None], vI, vII)
        tug = rng.uniforms(lid, j, SLOT_BRANCH) <= params.alpha
        moved = np.where(tug[:, None], xl + eps * v, _noise(xl, v, eps, rng, lid, j))
        x[live] = moved
        if record:
            X[live, j + 1] = moved
            Tt[live, j + 1] = t_j - dt
    if np.any(tau < 0):
        raise RuntimeError("a trajectory survived past time 0")
    return TrajectoryBatch(ids, C, X, Tt, tau, payoff)


def _histories(X, C, Tt, live, j):
    class _Lazy:
        def __len__(self):
            return len(live)

        def __iter__(self):
            for i in live:
                yield [(int(C[i, k]), SpaceTimePoint(X[i, k], float(Tt[i, k]))) for k in range(j + 1)]

    return _Lazy()


def play_game(z0: SpaceTimePoint, sI: Strategy, sII: Strategy, params: GameParams,
              domain: DomainGeometry, F: BoundaryData, rng: RngSpec, index: int = 0) -> GameTrajectory:
    """Play a single game using stream ``index`` of ``rng``."""
    return simulate_batch(z0, sI, sII, params, domain, F, rng, 1, first_index=index).trajectory(0)


def estimate_value(z0: SpaceTimePoint, sI: Strategy, sII: Strategy, params: GameParams,
                   domain: DomainGeometry, F: BoundaryData, M: int, rng: RngSpec,
                   batch: int = 20000, threads: int = 1) -> tuple[float, float]:
    """Sample mean and standard error of the payoff over ``M`` games."""
    if M < 2:
        raise ValueError("M >= 2 required")
    starts = list(range(0, M, batch))

    def run(s):
        m = min(batch, M - s)
        return simulate_batch(z0, sI, sII, params, domain, F, rng, m, first_index=s, record=False).payoff

    if threads > 1 and len(starts) > 1 and not isinstance(sI, GreedyStrategy) and not isinstance(sII, GreedyStrategy):
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        # greedy strategies share a memo, so their batches run sequentially
        parts = [run(s) for s in starts]
    payoffs = np.concatenate(parts)
    return float(np.mean(payoffs)), float(np.std(payoffs, ddof=1) / np.sqrt(M))


def annulus_exit_time(x0, z, delta_ext: float, R: float, params: GameParams, M: int, rng: RngSpec,
                      max_steps: int = 10**7, return_samples: bool = False):
    """Time for the radial pull game to reach the closed ball ``B_delta_ext(z)``.

    Player I steps ``eps`` towards ``z``; player II steps away by at most
    ``eps``, stopping on the sphere of radius ``R``; noise is uniform on
    the part of the orthogonal disk inside ``B_R(z)``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not 0 < delta_ext < R:
        raise ValueError("need 0 < delta_ext < R")
    r0 = float(np.linalg.norm(x0 - z))
    if r0 < delta_ext - BOUNDARY_TOL or r0 > R + BOUNDARY_TOL:
        raise ValueError("start point outside the annulus")
    if M < 2:
        raise ValueError("M >= 2 required")
    eps, alpha = params.eps, params.alpha
    ids = np.arange(M, dtype=np.uint64)
    x = np.repeat(x0[None, :], M, axis=0)
    tau = np.zeros(M, dtype=np.int64)
    live = np.arange(M) if r0 > delta_ext + BOUNDARY_TOL else np.arange(0)
    k = 0
    while len(live):
        if k >= max_steps:
            raise RuntimeError(f"exit-time game exceeded {max_steps} steps")
        xl = x[live]
        off = xl - z
        r = np.linalg.norm(off, axis=1)
        nu = off / r[:, None]
        lid = ids[live]
        win_I = rng.uniforms(lid, k, SLOT_WINNER) <= 0.5
        tug = rng.uniforms(lid, k, SLOT_BRANCH) <= alpha
        step_out = np.minimum(eps, np.maximum(R - r, 0.0))
        x_tug = np.where(win_I[:, None], xl - eps * nu, xl + step_out[:, None] * nu)
        radius = np.minimum(eps, np.sqrt(np.maximum(R**2 - r**2, 0.0)))
        x_noise = _noise(xl, -nu, radius, rng, lid, k)
        xl = np.where(tug[:, None], x_tug, x_noise)
        x[live] = xl
        k += 1
        hit = np.linalg.norm(xl - z, axis=1) <= delta_ext + BOUNDARY_TOL
        tau[live[hit]] = k
        live = live[~hit]
    taus = tau.astype(float)
    mean, err = float(taus.mean()), float(taus.std(ddof=1) / np.sqrt(M))
    return (mean, err, tau) if return_samples else (mean, err)


@dataclass(frozen=True)
class StepDrift:
    step: int
    count: int
    mean: float
    lo: float
    hi: float

    @property
    def flagged(self) -> bool:
        return self.lo > 0


def martingale_diagnostic(batch: TrajectoryBatch, phi, level: float = 0.99) -> list[StepDrift]:
    """Per-step drift ``E[phi_{k+1} - phi_k]`` over trajectories still running at step ``k``.

    ``phi(c, x, t)`` is vectorized: (m,), (m, n), (m,) arrays.  A step is
    flagged when its confidence interval lies strictly above zero.
    """
    if batch.M < 100:
        raise ValueError("at least 100 trajectories required")
    if batch.c.shape[1] < 2:
        raise ValueError("trajectories were not recorded")
    z = statistics.NormalDist().inv_cdf(0.5 + level / 2)
    out = []
    for k in range(batch.c.shape[1] - 1):
        rows = np.nonzero(batch.tau >= k)[0]
        if len(rows) < 2:
            break
        now = phi(batch.c[rows, k], batch.x[rows, k], batch.t[rows, k])
        nxt = phi(batch.c[rows, k + 1], batch.x[rows, k + 1], batch.t[rows, k + 1])
        d = np.asarray(nxt, dtype=float) - np.asarray(now, dtype=float)
        mean = float(d.mean())
        half = z * float(d.std(ddof=1)) / np.sqrt(len(d))
        out.append(StepDrift(k, len(d), mean, mean - half, mean + half))
    return out


def value_process(u: GridFunction, F: BoundaryData):
    """The process ``u(Z)`` while running and ``F(Z)`` once stopped, as a ``phi`` for diagnostics."""

    def phi(c, x, t):
        c = np.asarray(c)
        out = np.empty(len(c))
        stopped = c == 1
        if np.any(stopped):
            out[stopped] = F(x[stopped], t[stopped])
        running = ~stopped
        for k in np.unique(np.rint(t[running] / u.params.dt).astype(int)):
            sel = running & (np.rint(t / u.params.dt).astype(int) == k)
            out[sel] = u.level_slice(int(k))(x[sel])
        return out

    return phi


def distance_process(y, C: float, t0: float):
    """``|x_k - y|^2 - C k eps^2`` as a ``phi`` for diagnostics (``k eps^2 = 2 (t0 - t_k)``)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def phi(c, x, t):
        return np.sum((x - y) ** 2, axis=1) - 2.0 * C * (t0 - np.asarray(t, dtype=float))

    return phi


def minimal_unflagged_constant(batch: TrajectoryBatch, y, t0: float, grid, level: float = 0.99):
    """Smallest ``C`` in ``grid`` for which the distance process has no flagged step."""
    for C in sorted(grid):
        if not any(d.flagged for d in martingale_diagnostic(batch, distance_process(y, C, t0), level)):
            return float(C)
    return None
