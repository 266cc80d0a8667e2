from __future__ import annotations

import math

import numpy as np
import pytest

from towpde.analysis import radial_w
from towpde.dpp_core import BoundaryData, solve_parabolic_dpp
from towpde.game import (
    FunctionStrategy,
    PullStrategy,
    RandomStrategy,
    annulus_exit_time,
    estimate_value,
    greedy_pair,
    greedy_strategy,
    martingale_diagnostic,
    minimal_unflagged_constant,
    play_game,
    pull_strategy,
    simulate_batch,
)
from towpde.geometry import DomainGeometry, GameParams, SpaceTimePoint, dist_to_boundary
from towpde.quadrature import a_epsilon
from towpde.rng import RngSpec

UNIT = DomainGeometry.interval(0.0, 1.0)
DISK = DomainGeometry.ball([0.0, 0.0], 1.0)
P2 = GameParams.from_p(2, 0.2, 3.0, 0.2)


def sin_data():
    return BoundaryData(lambda X, t: np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + t)


class TestStrategies:
    def test_pull_examples(self):
        s = pull_strategy([0.0, 0.0])
        np.testing.assert_allclose(s.directions(np.array([[1.0, 0.0]]), np.zeros(1), 0), [[-1.0, 0.0]])
        s = pull_strategy([0.0, 1.0])
        np.testing.assert_allclose(s.directions(np.array([[0.0, 2.0]]), np.zeros(1), 0), [[0.0, -1.0]])
        np.testing.assert_allclose(s.directions(np.array([[0.0, 1.0]]), np.zeros(1), 0), [[1.0, 0.0]])

    def test_history_call(self):
        s = pull_strategy([0.0, 0.0])
        hist = [(0, SpaceTimePoint([0.0, 3.0], 0.5))]
        np.testing.assert_allclose(s(hist), [0.0, -1.0])

    def test_greedy_constant_first_direction(self):
        u = solve_parabolic_dpp(DISK, P2, BoundaryData.constant(2.0))
        sI, sII = greedy_pair(u)
        x = np.array([[0.1, 0.2]])
        t = np.array([u.K * P2.dt])
        np.testing.assert_array_equal(sI.directions(x, t, 0), [[1.0, 0.0]])
        np.testing.assert_array_equal(sII.directions(x, t, 0), [[1.0, 0.0]])

    def test_greedy_linear(self):
        a = np.array([0.6, -0.8])
        u = solve_parabolic_dpp(DISK, P2, BoundaryData(lambda X, t: X @ a))
        x = np.array([[0.0, 0.1]])
        t = np.array([u.K * P2.dt])
        vI = greedy_strategy(u, "I").directions(x, t, 0)[0]
        vII = greedy_strategy(u, "II").directions(x, t, 0)[0]
        assert math.acos(min(1.0, vI @ a)) <= 1e-4
        assert math.acos(min(1.0, -vII @ a)) <= 1e-4

    def test_greedy_rejects_level_zero(self):
        u = solve_parabolic_dpp(DISK, P2, BoundaryData.constant(0.0))
        with pytest.raises(ValueError):
            greedy_strategy(u, "I").directions(np.zeros((1, 2)), np.zeros(1), 0)
        with pytest.raises(ValueError):
            greedy_strategy(u, "III")

    def test_random_is_unit(self):
        for n in (1, 2, 3):
            v = RandomStrategy(3).directions(np.random.default_rng(0).normal(size=(50, n)), np.zeros(50), 2)
            np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)


class TestPlay:
    def test_constant_payoff(self):
        F = BoundaryData.constant(3.0)
        z0 = SpaceTimePoint([0.3, 0.1], 0.2)
        s = RandomStrategy(1)
        b = simulate_batch(z0, s, s, P2, DISK, F, RngSpec(0), 200)
        assert np.all(b.payoff == 3.0)
        assert estimate_value(z0, s, s, P2, DISK, F, 200, RngSpec(0)) == (3.0, 0.0)

    def test_first_step_terminates(self):
        p = GameParams.from_p(1, 0.1, 2.0, 0.5)
        z0 = SpaceTimePoint([0.5], p.dt)
        s = RandomStrategy(0)
        b = simulate_batch(z0, s, s, p, UNIT, BoundaryData.constant(1.0), RngSpec(9), 300)
        assert set(np.unique(b.tau)) <= {0, 1}

    def test_trajectory_invariants(self):
        F = sin_data()
        u = solve_parabolic_dpp(DISK, P2, F)
        sI, sII = greedy_pair(u)
        z0 = SpaceTimePoint([0.7, 0.2], u.K * P2.dt)
        b = simulate_batch(z0, sI, RandomStrategy(2), P2, DISK, F, RngSpec(5), 400)
        kmax = math.ceil(round(2 * z0.t / P2.eps**2, 9))
        assert np.all(b.tau <= kmax)
        fmin, fmax = -1.0, 1.0 + 1.2 ** 2 + 0.2
        assert np.all((b.payoff >= fmin) & (b.payoff <= fmax))
        for i in range(b.M):
            tr = b.trajectory(i)
            assert tr.states[0][0] == 0
            cs = [c for c, _ in tr.states]
            assert cs.index(1) == tr.tau + 1
            for j, (c, z) in enumerate(tr.states[: tr.tau + 1]):
                assert z.t == pytest.approx(z0.t - j * P2.dt)
                assert dist_to_boundary(DISK, z.x) >= -P2.eps - 1e-12
            assert tr.payoff == pytest.approx(F(tr.states[-1][1].x[None], tr.states[-1][1].t)[0])

    def test_reproducible_and_batch_independent(self):
        F = sin_data()
        z0 = SpaceTimePoint([0.1, 0.1], 0.2)
        sI, sII = RandomStrategy(1), pull_strategy([0.5, 0.0])
        a = simulate_batch(z0, sI, sII, P2, DISK, F, RngSpec(77), 50)
        b = simulate_batch(z0, sI, sII, P2, DISK, F, RngSpec(77), 50)
        for f in ("c", "x", "t", "tau", "payoff"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
        single = play_game(z0, sI, sII, P2, DISK, F, RngSpec(77), index=17)
        assert single.tau == a.tau[17] and single.payoff == a.payoff[17]

    def test_non_unit_strategy(self):
        bad = FunctionStrategy(lambda h: np.array([2.0, 0.0]))
        with pytest.raises(ValueError, match="non-unit"):
            simulate_batch(SpaceTimePoint([0.0, 0.0], 0.2), bad, bad, P2, DISK, sin_data(), RngSpec(0), 3)

    def test_start_validation(self):
        s = RandomStrategy(0)
        F = sin_data()
        with pytest.raises(ValueError):
            simulate_batch(SpaceTimePoint([0.0, 0.0], 0.03), s, s, P2, DISK, F, RngSpec(0), 3)
        with pytest.raises(ValueError):
            simulate_batch(SpaceTimePoint([2.0, 0.0], 0.2), s, s, P2, DISK, F, RngSpec(0), 3)
        with pytest.raises(ValueError, match="M >= 2"):
            estimate_value(SpaceTimePoint([0.0, 0.0], 0.2), s, s, P2, DISK, F, 1, RngSpec(0))

    def test_pull_drift_matches_operator(self):
        z = np.array([0.0, 0.0])
        x0 = np.array([1.0, 0.5])
        big = DomainGeometry.ball([0.0, 0.0], 10.0)
        p = GameParams.from_p(2, 0.2, 3.0, 1.0)
        s = pull_strategy(z)
        b = simulate_batch(SpaceTimePoint(x0, 0.2), s, s, p, big, BoundaryData.constant(0.0), RngSpec(4), 20000)
        r1 = np.linalg.norm(b.x[:, 1] - z, axis=1)
        nu = -(x0 - z) / np.linalg.norm(x0 - z)
        expect = a_epsilon(lambda P: np.linalg.norm(np.atleast_2d(P) - z, axis=1), x0, nu, p)
        assert abs(r1.mean() - expect) <= 4 * r1.std() / math.sqrt(len(r1))

    def test_label_swap_and_reflection(self):
        # odd data on a symmetric domain
        F = BoundaryData(lambda X, t: X[:, 0] + X[:, 0] * X[:, 1] ** 2)
        u = solve_parabolic_dpp(DISK, P2, F)
        sI, sII = greedy_pair(u)
        t0 = u.K * P2.dt
        M = 20000
        m, e = estimate_value(SpaceTimePoint([0.3, 0.2], t0), sI, sII, P2, DISK, F, M, RngSpec(1))
        # the coin is fair, so exchanging the strategies leaves the value unchanged
        ms, es = estimate_value(SpaceTimePoint([0.3, 0.2], t0), sII, sI, P2, DISK, F, M, RngSpec(2))
        assert abs(m - ms) <= 3 * math.hypot(e, es)
        # mirrored start point negates the value
        mr, er = estimate_value(SpaceTimePoint([-0.3, -0.2], t0), sII, sI, P2, DISK, F, M, RngSpec(3))
        assert abs(m + mr) <= 3 * math.hypot(e, er)


class TestDiagnostics:
    def test_constant_phi(self):
        s = RandomStrategy(0)
        b = simulate_batch(SpaceTimePoint([0.0, 0.0], 0.2), s, s, P2, DISK, sin_data(), RngSpec(0), 200)
        drifts = martingale_diagnostic(b, lambda c, x, t: np.ones(len(c)))
        assert all(d.mean == 0 and not d.flagged for d in drifts)

    def test_needs_hundred(self):
        s = RandomStrategy(0)
        b = simulate_batch(SpaceTimePoint([0.0, 0.0], 0.2), s, s, P2, DISK, sin_data(), RngSpec(0), 50)
        with pytest.raises(ValueError):
            martingale_diagnostic(b, lambda c, x, t: np.ones(len(c)))

    def test_distance_constant_sweep(self):
        y = np.array([0.2, 0.0])
        big = DomainGeometry.ball([0.0, 0.0], 10.0)
        p = GameParams.from_p(2, 0.2, 3.0, 0.4)
        t0 = 0.4
        b = simulate_batch(SpaceTimePoint([0.8, 0.3], t0), pull_strategy(y), RandomStrategy(5), p, big,
                           BoundaryData.constant(0.0), RngSpec(8), 4000)
        C = minimal_unflagged_constant(b, y, t0, np.arange(0.0, 3.01, 0.1))
        assert C is not None and 0.0 < C <= 3.0


class TestExitTime:
    p = GameParams.from_alpha(2, 0.1, 0.5, 1.0)

    def test_on_inner_sphere(self):
        m, e = annulus_exit_time([0.25, 0.0], [0.0, 0.0], 0.25, 1.0, self.p, 10, RngSpec(0))
        assert (m, e) == (0.0, 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            annulus_exit_time([1.5, 0.0], [0.0, 0.0], 0.25, 1.0, self.p, 10, RngSpec(0))
        with pytest.raises(ValueError):
            annulus_exit_time([0.5, 0.0], [0.0, 0.0], 0.25, 1.0, self.p, 1, RngSpec(0))

    def test_tracks_radial_w(self):
        ratios = []
        for r in (0.4, 0.6, 0.8):
            m, _ = annulus_exit_time([r, 0.0], [0.0, 0.0], 0.25, 1.0, self.p, 3000, RngSpec(2))
            ratios.append(self.p.eps**2 * m / radial_w(r, 2, 0.5, 0.25, 1.0, self.p.eps))
        ratios = np.array(ratios)
        assert np.all(np.abs(ratios / ratios.mean() - 1) <= 0.25)

    def test_outer_start_needs_steps(self):
        m, e, taus = annulus_exit_time([0.95, 0.0], [0.0, 0.0], 0.25, 1.0, self.p, 500, RngSpec(1),
                                       return_samples=True)
        assert np.all(taus >= 1) and m > 0
