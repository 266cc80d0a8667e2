from __future__ import annotations

import math

import numpy as np
import pytest

from towpde.analysis import heat_reference, sup_error
from towpde.dpp_core import (
    BoundaryData,
    ConvergenceError,
    apply_T,
    compare_solutions,
    default_lattice,
    dpp_residual,
    solve_elliptic_dpp,
    solve_parabolic_dpp,
)
from towpde.geometry import DomainGeometry, GameParams, delta_from_distance, dist_to_boundary
from towpde.grid import GridSlice

UNIT = DomainGeometry.interval(0.0, 1.0)
DISK = DomainGeometry.ball([0.0, 0.0], 1.0)


def smooth_data(seed, n):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(3, n)) * 2
    ph = rng.uniform(0, 6, 3)
    a = rng.normal(size=3)
    b = rng.normal()
    return BoundaryData(lambda X, t: (a * np.sin(X @ k.T + ph)).sum(1) + b * t)


class TestApplyT:
    p1 = GameParams.from_p(1, 0.1, 2.0, 0.5)

    def test_constant_fixed(self):
        lat = default_lattice(UNIT, self.p1)
        new = apply_T(GridSlice(lat, np.ones(lat.shape)), 0.1, BoundaryData.constant(1.0), self.p1, UNIT)
        assert np.all(new.values == 1.0)

    def test_linear_preserved_in_core(self):
        lat = default_lattice(DISK, GameParams.from_p(2, 0.2, 3.0, 0.5))
        p = GameParams.from_p(2, 0.2, 3.0, 0.5)
        nodes = lat.nodes()
        prev = GridSlice(lat, nodes @ np.array([0.4, -0.9]))
        new = apply_T(prev, 0.1, BoundaryData.constant(5.0), p, DISK)
        core = dist_to_boundary(DISK, nodes) >= p.eps
        np.testing.assert_allclose(new.values.reshape(-1)[core], prev.values.reshape(-1)[core], atol=1e-12)

    def test_outside_takes_data(self):
        lat = default_lattice(UNIT, self.p1)
        nodes = lat.nodes()
        F = BoundaryData(lambda X, t: X[:, 0] + t)
        new = apply_T(GridSlice(lat, np.random.default_rng(0).normal(size=lat.shape)), 0.2, F, self.p1, UNIT)
        out = dist_to_boundary(UNIT, nodes) <= 0
        np.testing.assert_array_equal(new.values.reshape(-1)[out], nodes[out, 0] + 0.2)

    def test_rejects_early_time(self):
        lat = default_lattice(UNIT, self.p1)
        with pytest.raises(ValueError):
            apply_T(GridSlice(lat, np.zeros(lat.shape)), 0.001, BoundaryData.constant(0), self.p1, UNIT)

    @pytest.mark.parametrize("seed", range(4))
    def test_monotone(self, seed):
        p = GameParams.from_p(2, 0.2, 3.0, 0.5)
        lat = default_lattice(DISK, p)
        rng = np.random.default_rng(seed)
        u = rng.normal(size=lat.shape)
        v = u + rng.uniform(0, 0.2, lat.shape)
        F = smooth_data(seed, 2)
        a = apply_T(GridSlice(lat, u), 0.1, F, p, DISK)
        b = apply_T(GridSlice(lat, v), 0.1, F, p, DISK)
        assert np.all(a.values <= b.values)

    def test_threads_do_not_change_values(self):
        p = GameParams.from_p(2, 0.2, 3.0, 0.5)
        lat = default_lattice(DISK, p)
        prev = GridSlice(lat, np.random.default_rng(1).normal(size=lat.shape))
        F = smooth_data(1, 2)
        a = apply_T(prev, 0.1, F, p, DISK, threads=1)
        b = apply_T(prev, 0.1, F, p, DISK, threads=3)
        np.testing.assert_array_equal(a.values, b.values)


class TestParabolic:
    def test_constant_data(self):
        p = GameParams.from_p(2, 0.2, 3.0, 0.1)
        u = solve_parabolic_dpp(DISK, p, BoundaryData.constant(1.0))
        assert np.all(u.values == 1.0)
        assert u.K == math.ceil(2 * 0.1 / 0.04)

    def test_level_zero_is_initial_data(self):
        p = GameParams.from_p(1, 0.1, 2.0, 0.1)
        F = smooth_data(0, 1)
        u = solve_parabolic_dpp(UNIT, p, F)
        np.testing.assert_array_equal(u.values[0].reshape(-1), F(u.lattice.nodes(), 0.0))

    @pytest.mark.parametrize("domain,n", [(UNIT, 1), (DISK, 2)])
    def test_maximum_principle(self, domain, n):
        p = GameParams.from_p(n, 0.2, 3.0, 0.2)
        F = smooth_data(7, n)
        u = solve_parabolic_dpp(domain, p, F)
        nodes = u.lattice.nodes()
        fvals = np.concatenate([F(nodes, k * p.dt) for k in range(u.K + 1)])
        assert u.values.min() >= fvals.min() and u.values.max() <= fvals.max()

    def test_shift_by_constant(self):
        p = GameParams.from_p(2, 0.25, 3.0, 0.1)
        F = smooth_data(2, 2)
        u = solve_parabolic_dpp(DISK, p, F)
        v = solve_parabolic_dpp(DISK, p, F.shifted(1.0))
        cmp = compare_solutions(u, v)
        assert cmp.relation == "leq"
        assert cmp.worst_gap == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(v.values - u.values, 1.0, atol=1e-12)

    def test_compare_equal_and_crossing(self):
        p = GameParams.from_p(1, 0.1, 2.0, 0.1)
        u = solve_parabolic_dpp(UNIT, p, BoundaryData(lambda X, t: X[:, 0]))
        v = solve_parabolic_dpp(UNIT, p, BoundaryData(lambda X, t: 1.0 - X[:, 0]))
        assert compare_solutions(u, u).relation == "equal"
        cmp = compare_solutions(u, v)
        assert cmp.relation == "incomparable"
        assert cmp.max_excess > 0 and cmp.max_deficit > 0

    def test_compare_lattice_mismatch(self):
        p = GameParams.from_p(1, 0.1, 2.0, 0.1)
        F = BoundaryData.constant(0.0)
        with pytest.raises(ValueError):
            compare_solutions(solve_parabolic_dpp(UNIT, p, F), solve_parabolic_dpp(UNIT, p, F, h=0.05))

    def test_heat_error_shrinks(self):
        ref = heat_reference()
        errs = []
        for eps in (0.2, 0.1):
            p = GameParams.from_p(1, eps, 2.0, 0.25)
            errs.append(sup_error(solve_parabolic_dpp(UNIT, p, ref.boundary_data()), ref))
        assert errs[1] < errs[0] < 1e-3


class TestResidual:
    def test_zero_for_solver_output(self):
        p = GameParams.from_p(2, 0.25, 3.0, 0.15)
        F = smooth_data(3, 2)
        u = solve_parabolic_dpp(DISK, p, F)
        assert dpp_residual(u, p, DISK, F) == 0.0

    def test_zero_data(self):
        p = GameParams.from_p(1, 0.1, 2.0, 0.1)
        u = solve_parabolic_dpp(UNIT, p, BoundaryData.constant(0.0))
        assert dpp_residual(u, p, UNIT, BoundaryData.constant(0.0)) == 0.0

    def test_detects_perturbation(self):
        p = GameParams.from_p(1, 0.1, 2.0, 0.2)
        F = smooth_data(4, 1)
        u = solve_parabolic_dpp(UNIT, p, F)
        k = 3
        i = int(np.argmin(np.abs(u.lattice.nodes()[:, 0] - 0.5)))
        u.values[k, i] += 1e-3
        assert dpp_residual(u, p, UNIT, F) >= 1e-3 * 0.5


class TestElliptic:
    def test_constant(self):
        p = GameParams.from_p(2, 0.25, 3.0, 1.0)
        U = solve_elliptic_dpp(DISK, p, lambda X: np.full(len(X), 2.0))
        assert U.iterations == 0
        assert np.all(U.values == 2.0)

    def test_symmetric_interval(self):
        dom = DomainGeometry.interval(-1.0, 1.0)
        p = GameParams.from_p(1, 0.2, 2.0, 1.0)
        U = solve_elliptic_dpp(dom, p, lambda X: (X[:, 0] > 0).astype(float), tol=1e-10)
        assert U(np.array([[0.0]]))[0] == pytest.approx(0.5, abs=1e-9)

    def test_stopping_contract(self):
        from towpde.dpp_core import _nodes_and_dist, apply_T_elliptic
        from towpde.quadrature import BallRule, DirectionSet

        dom = DomainGeometry.interval(0.0, 1.0)
        p = GameParams.from_p(1, 0.1, 2.0, 1.0)
        tol = 1e-9
        psi = lambda X: np.sin(3 * X[:, 0])  # noqa: E731
        U = solve_elliptic_dpp(dom, p, psi, tol=tol)
        nodes, dist = _nodes_and_dist(U.lattice, dom)
        dbar = delta_from_distance(dist, np.inf, p.eps)
        again = apply_T_elliptic(U, psi(nodes), dbar, nodes, p, DirectionSet.default(1), BallRule.default(1))
        assert np.max(np.abs(again.values - U.values)) <= tol
        assert U.gap <= 2 * tol

    def test_max_iter(self):
        p = GameParams.from_p(1, 0.05, 2.0, 1.0)
        with pytest.raises(ConvergenceError) as err:
            solve_elliptic_dpp(UNIT, p, lambda X: X[:, 0], max_iter=3)
        assert err.value.residual > 0
