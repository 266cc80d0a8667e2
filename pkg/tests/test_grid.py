from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from towpde.geometry import DomainGeometry, GameParams
from towpde.grid import GridFunction, GridSlice, Lattice, OutOfDomainError


def test_covering_contains_padded_domain():
    dom = DomainGeometry.box([0.0, -1.0], [1.0, 1.0])
    lat = Lattice.covering(dom, 0.1, 0.0125)
    np.testing.assert_allclose(lat.origin, [-0.1, -1.1])
    assert np.all(lat.upper >= np.array([1.1, 1.1]) - 1e-12)
    assert lat.shape == (97, 177)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_interpolation_exact_for_affine(n):
    dom = DomainGeometry.box(np.zeros(n), np.ones(n)) if n > 1 else DomainGeometry.interval(0, 1)
    lat = Lattice.covering(dom, 0.1, 0.05 if n < 3 else 0.1)
    a = np.arange(1, n + 1) * 0.7
    sl = GridSlice(lat, lat.nodes() @ a - 0.3)
    pts = np.random.default_rng(n).uniform(-0.1, 1.1, (500, n))
    np.testing.assert_allclose(sl(pts), pts @ a - 0.3, atol=1e-12)


@given(st.floats(-0.1, 1.1), st.floats(-0.1, 1.1))
def test_interpolation_matches_nodes_and_bounds(x, y):
    lat = Lattice.covering(DomainGeometry.box([0, 0], [1, 1]), 0.1, 0.1)
    vals = np.random.default_rng(0).normal(size=lat.shape)
    sl = GridSlice(lat, vals)
    v = sl(np.array([[x, y]]))[0]
    assert vals.min() - 1e-12 <= v <= vals.max() + 1e-12


def test_out_of_domain():
    lat = Lattice.covering(DomainGeometry.interval(0, 1), 0.1, 0.1)
    with pytest.raises(OutOfDomainError) as err:
        lat.interpolate(np.zeros(lat.shape), np.array([[1.5]]))
    np.testing.assert_allclose(err.value.point, [1.5])


def test_grid_function_levels():
    dom = DomainGeometry.interval(0, 1)
    p = GameParams.from_p(1, 0.1, 2.0, 0.02)
    lat = Lattice.covering(dom, p.eps, 0.05)
    vals = np.stack([np.full(lat.shape, k, dtype=float) for k in range(5)])
    u = GridFunction(dom, p, lat, vals)
    assert u.K == 4
    assert u.level_of(0.015) == 3
    assert u.evaluate(0.5, 0.015) == 3.0
    np.testing.assert_allclose(u.evaluate(np.array([0.2, 0.3]), 0.01), [2.0, 2.0])
    with pytest.raises(ValueError):
        u.level_of(0.012)
    rows = list(u.rows())
    assert len(rows) == 5 * lat.size
    assert u.columns() == ["level", "t", "x1", "value"]
