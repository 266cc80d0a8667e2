from __future__ import annotations

import numpy as np
import pytest

from towpde.rng import RngSpec, hash_uniforms


def test_deterministic_and_batch_independent():
    r = RngSpec(42)
    all_ids = r.uniforms(np.arange(100, dtype=np.uint64), 3, 1)
    some = r.uniforms(np.array([17, 5], dtype=np.uint64), 3, 1)
    np.testing.assert_array_equal(some, all_ids[[17, 5]])
    np.testing.assert_array_equal(all_ids, RngSpec(42).uniforms(np.arange(100, dtype=np.uint64), 3, 1))


def test_streams_differ():
    r = RngSpec(1)
    ids = np.arange(1000, dtype=np.uint64)
    a, b, c = r.uniforms(ids, 0, 0), r.uniforms(ids, 0, 1), r.uniforms(ids, 1, 0)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert not np.array_equal(a, RngSpec(2).uniforms(ids, 0, 0))


def test_uniform_statistics():
    u = RngSpec(7).uniforms(np.arange(200000, dtype=np.uint64), 5, 2)
    assert np.all((u > 0) & (u <= 1))
    assert abs(u.mean() - 0.5) < 0.005
    hist, _ = np.histogram(u, bins=10, range=(0, 1))
    assert np.all(np.abs(hist / len(u) - 0.1) < 0.005)
    v = RngSpec(7).uniforms(np.arange(200000, dtype=np.uint64), 5, 3)
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.01


def test_seed_range():
    with pytest.raises(ValueError):
        RngSpec(-1)
    with pytest.raises(ValueError):
        RngSpec(1).uniforms(np.arange(2, dtype=np.uint64), 0, 64)


def test_hash_uniforms_depend_on_points():
    pts = np.array([[0.1, 0.2], [0.1, 0.2], [0.1, 0.3]])
    u = hash_uniforms(0, 1, pts)
    assert u[0] == u[1] != u[2]
