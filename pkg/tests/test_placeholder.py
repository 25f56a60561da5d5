import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerg.placeholder import PlaceholderCodebook, cluster_pruned, impute_pruned, lloyd_objective


def test_single_centroid_is_mean(rng):
    x = rng.normal(size=(30, 4))
    p = cluster_pruned(x, 1, seed=0)
    assert np.allclose(p.centroids[0], x.mean(0))
    assert np.all(impute_pruned(p) == p.centroids[0])


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_two_clouds():
    x = np.array([[0, 0], [0.1, 0], [0, 0.1], [10, 10], [10.1, 10], [10, 10.1]], dtype=float)
    p = cluster_pruned(x, 2, seed=3)
    # brute force over every 2-partition
    best = min(
        sum(((x[g] - x[g].mean(0)) ** 2).sum() for g in (np.array(lab) == 0, np.array(lab) == 1))
        for lab in itertools.product((0, 1), repeat=6)
        if 0 < sum(lab) < 6
    )
    assert np.isclose(p.history[-1], best)
    got = sorted(map(tuple, np.round(p.centroids, 10)))
    assert np.allclose(got, [x[:3].mean(0), x[3:].mean(0)])


def test_every_point_its_own_centroid(rng):
    x = rng.normal(size=(7, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = cluster_pruned(x, 7, seed=1)
    assert np.isclose(lloyd_objective(x, p.centroids, p.assignment), 0.0)


def test_argument_errors(rng):
    with pytest.raises(ValueError):
        cluster_pruned(rng.normal(size=(3, 2)), 4)
    with pytest.raises(ValueError):
        cluster_pruned(rng.normal(size=(3, 2)), 0)
    with pytest.warns(UserWarning):
        cluster_pruned(rng.normal(size=(20, 2)), 5)


@given(st.integers(1, 60), st.integers(1, 8), st.integers(0, 10_000))
def test_objective_nonincreasing_and_deterministic(n, r, seed):
    r = min(r, n)
    x = np.random.default_rng(seed).normal(size=(n, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = cluster_pruned(x, r, seed)
        q = cluster_pruned(x, r, seed)
    h = np.array(p.history)
    assert np.all(np.diff(h) <= 1e-9 * max(h[0], 1.0))
    assert np.array_equal(p.centroids, q.centroids) and np.array_equal(p.assignment, q.assignment)
    rows = impute_pruned(p)
    cset = {tuple(c) for c in p.centroids}
    assert all(tuple(row) in cset for row in rows)
    # distortion bounded by the diameter of the point set
    diam = max(np.linalg.norm(a - b) for a in x for b in x) if n > 1 else 0.0
    assert np.all(np.linalg.norm(rows - x, axis=1) <= diam + 1e-9)


def test_impute_gather():
    a, b = [1.0, 2.0], [3.0, 4.0]
    p = PlaceholderCodebook(np.array([a, b]), [0, 1, 0])
    assert impute_pruned(p).tolist() == [a, b, a]
    with pytest.raises(ValueError):
        PlaceholderCodebook(np.array([a]), [1])


def test_roundtrip(rng):
    p = cluster_pruned(rng.normal(size=(40, 5)), 3, seed=2)
    data = p.to_bytes()
    assert data[:8] == b"LERGPLHD"
    assert len(data) == 8 + 4 + 16 + 16 + 4 * 15 + 8 + 4 * 40
    back, h = PlaceholderCodebook.from_bytes(data)
    assert h is None
    assert np.array_equal(back.assignment, p.assignment)
    assert np.array_equal(back.centroids, p.centroids.astype(np.float32))
