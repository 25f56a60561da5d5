import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import central_diff, dense_propagate, from_dense, rel_err
from lerg.graph import SparseAdjacency
from lerg.propagation import count_macs, propagate, propagate_backward


def random_operator(r, n, density=0.3, symmetric=False):
    a = (r.random((n, n)) < density) * r.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(a, 0.0)
    if symmetric:
        a = np.triu(a) + np.triu(a).T
    return a


def test_zero_layers_and_identity(rng):
    h0 = rng.normal(size=(5, 3))
    a = from_dense(random_operator(rng, 5))
    assert np.array_equal(propagate(a, h0, 0), h0)
    eye = from_dense(np.eye(5))
    assert np.allclose(propagate(eye, h0, 3), h0, atol=1e-15)


def test_two_node_example():
    a = from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = propagate(a, np.array([[1.0, 0.0], [0.0, 0.0]]), 1)
    assert np.allclose(out, [[0.5, 0.0], [0.5, 0.0]])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        propagate(SparseAdjacency.zeros(3), np.zeros((4, 2)), 1)
    with pytest.raises(ValueError):
        propagate_backward(SparseAdjacency.zeros(3), np.zeros((2, 2)), 1)


@given(st.integers(1, 20), st.integers(1, 5), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_matches_dense(n, d, layers, seed):
    r = np.random.default_rng(seed)
    a = random_operator(r, n)
    h0 = r.normal(size=(n, d))
    assert np.allclose(propagate(from_dense(a), h0, layers), dense_propagate(a, h0, layers), atol=1e-10, rtol=0)


@given(st.integers(1, 15), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_linearity(n, layers, seed):
    r = np.random.default_rng(seed)
    a = from_dense(random_operator(r, n))
    h, g = r.normal(size=(2, n, 3))
    x, y = r.normal(size=2)
    lhs = propagate(a, x * h + y * g, layers)
    rhs = x * propagate(a, h, layers) + y * propagate(a, g, layers)
    assert np.allclose(lhs, rhs, atol=1e-10)


@given(st.integers(1, 15), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_adjoint_identity(n, layers, seed):
    r = np.random.default_rng(seed)
    a = from_dense(random_operator(r, n))
    x, y = r.normal(size=(2, n, 3))
    lhs = float((propagate(a, x, layers) * y).sum())
    rhs = float((x * propagate_backward(a, y, layers)).sum())
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_backward_passthrough_and_symmetric(rng):
    g = rng.normal(size=(6, 2))
    a = from_dense(random_operator(rng, 6, symmetric=True))
    assert np.array_equal(propagate_backward(a, g, 0), g)
    assert np.allclose(propagate_backward(a, g, 3), propagate(a, g, 3), atol=1e-14)


def test_backward_matches_fd(rng):
    a = from_dense(random_operator(rng, 9, 0.4))
    w = rng.normal(size=(9, 3))
    h0 = rng.normal(size=(9, 3))
    grad = propagate_backward(a, w, 2)
    fd = central_diff(lambda x: float((propagate(a, x, 2) * w).sum()), h0)
    assert rel_err(grad, fd) < 1e-6


def test_count_macs():
    a = from_dense(np.array([[0, 1.0], [1.0, 0]]))
    assert count_macs(4, 2, 1) == 8
    assert count_macs(a, 2, 3) == 12
    assert count_macs(2 * 26_069_309, 128, 1) == 6_673_743_104
    assert count_macs(10, 8, 2) < count_macs(11, 8, 2)
