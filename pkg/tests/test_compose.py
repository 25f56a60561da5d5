import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import connected_bipartite, random_dataset
from lerg.compose import (
    AssignmentMatrix,
    Codebook,
    balance_cap,
    compose_backward,
    edge_cut,
    infer_full_table,
    init_assignment,
    init_codebook,
    partition_entities,
)
from lerg.graph import InteractionDataset, build_adjacency


def two_cliques():
    # users {0,1} x items {0,1} and users {2,3} x items {2,3}
    pairs = [[u, i] for u in (0, 1) for i in (0, 1)] + [[u, i] for u in (2, 3) for i in (2, 3)]
    return build_adjacency(InteractionDataset(4, 4, pairs))


def test_partition_two_cliques_zero_cut():
    a = two_cliques()
    labels = partition_entities(a, 2, seed=0)
    # brute force: the smallest cut over all balanced 2-way labelings is 0
    best = min(
        edge_cut(a, np.array(lab))
        for lab in itertools.product((0, 1), repeat=8)
        if sum(lab) == 4
    )
    assert best == 0
    assert edge_cut(a, labels) == 0
    assert len({labels[v] for v in (0, 1, 4, 5)}) == 1
    assert len({labels[v] for v in (2, 3, 6, 7)}) == 1


def test_partition_c_equals_n():
    a = two_cliques()
    assert sorted(partition_entities(a, 8).tolist()) == list(range(8))


def test_partition_path_split_middle():
    # entity path 0 - 2 - 1 - 3
    a = build_adjacency(InteractionDataset(2, 2, [[0, 0], [1, 0], [1, 1]]))
    cuts = {}
    for lab in itertools.product((0, 1), repeat=4):
        if sum(lab) == 2:
            cuts[lab] = edge_cut(a, np.array(lab))
    assert min(cuts.values()) == 1
    labels = partition_entities(a, 2, seed=5, eps=0.0)
    assert np.bincount(labels).tolist() == [2, 2]
    assert edge_cut(a, labels) == 1
    assert labels[0] == labels[2] and labels[1] == labels[3]


def test_partition_rejects_too_many_parts():
    with pytest.raises(ValueError):
        partition_entities(two_cliques(), 9)


def test_partition_external_labels():
    a = two_cliques()
    ext = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    assert np.array_equal(partition_entities(a, 2, labels=ext), ext)
    with pytest.raises(ValueError):
        partition_entities(a, 2, labels=np.array([0, 2, 0, 0, 0, 0, 0, 0]))


@given(st.integers(2, 12), st.integers(2, 12), st.integers(2, 6), st.integers(0, 10_000))
def test_partition_balanced_and_deterministic(nu, ni, c, seed):
    ds = random_dataset(np.random.default_rng(seed), nu, ni, 0.3)
    a = build_adjacency(ds)
    c = min(c, a.n_rows)
    l1 = partition_entities(a, c, seed)
    l2 = partition_entities(a, c, seed)
    assert np.array_equal(l1, l2)
    assert l1.min() >= 0 and l1.max() < c
    assert np.bincount(l1, minlength=c).max() <= balance_cap(a.n_rows, c, 0.1)


def test_partition_beats_random_cut(rng):
    ds = connected_bipartite(rng, 60, 90)
    a = build_adjacency(ds)
    labels = partition_entities(a, 6, seed=1)
    shuffled = rng.permutation(labels)
    assert edge_cut(a, labels) < edge_cut(a, shuffled)


def test_init_assignment_weights_and_sparsity():
    labels = np.array([0, 1, 2, 1, 0])
    s = init_assignment(labels, 3, 0.9, seed=0)
    dense = s.todense()
    assert np.count_nonzero(dense) == 2 * len(labels)
    for row, lab in zip(dense, labels):
        assert row[lab] == 0.9
        aux = row[(row > 0) & (np.arange(3) != lab)]
        assert aux.tolist() == [1.0 - 0.9]
    assert np.array_equal(s.anchor, labels)


def test_init_assignment_two_slots_forced():
    s = init_assignment(np.array([0, 0, 1]), 2, 0.9, seed=11)
    assert s.aux.tolist() == [1, 1, 0]


@given(st.integers(2, 9), st.integers(1, 40), st.integers(0, 10_000))
def test_init_assignment_properties(c, n, seed):
    r = np.random.default_rng(seed)
    labels = r.integers(0, c, n)
    s = init_assignment(labels, c, 0.9, seed)
    assert np.all(s.anchor != s.aux)
    assert np.all(s.aux < c)
    assert np.allclose(s.todense().sum(1), 1.0)
    # same partition -> same anchor
    for p in range(c):
        assert len(set(s.anchor[labels == p].tolist())) <= 1
    assert np.array_equal(s.aux, init_assignment(labels, c, 0.9, seed).aux)


def test_row_sum_is_exactly_one():
    s = init_assignment(np.arange(4) % 2, 2, 0.9, 0)
    w = s.anchor_weight
    assert w + (1.0 - w) == 1.0


def test_infer_full_table_hand_example():
    e = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = AssignmentMatrix([0], [1], 2, 0.9)
    assert np.allclose(infer_full_table(s, e), [[0.9, 0.1]])


def test_infer_full_table_anchor_only():
    e = np.arange(6.0).reshape(3, 2)
    s = AssignmentMatrix([2, 0], [0, 1], 3, 1.0)
    assert np.array_equal(infer_full_table(s, e), e[[2, 0]])


def test_infer_full_table_collision():
    e = np.random.default_rng(0).normal(size=(4, 3))
    s = AssignmentMatrix([1, 1], [3, 3], 4, 0.9)
    out = infer_full_table(s, e)
    assert np.array_equal(out[0], out[1])


def test_infer_full_table_dim_mismatch():
    with pytest.raises(ValueError):
        infer_full_table(AssignmentMatrix([0], [1], 2), np.zeros((3, 2)))


@given(st.integers(1, 50), st.integers(2, 8), st.integers(1, 6), st.integers(0, 10_000))
def test_infer_matches_dense_product(n, c, d, seed):
    r = np.random.default_rng(seed)
    s = init_assignment(r.integers(0, c, n), c, float(r.uniform(0.05, 0.95)), seed)
    e = r.normal(size=(c, d))
    assert np.allclose(infer_full_table(s, e), s.todense() @ e, atol=1e-12, rtol=0)
    g = r.normal(size=(n, d))
    assert np.allclose(compose_backward(s, g), s.todense().T @ g, atol=1e-12, rtol=0)


def test_codebook_init_bounds():
    cb = init_codebook(10, 6, seed=2)
    a = np.sqrt(6 / 16)
    assert cb.weights.shape == (10, 6)
    assert np.all(np.abs(cb.weights) <= a)
    with pytest.raises(ValueError):
        Codebook(np.zeros((1, 3)))


def test_assignment_roundtrip():
    s = init_assignment(np.array([0, 3, 2, 1, 3]), 4, 0.9, 1)
    data = s.to_bytes("00" * 16)
    assert data[:8] == b"LERGASGN"
    back, h = AssignmentMatrix.from_bytes(data)
    assert h is None
    assert np.array_equal(back.anchor, s.anchor) and np.array_equal(back.aux, s.aux)
    assert back.anchor_weight == 0.9 and back.c == 4
    # header: magic, u32 version, u64 N, u64 c, f64 w, 16-byte hash, then 2N u32
    assert len(data) == 8 + 4 + 8 + 8 + 8 + 16 + 8 * 5
