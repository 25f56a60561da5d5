import numpy as np
import pytest

from lerg.compose import init_assignment, init_codebook, partition_entities
from lerg.finetune import (
    ArtifactMismatch,
    _model,
    assemble_inference_table,
    build_placeholders,
    check_artifacts,
    finetune,
    imputed_entities,
)
from lerg.evaluation import ranking_metrics
from lerg.graph import build_adjacency, normalize_symmetric, planted_community_dataset, sample_negatives, split_dataset
from lerg.placeholder import PlaceholderCodebook
from lerg.quantizer import dequantize
from lerg.rewiring import contribution_scores, retained_count, rewire, select_retained
from lerg.trainer import GraphModel, TrainConfig, make_triplets, pretrain


@pytest.fixture(scope="module")
def pipeline_state():
    ds = planted_community_dataset(60, 90, 4, 12.0, seed=3)
    split = sample_negatives(split_dataset(ds, (0.8, 0.1, 0.1), 0), 1, 0)
    adj = build_adjacency(split.train_dataset())
    s = init_assignment(partition_entities(adj, 8, 0), 8, 0.9, 0)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=256, max_epochs=30, patience=5, num_layers=2, bits=8)
    pre = pretrain(split, normalize_symmetric(adj), s, init_codebook(8, 16, 0).weights, cfg)
    return split, adj, s, cfg, pre


def artifacts(state, ratio, r=4):
    split, adj, s, cfg, pre = state
    n = adj.n_rows
    plan = select_retained(contribution_scores(pre.table), retained_count(n, ratio))
    rw = rewire(adj, plan.pruned, 4)
    ph = build_placeholders(pre.table, plan, rw, r, seed=0)
    return plan, rw, ph


def test_full_retention_matches_pretrain_model(pipeline_state):
    split, adj, s, cfg, pre = pipeline_state
    plan, rw, ph = artifacts(pipeline_state, 1.0)
    assert plan.pruned.size == 0
    # only entities with no train edges at all fall back to a placeholder
    isolated = np.flatnonzero(adj.row_nnz() == 0)
    assert np.array_equal(imputed_entities(plan, rw), isolated)
    t = assemble_inference_table(pre.codebook, s, plan, rw, ph, cfg.num_layers)
    assert np.allclose(t, pre.table, atol=1e-12)


def test_zero_epochs_is_identity(pipeline_state):
    split, adj, s, cfg, pre = pipeline_state
    plan, rw, ph = artifacts(pipeline_state, 0.7)
    cfg0 = TrainConfig(**{**cfg.__dict__, "max_epochs": 0})
    res = finetune(pre.codebook, s, plan, rw, ph, split, cfg0)
    assert res.codebook.to_bytes() == pre.codebook.to_bytes()


def test_imputed_rows_come_from_placeholders(pipeline_state):
    split, adj, s, cfg, pre = pipeline_state
    plan, rw, ph = artifacts(pipeline_state, 0.5)
    t = assemble_inference_table(pre.codebook, s, plan, rw, ph, cfg.num_layers)
    ents = imputed_entities(plan, rw)
    assert set(plan.pruned) <= set(ents)
    cset = {tuple(c) for c in ph.centroids}
    assert all(tuple(row) in cset for row in t[ents])


def test_gradient_isolated_from_placeholders(pipeline_state):
    split, adj, s, cfg, pre = pipeline_state
    plan, rw, ph = artifacts(pipeline_state, 0.5)
    ents = set(imputed_entities(plan, rw).tolist())
    trip = make_triplets(split)
    clean = trip[[not ({int(x) for x in row} & ents) for row in trip]]
    assert len(clean)
    moved = PlaceholderCodebook(ph.centroids + 0.37, ph.assignment, ph.entities)
    w, d = dequantize(pre.codebook), pre.codebook.step
    g1 = _model(pre.codebook, s, plan, rw, ph, cfg).loss_and_grads(w, d, clean, cfg.l2_lambda)
    g2 = _model(pre.codebook, s, plan, rw, moved, cfg).loss_and_grads(w, d, clean, cfg.l2_lambda)
    assert np.array_equal(g1[1], g2[1]) and np.array_equal(g1[2], g2[2])
    # triplets through imputed rows change the loss but still no gradient flows into those rows
    l1 = _model(pre.codebook, s, plan, rw, ph, cfg).loss_and_grads(w, d, trip, cfg.l2_lambda)[0]
    l2 = _model(pre.codebook, s, plan, rw, moved, cfg).loss_and_grads(w, d, trip, cfg.l2_lambda)[0]
    assert l1 != l2


def test_mismatch_errors(pipeline_state):
    split, adj, s, cfg, pre = pipeline_state
    plan, rw, ph = artifacts(pipeline_state, 0.7)
    other = select_retained(np.arange(adj.n_rows, dtype=float), plan.m)
    with pytest.raises(ArtifactMismatch, match="bitmap"):
        check_artifacts(pre.codebook, s, other, rw, ph)
    with pytest.raises(ArtifactMismatch, match="slots"):
        check_artifacts(pre.codebook, s, plan, rw, PlaceholderCodebook(ph.centroids, ph.assignment[:-1]))
    with pytest.raises(ArtifactMismatch, match="dim"):
        check_artifacts(pre.codebook, s, plan, rw, PlaceholderCodebook(np.zeros((2, 3)), np.zeros(len(ph.assignment), int)))
    with pytest.raises(ArtifactMismatch, match="c="):
        check_artifacts(pre.codebook, init_assignment(np.zeros(adj.n_rows, int), 3, 0.9, 0), plan, rw, ph)


def test_finetune_not_worse_and_deterministic(pipeline_state):
    split, adj, s, cfg, pre = pipeline_state
    plan, rw, ph = artifacts(pipeline_state, 0.7)
    before = assemble_inference_table(pre.codebook, s, plan, rw, ph, cfg.num_layers)
    res = finetune(pre.codebook, s, plan, rw, ph, split, cfg)
    res2 = finetune(pre.codebook, s, plan, rw, ph, split, cfg)
    assert res.codebook.to_bytes() == res2.codebook.to_bytes()
    after = assemble_inference_table(res.codebook, s, plan, rw, ph, cfg.num_layers)
    v0 = ranking_metrics(before, split, "valid")["20"]["ndcg"]
    v1 = ranking_metrics(after, split, "valid")["20"]["ndcg"]
    assert v1 >= v0
