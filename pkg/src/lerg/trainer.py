"""BPR training of the quantized compositional table with hand-written adjoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .compose import AssignmentMatrix, compose_backward, infer_full_table
from .evaluation import ranking_metrics
from .graph import DatasetSplit, SparseAdjacency
from .propagation import propagate, propagate_backward
from .quantizer import (
    QuantizedCodebook,
    dequantize,
    fake_quantize,
    lsq_grad_scale,
    qat_backward,
    quantize,
)

log = logging.getLogger(__name__)

MIN_STEP = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    l2_lambda: float = 5e-4
    batch_size: int = 2048
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    num_layers: int = 4
    bits: int = 16
    lsq_grad_scale: bool = False
    eval_n: tuple = (10, 20)
    monitor_n: int = 20

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.l2_lambda < 0:
            raise ValueError("rates must be positive (decay/lambda nonnegative)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size >= 1 and max_epochs >= 0 required")


@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0


class Adam:
    """Adam with decoupled weight decay, updating a dict of arrays in place."""

    def __init__(self, params: dict, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.state = OptimizerState(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )

    def step(self, params: dict, grads: dict) -> None:
        st = self.state
        st.t += 1
        c1 = 1.0 - self.b1**st.t
        c2 = 1.0 - self.b2**st.t
        for k, p in params.items():
            g = grads[k]
            st.m[k] = self.b1 * st.m[k] + (1.0 - self.b1) * g
            st.v[k] = self.b2 * st.v[k] + (1.0 - self.b2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (st.m[k] / c1) / (np.sqrt(st.v[k] / c2) + self.eps)


def bpr_loss(pos_scores, neg_scores, l2_lambda: float = 0.0, param_sq_norm: float = 0.0) -> float:
    """Summed ``-log sigmoid(pos - neg)`` plus ``lambda * ||theta||^2``."""
    x = np.asarray(pos_scores, dtype=np.float64) - np.asarray(neg_scores, dtype=np.float64)
    return float(np.logaddexp(0.0, -x).sum() + l2_lambda * param_sq_norm)


def score(table: np.ndarray, num_users: int, u: int, i: int) -> float:
    """Affinity of user ``u`` and item entity ``i`` (entity ID, i.e. num_users + item)."""
    n = table.shape[0]
    if not 0 <= u < num_users:
        raise ValueError(f"{u} is not a user ID")
    if not num_users <= i < n:
        raise ValueError(f"{i} is not an item entity ID")
    return float(table[u] @ table[i])


def make_triplets(split: DatasetSplit) -> np.ndarray:
    """(user, positive entity, negative entity) rows, one per train pair per negative."""
    if split.negatives.size == 0:
        raise ValueError("split has no negatives; call sample_negatives first")
    k = split.negatives.shape[1]
    nu = split.num_users
    users = np.repeat(split.train[:, 0], k)
    pos = np.repeat(split.train[:, 1], k) + nu
    neg = split.negatives.reshape(-1) + nu
    return np.stack([users, pos, neg], axis=1)


@dataclass
class GraphModel:
    """What gets composed and propagated, and which final rows are fixed.

    ``entities`` are the rows composed from the codebook and propagated over
    ``adj`` (normalized, indexed in ``entities`` order). Rows listed in
    ``fixed_rows`` take ``fixed_values`` in the final table and carry no
    gradient.
    """

    adj: SparseAdjacency
    assignment: AssignmentMatrix  # full N-row assignment
    num_entities: int
    num_layers: int
    bits: int
    entities: np.ndarray | None = None
    fixed_rows: np.ndarray | None = None
    fixed_values: np.ndarray | None = None
    surrogate: bool = False
    grad_scale: bool = False

    def __post_init__(self):
        if self.entities is None:
            self.entities = np.arange(self.num_entities)
        self.entities = np.asarray(self.entities, dtype=np.int64)
        self.local = np.full(self.num_entities, -1, dtype=np.int64)
        self.local[self.entities] = np.arange(len(self.entities))
        self.sub_assignment = self.assignment.rows(self.entities)
        if self.adj.n_rows != len(self.entities):
            raise ValueError("propagation graph does not match the composed entity set")
        self.fixed_mask = np.zeros(self.num_entities, dtype=bool)
        if self.fixed_rows is not None and len(self.fixed_rows):
            self.fixed_rows = np.asarray(self.fixed_rows, dtype=np.int64)
            self.fixed_mask[self.fixed_rows] = True

    def forward(self, weights, delta):
        ehat = fake_quantize(weights, delta, self.bits, self.surrogate)
        h0 = infer_full_table(self.sub_assignment, ehat)
        h = propagate(self.adj, h0, self.num_layers)
        d = h.shape[1]
        table = np.zeros((self.num_entities, d))
        table[self.entities] = h
        if self.fixed_rows is not None and len(self.fixed_rows):
            table[self.fixed_rows] = self.fixed_values
        return table, h0

    def table(self, weights, delta) -> np.ndarray:
        return self.forward(weights, delta)[0]

    def loss_and_grads(self, weights, delta, triplets, l2_lambda):
        table, h0 = self.forward(weights, delta)
        u, p, n = triplets[:, 0], triplets[:, 1], triplets[:, 2]
        hu, hp, hn = table[u], table[p], table[n]
        x = np.einsum("ij,ij->i", hu, hp - hn)
        # Theta = composed rows of the batch's entities that come from the codebook
        ents = triplets.reshape(-1)
        loc = self.local[ents]
        loc = loc[loc >= 0]
        counts = np.bincount(loc, minlength=len(self.entities)).astype(np.float64)
        sq = float(counts @ np.einsum("ij,ij->i", h0, h0))
        loss = bpr_loss(x, 0.0, l2_lambda, sq)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss}")

        g = -expit(-x)[:, None]
        grad_table = np.zeros_like(table)
        np.add.at(grad_table, u, g * (hp - hn))
        np.add.at(grad_table, p, g * hu)
        np.add.at(grad_table, n, -g * hu)
        grad_table[self.fixed_mask] = 0.0
        grad_h = grad_table[self.entities]
        grad_h0 = propagate_backward(self.adj, grad_h, self.num_layers)
        grad_h0 += 2.0 * l2_lambda * counts[:, None] * h0
        grad_ehat = compose_backward(self.sub_assignment, grad_h0)
        c, d = weights.shape
        scale = lsq_grad_scale(c, d, self.bits) if self.grad_scale else 1.0
        grad_w, grad_delta = qat_backward(grad_ehat, weights, delta, self.bits, self.surrogate, scale)
        return loss, grad_w, grad_delta


@dataclass
class FitResult:
    weights: np.ndarray
    delta: np.ndarray
    history: list = field(default_factory=list)
    best_epoch: int = 0


def snap_step(delta: np.ndarray) -> np.ndarray:
    """Round step sizes through float32, the precision they are stored at."""
    return np.maximum(np.asarray(delta, dtype=np.float32).astype(np.float64), np.float32(MIN_STEP))


def fit(
    model: GraphModel,
    weights: np.ndarray,
    delta: np.ndarray,
    split: DatasetSplit,
    cfg: TrainConfig,
    table_fn=None,
    log_path=None,
) -> FitResult:
    """Minibatch BPR with early stopping on validation NDCG@``cfg.monitor_n``.

    The parameters of the best validation epoch (epoch 0 = the initial
    values) are returned. ``table_fn(weights, delta)`` overrides how the
    evaluation table is produced.
    """
    weights = np.array(weights, dtype=np.float64)
    delta = np.array(delta, dtype=np.float64)
    table_fn = table_fn or model.table
    triplets = make_triplets(split)
    rng = np.random.default_rng(cfg.seed)
    params = {"weights": weights, "delta": delta}
    opt = Adam(params, cfg.learning_rate, cfg.weight_decay)
    n_list = tuple(sorted(set(cfg.eval_n) | {cfg.monitor_n}))
    has_valid = len(split.valid) > 0

    def validate():
        if not has_valid:
            return None
        return ranking_metrics(table_fn(weights, delta), split, "valid", n_list)

    history = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        val = validate()
        best = val[str(cfg.monitor_n)]["ndcg"] if val else -np.inf
        best_params = (weights.copy(), delta.copy())
        best_epoch, bad = 0, 0
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(triplets))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = triplets[order[start : start + cfg.batch_size]]
                loss, gw, gd = model.loss_and_grads(weights, delta, batch, cfg.l2_lambda)
                total += loss
                opt.step(params, {"weights": gw, "delta": gd})
                np.maximum(delta, MIN_STEP, out=delta)
            if not np.isfinite(total):
                raise TrainingDiverged(f"epoch {epoch}: non-finite loss")
            val = validate()
            rec = {"epoch": epoch, "train_loss": total / max(len(triplets), 1)}
            if val:
                for n in cfg.eval_n:
                    rec[f"recall@{n}"] = val[str(n)]["recall"]
                    rec[f"ndcg@{n}"] = val[str(n)]["ndcg"]
            rec["wall_time"] = time.perf_counter() - t0
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
            log.info("epoch %d loss %.5f", epoch, rec["train_loss"])
            if val is None:
                best_params = (weights.copy(), delta.copy())
                best_epoch = epoch
                continue
            cur = val[str(cfg.monitor_n)]["ndcg"]
            if cur > best:
                best, best_epoch, bad = cur, epoch, 0
                best_params = (weights.copy(), delta.copy())
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    finally:
        if fh:
            fh.close()
    return FitResult(best_params[0], best_params[1], history, best_epoch)


@dataclass
class PretrainArtifacts:
    codebook: QuantizedCodebook
    table: np.ndarray  # propagated full-graph table
    history: list


def pretrain(
    split: DatasetSplit,
    adj_norm: SparseAdjacency,
    assignment: AssignmentMatrix,
    weights: np.ndarray,
    cfg: TrainConfig,
    delta: np.ndarray | None = None,
    log_path=None,
) -> PretrainArtifacts:
    """Train codebook and step sizes over the full normalized graph.

    The returned codebook has its step sizes rounded to float32 (storage
    precision) and the returned table is recomputed from exactly that codebook.
    """
    from .quantizer import init_step

    if adj_norm.n_rows != split.num_entities or assignment.n != split.num_entities:
        raise ValueError("graph/assignment do not cover every entity")
    weights = np.asarray(weights, dtype=np.float64)
    if delta is None:
        delta = init_step(weights, cfg.bits)
    model = GraphModel(adj_norm, assignment, split.num_entities, cfg.num_layers, cfg.bits, grad_scale=cfg.lsq_grad_scale)
    res = fit(model, weights, delta, split, cfg, log_path=log_path)
    q = quantize(res.weights, snap_step(res.delta), cfg.bits)
    table = model.table(dequantize(q), q.step)
    return PretrainArtifacts(q, table, res.history)
