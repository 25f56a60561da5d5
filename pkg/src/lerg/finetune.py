"""Refining the pretrained quantized codebook over the rewired graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compose import AssignmentMatrix
from .graph import DatasetSplit
from .placeholder import PlaceholderCodebook, cluster_pruned, impute_pruned
from .quantizer import QuantizedCodebook, dequantize, quantize
from .rewiring import RetentionPlan, RewiredGraph, retained_operator
from .trainer import FitResult, GraphModel, TrainConfig, fit, snap_step


class ArtifactMismatch(ValueError):
    pass


def imputed_entities(plan: RetentionPlan, rewired: RewiredGraph) -> np.ndarray:
    """Entities served by placeholders: pruned ones plus retained rows left empty."""
    mask = ~plan.retained_mask()
    mask[rewired.unrecovered] = True
    return np.flatnonzero(mask)


def build_placeholders(h_pretrain, plan, rewired, r: int, seed: int = 0, max_iters: int = 100):
    ents = imputed_entities(plan, rewired)
    if len(ents) == 0:
        return PlaceholderCodebook(np.zeros((0, h_pretrain.shape[1])), np.zeros(0, np.int64), ents)
    p = cluster_pruned(h_pretrain[ents], min(r, len(ents)), seed, max_iters)
    p.entities = ents
    return p


def check_artifacts(codebook: QuantizedCodebook, s: AssignmentMatrix, plan: RetentionPlan, rewired: RewiredGraph, placeholders: PlaceholderCodebook | None):
    problems = []
    n = plan.num_entities
    if s.c != codebook.c:
        problems.append(f"assignment has c={s.c}, codebook has c={codebook.c}")
    if s.n != n:
        problems.append(f"assignment covers {s.n} entities, plan covers {n}")
    if rewired.adjacency.n_rows != n:
        problems.append(f"rewired graph has {rewired.adjacency.n_rows} rows, plan covers {n}")
    elif not np.array_equal(rewired.retained_mask, plan.retained_mask()):
        problems.append("retained bitmap of the rewired graph differs from the plan")
    if plan.m < 1:
        problems.append("no retained entities")
    if placeholders is not None:
        expected = imputed_entities(plan, rewired) if rewired.adjacency.n_rows == n else None
        if expected is not None and len(placeholders.assignment) != len(expected):
            problems.append(
                f"placeholder assignment has {len(placeholders.assignment)} slots, {len(expected)} imputed entities"
            )
        if placeholders.r and placeholders.d != codebook.d:
            problems.append(f"placeholder dim {placeholders.d} != codebook dim {codebook.d}")
    if problems:
        raise ArtifactMismatch("; ".join(problems))


def _model(codebook, s, plan, rewired, placeholders, cfg: TrainConfig) -> GraphModel:
    check_artifacts(codebook, s, plan, rewired, placeholders)
    ents = imputed_entities(plan, rewired)
    values = impute_pruned(placeholders) if len(ents) else np.zeros((0, codebook.d))
    return GraphModel(
        retained_operator(rewired, plan.retained),
        s,
        plan.num_entities,
        cfg.num_layers,
        codebook.b,
        entities=plan.retained,
        fixed_rows=ents,
        fixed_values=values,
        grad_scale=cfg.lsq_grad_scale,
    )


def assemble_inference_table(codebook: QuantizedCodebook, s, plan, rewired, placeholders, num_layers: int) -> np.ndarray:
    """Propagated composed rows for retained entities, placeholder rows for the rest."""
    cfg = TrainConfig(num_layers=num_layers, bits=codebook.b)
    model = _model(codebook, s, plan, rewired, placeholders, cfg)
    return model.table(dequantize(codebook), codebook.step)


@dataclass
class FinetuneResult:
    codebook: QuantizedCodebook
    history: list
    best_epoch: int


def finetune(
    pretrained: QuantizedCodebook,
    s: AssignmentMatrix,
    plan: RetentionPlan,
    rewired: RewiredGraph,
    placeholders: PlaceholderCodebook,
    split: DatasetSplit,
    cfg: TrainConfig,
    log_path=None,
) -> FinetuneResult:
    """QAT over the retained block of the rewired graph, starting from the
    pretrained grid and step sizes. Triplets may touch imputed entities; those
    rows are constants and pass no gradient to the codebook."""
    if cfg.bits != pretrained.b:
        cfg = TrainConfig(**{**cfg.__dict__, "bits": pretrained.b})
    model = _model(pretrained, s, plan, rewired, placeholders, cfg)
    if cfg.max_epochs == 0:
        return FinetuneResult(pretrained, [], 0)
    res: FitResult = fit(model, dequantize(pretrained), pretrained.step.copy(), split, cfg, log_path=log_path)
    if res.best_epoch == 0:
        return FinetuneResult(pretrained, res.history, 0)
    q = quantize(res.weights, snap_step(res.delta), pretrained.b)
    return FinetuneResult(q, res.history, res.best_epoch)
