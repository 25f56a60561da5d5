"""Parameter-free layer propagation with a layer-mean readout."""

from __future__ import annotations

import numpy as np

from .graph import SparseAdjacency


def _check(adj: SparseAdjacency, x: np.ndarray):
    if adj.n_rows != adj.n_cols:
        raise ValueError("propagation matrix must be square")
    if x.ndim != 2 or x.shape[0] != adj.n_rows:
        raise ValueError(f"embedding rows {x.shape[0] if x.ndim else 0} != graph size {adj.n_rows}")


def propagate(adj: SparseAdjacency, h0: np.ndarray, num_layers: int) -> np.ndarray:
    """Mean of ``h0, A h0, ..., A^L h0``."""
    h0 = np.asarray(h0, dtype=np.float64)
    _check(adj, h0)
    if num_layers < 0:
        raise ValueError("layer count must be >= 0")
    m = adj.csr
    h = h0
    acc = h0.copy()
    for _ in range(num_layers):
        h = m @ h
        acc += h
    return acc / (num_layers + 1)


def propagate_backward(adj: SparseAdjacency, grad_h: np.ndarray, num_layers: int) -> np.ndarray:
    """Adjoint of :func:`propagate`: mean of ``(A^T)^l grad`` for l = 0..L."""
    grad_h = np.asarray(grad_h, dtype=np.float64)
    _check(adj, grad_h)
    mt = adj.csr.T.tocsr()
    g = grad_h
    acc = grad_h.copy()
    for _ in range(num_layers):
        g = mt @ g
        acc += g
    return acc / (num_layers + 1)


def count_macs(adj: SparseAdjacency | int, d: int, num_layers: int) -> int:
    """One multiply-accumulate per stored nonzero per column per layer."""
    nnz = adj if isinstance(adj, (int, np.integer)) else adj.nnz
    return int(num_layers) * int(nnz) * int(d)
