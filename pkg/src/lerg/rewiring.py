"""Contribution scoring, retained-entity selection and graph rewiring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .binio import Reader, pack_header
from .graph import SparseAdjacency, multi_hop_row, normalize_symmetric

MAGIC = b"LERGRWGR"


@dataclass
class RetentionPlan:
    retained: np.ndarray  # sorted entity IDs
    pruned: np.ndarray  # sorted entity IDs
    scores: np.ndarray
    num_entities: int

    @property
    def m(self) -> int:
        return len(self.retained)

    @property
    def retention_ratio(self) -> float:
        return self.m / self.num_entities

    def retained_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_entities, dtype=bool)
        mask[self.retained] = True
        return mask

    @classmethod
    def from_mask(cls, mask: np.ndarray, scores=None) -> RetentionPlan:
        mask = np.asarray(mask, dtype=bool)
        scores = np.zeros(len(mask)) if scores is None else np.asarray(scores)
        return cls(np.flatnonzero(mask), np.flatnonzero(~mask), scores, len(mask))


@dataclass
class RewiredGraph:
    adjacency: SparseAdjacency  # directed, binary
    retained_mask: np.ndarray
    fill_hops: dict  # entity -> hop count used for backfill
    unrecovered: np.ndarray  # entities whose row is still empty

    def to_bytes(self, config_hash: str | None = None) -> bytes:
        a = self.adjacency
        head = pack_header(MAGIC, "QQ", (a.n_rows, a.nnz), config_hash)
        bitmap = np.packbits(self.retained_mask.astype(np.uint8), bitorder="little")
        return (
            head
            + a.row_offsets.astype("<u8").tobytes()
            + a.col_indices.astype("<u4").tobytes()
            + a.values.astype("<f4").tobytes()
            + bitmap.tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes, name="rewired graph"):
        rd = Reader(data, name)
        (n, nnz), config_hash = rd.header(MAGIC, "QQ")
        ro = rd.array("u8", n + 1).astype(np.int64)
        ci = rd.array("u4", nnz).astype(np.int64)
        va = rd.array("f4", nnz).astype(np.float64)
        bits = np.frombuffer(rd.take((n + 7) // 8), dtype=np.uint8)
        rd.done()
        mask = np.unpackbits(bits, count=n, bitorder="little").astype(bool)
        adj = SparseAdjacency(n, n, ro, ci, va)
        empty = np.flatnonzero(adj.row_nnz() == 0)
        # hop counts are not serialized
        return cls(adj, mask, {}, empty), config_hash


def contribution_scores(table: np.ndarray) -> np.ndarray:
    """Row sums of the entity similarity matrix ``H H^T`` without forming it."""
    table = np.asarray(table, dtype=np.float64)
    return table @ table.sum(axis=0)


def retained_count(num_entities: int, ratio: float) -> int:
    m = int(np.floor(ratio * num_entities + 1e-9))
    return min(max(m, 1), num_entities)


def select_retained(scores, m: int, boundary: float = 0.5) -> RetentionPlan:
    """Keep the ``m`` highest-scoring entities (ties to the smaller ID).

    Under the unit box and a single cardinality constraint the relaxed
    program's optimum is the 0/1 vector on the top-``m`` scores, so it is
    built directly; thresholding at ``boundary`` is then applied to that
    vector and leaves it unchanged for any ``boundary`` in [0, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if not 1 <= m <= n:
        raise ValueError(f"retained count {m} outside [1, {n}]")
    if not 0.0 <= boundary < 1.0:
        raise ValueError("rounding boundary must lie in [0, 1)")
    order = np.lexsort((np.arange(n), -scores))
    relaxed = np.zeros(n)
    relaxed[order[:m]] = 1.0
    mask = relaxed > boundary
    return RetentionPlan.from_mask(mask, scores)


def prune_columns(a: SparseAdjacency, pruned) -> SparseAdjacency:
    """Zero every column indexed by a pruned entity (rows untouched)."""
    drop = np.zeros(a.n_cols, dtype=bool)
    drop[np.asarray(pruned, dtype=np.int64)] = True
    keep = ~drop[a.col_indices]
    rows = np.repeat(np.arange(a.n_rows), a.row_nnz())[keep]
    offsets = np.zeros(a.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=a.n_rows), out=offsets[1:])
    return SparseAdjacency(a.n_rows, a.n_cols, offsets, a.col_indices[keep], a.values[keep])


def rewire(a: SparseAdjacency, pruned, max_hops: int = 4) -> RewiredGraph:
    """Prune columns, then backfill each emptied row from its nearest retained
    multi-hop neighbourhood (hops 2..T), all with weight 1."""
    if max_hops < 2:
        raise ValueError("max hop count must be >= 2")
    pruned = np.asarray(pruned, dtype=np.int64)
    retained_mask = np.ones(a.n_rows, dtype=bool)
    retained_mask[pruned] = False
    base = prune_columns(a, pruned)
    empty = np.flatnonzero(base.row_nnz() == 0)
    fill_hops = {}
    fills = {}
    for j in empty:
        j = int(j)
        if a.row_offsets[j] == a.row_offsets[j + 1]:
            continue  # isolated in the input graph, nothing to reach
        for t in range(2, max_hops + 1):
            hood = multi_hop_row(a, j, t)
            hood = hood[retained_mask[hood]]
            if len(hood):
                fills[j] = hood
                fill_hops[j] = t
                break
    if fills:
        m = base.csr.tolil()
        for j, cols in fills.items():
            m.rows[j] = list(int(c) for c in cols)
            m.data[j] = [1.0] * len(cols)
        adj = SparseAdjacency.from_scipy(m.tocsr())
    else:
        adj = base
    unrecovered = np.flatnonzero(adj.row_nnz() == 0)
    return RewiredGraph(adj, retained_mask, fill_hops, unrecovered)


def retained_operator(rewired: RewiredGraph | SparseAdjacency, retained) -> SparseAdjacency:
    """Retained x retained block of the rewired graph, normalized by its own degrees."""
    adj = rewired.adjacency if isinstance(rewired, RewiredGraph) else rewired
    retained = np.asarray(retained, dtype=np.int64)
    sub = adj.csr[retained][:, retained]
    return normalize_symmetric(SparseAdjacency.from_scipy(sub))


def zero_padded_operator(rewired: RewiredGraph | SparseAdjacency, retained) -> SparseAdjacency:
    """Full N x N rewired graph with pruned rows and columns zeroed, then normalized."""
    adj = rewired.adjacency if isinstance(rewired, RewiredGraph) else rewired
    keep = np.zeros(adj.n_rows)
    keep[np.asarray(retained, dtype=np.int64)] = 1.0
    d = sp.diags(keep)
    return normalize_symmetric(SparseAdjacency.from_scipy(d @ adj.csr @ d))
