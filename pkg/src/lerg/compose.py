"""Compositional embeddings: codebook, two-slot assignment, graph-aware init."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph

from .binio import Reader, pack_header
from .graph import SparseAdjacency

MAGIC = b"LERGASGN"


@dataclass
class Codebook:
    weights: np.ndarray  # (c, d)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("codebook must be a 2-d array")
        if self.c < 2 or self.d < 1:
            raise ValueError("codebook needs c >= 2 and d >= 1")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("codebook contains non-finite entries")

    @property
    def c(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]


def init_codebook(c: int, d: int, seed: int = 0) -> Codebook:
    a = np.sqrt(6.0 / (c + d))
    rng = np.random.default_rng(seed)
    return Codebook(rng.uniform(-a, a, size=(c, d)))


@dataclass
class AssignmentMatrix:
    """Each entity row holds weight ``w`` on its anchor and ``1 - w`` on its auxiliary."""

    anchor: np.ndarray
    aux: np.ndarray
    c: int
    anchor_weight: float = 0.9

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.int64)
        self.aux = np.asarray(self.aux, dtype=np.int64)
        if self.anchor.shape != self.aux.shape or self.anchor.ndim != 1:
            raise ValueError("anchor/aux index arrays must be 1-d and equal length")
        if not 0.0 < self.anchor_weight <= 1.0:
            raise ValueError("anchor weight must lie in (0, 1]")
        for arr in (self.anchor, self.aux):
            if arr.size and (arr.min() < 0 or arr.max() >= self.c):
                raise ValueError("assignment index out of range")
        if self.c > 1 and np.any(self.anchor == self.aux):
            raise ValueError("anchor and auxiliary index coincide")

    @property
    def n(self) -> int:
        return len(self.anchor)

    def rows(self, idx) -> AssignmentMatrix:
        return AssignmentMatrix(self.anchor[idx], self.aux[idx], self.c, self.anchor_weight)

    def todense(self) -> np.ndarray:
        s = np.zeros((self.n, self.c))
        r = np.arange(self.n)
        s[r, self.anchor] += self.anchor_weight
        s[r, self.aux] += 1.0 - self.anchor_weight
        return s

    def to_bytes(self, config_hash: str | None = None) -> bytes:
        head = pack_header(MAGIC, "QQd", (self.n, self.c, self.anchor_weight), config_hash)
        return head + self.anchor.astype("<u4").tobytes() + self.aux.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, name="assignment"):
        rd = Reader(data, name)
        (n, c, w), config_hash = rd.header(MAGIC, "QQd")
        anchor = rd.array("u4", n).astype(np.int64)
        aux = rd.array("u4", n).astype(np.int64)
        rd.done()
        return cls(anchor, aux, c, w), config_hash


def infer_full_table(s: AssignmentMatrix, table: np.ndarray) -> np.ndarray:
    """Compose entity rows as a weighted gather of two codebook rows."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] != s.c:
        raise ValueError(f"codebook has {table.shape[0] if table.ndim else 0} rows, assignment expects {s.c}")
    w = s.anchor_weight
    return w * table[s.anchor] + (1.0 - w) * table[s.aux]


def compose_backward(s: AssignmentMatrix, grad_rows: np.ndarray) -> np.ndarray:
    """Scatter entity-row gradients back onto the codebook (transpose of the gather)."""
    grad_rows = np.asarray(grad_rows, dtype=np.float64)
    out = np.zeros((s.c, grad_rows.shape[1]))
    w = s.anchor_weight
    np.add.at(out, s.anchor, w * grad_rows)
    np.add.at(out, s.aux, (1.0 - w) * grad_rows)
    return out


def init_assignment(labels: np.ndarray, c: int, anchor_weight: float = 0.9, seed: int = 0) -> AssignmentMatrix:
    """Anchor = partition label; auxiliary drawn uniformly from the other c-1 slots."""
    labels = np.asarray(labels, dtype=np.int64)
    if not 0.0 < anchor_weight < 1.0:
        raise ValueError("anchor weight must lie strictly between 0 and 1")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError("partition label out of range")
    rng = np.random.default_rng(seed)
    if c == 1:
        return AssignmentMatrix(labels, labels.copy(), c, anchor_weight)
    aux = rng.integers(0, c - 1, size=len(labels))
    aux = aux + (aux >= labels)
    return AssignmentMatrix(labels, aux, c, anchor_weight)


def balance_cap(n: int, c: int, eps: float) -> int:
    return max(1, int(np.floor(-(-n // c) * (1.0 + eps) + 1e-9)))


def edge_cut(a: SparseAdjacency, labels: np.ndarray) -> int:
    rows = np.repeat(np.arange(a.n_rows), a.row_nnz())
    return int(np.sum(labels[rows] != labels[a.col_indices]) // 2)


def partition_entities(
    a: SparseAdjacency,
    c: int,
    seed: int = 0,
    eps: float = 0.1,
    sweeps: int = 10,
    labels: np.ndarray | None = None,
) -> np.ndarray:
    """Balanced ``c``-way partition minimising edge cut.

    Seeds are spread farthest-first (so disconnected components get their
    own seeds), regions grow round-robin in BFS order under the size cap,
    then greedy boundary moves reduce the cut. Externally computed labels
    (e.g. from a METIS run) can be passed through ``labels`` and are only
    validated.
    """
    n = a.n_rows
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
            raise ValueError("external partition labels invalid for this graph")
        return labels
    if c < 2:
        raise ValueError("need at least 2 partitions")
    if c > n:
        raise ValueError(f"cannot split {n} entities into {c} partitions")
    if c == n:
        return np.arange(n, dtype=np.int64)
    cap = balance_cap(n, c, eps)
    rng = np.random.default_rng(seed)
    graph = a.csr

    seeds = _spread_seeds(graph, c, rng)
    labels = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(c, dtype=np.int64)
    queues = []
    for p, s in enumerate(seeds):
        labels[s] = p
        sizes[p] = 1
        queues.append(deque([s]))

    indptr, indices = a.row_offsets, a.col_indices
    active = True
    while active:
        active = False
        for p in range(c):
            q = queues[p]
            if sizes[p] >= cap:
                continue
            # advance to the next unlabeled frontier vertex
            while q:
                v = q[0]
                grabbed = False
                for w in indices[indptr[v] : indptr[v + 1]]:
                    if labels[w] < 0:
                        labels[w] = p
                        sizes[p] += 1
                        q.append(w)
                        grabbed = True
                        break
                if grabbed:
                    active = True
                    break
                q.popleft()

    for v in np.flatnonzero(labels < 0):
        # leftovers: prefer a neighbouring partition with room, else the smallest one
        nbr = labels[indices[indptr[v] : indptr[v + 1]]]
        nbr = nbr[(nbr >= 0)]
        nbr = nbr[sizes[nbr] < cap] if len(nbr) else nbr
        if len(nbr):
            counts = np.bincount(nbr, minlength=c)
            p = int(np.argmax(counts))
        else:
            p = int(np.argmin(sizes))
        labels[v] = p
        sizes[p] += 1

    _refine(indptr, indices, labels, sizes, cap, sweeps)
    return labels


def _spread_seeds(graph, c: int, rng) -> list[int]:
    n = graph.shape[0]
    start = int(rng.integers(n))
    dist = csgraph.shortest_path(graph, unweighted=True, indices=start, directed=False)
    finite = np.where(np.isfinite(dist), dist, -1)
    # pseudo-peripheral first seed
    first = int(np.argmax(finite))
    seeds = [first]
    mind = csgraph.shortest_path(graph, unweighted=True, indices=first, directed=False)
    taken = np.zeros(n, dtype=bool)
    taken[first] = True
    tiebreak = rng.random(n) * 1e-3
    while len(seeds) < c:
        score = np.where(np.isinf(mind), 1e12, mind) + tiebreak
        score[taken] = -1.0
        s = int(np.argmax(score))
        seeds.append(s)
        taken[s] = True
        mind = np.minimum(mind, csgraph.shortest_path(graph, unweighted=True, indices=s, directed=False))
    return seeds


def _refine(indptr, indices, labels, sizes, cap, sweeps):
    n = len(labels)
    for _ in range(sweeps):
        moved = 0
        for v in range(n):
            nbr = indices[indptr[v] : indptr[v + 1]]
            if len(nbr) == 0:
                continue
            cur = labels[v]
            parts, counts = np.unique(labels[nbr], return_counts=True)
            own = counts[parts == cur].sum()
            best, best_gain = cur, 0
            for p, k in zip(parts, counts):
                if p == cur or sizes[p] >= cap:
                    continue
                gain = k - own
                if gain > best_gain:
                    best, best_gain = p, gain
            if best != cur and sizes[cur] > 1:
                labels[v] = best
                sizes[cur] -= 1
                sizes[best] += 1
                moved += 1
        if moved == 0:
            break
