"""Interaction ingestion, bipartite graph construction, splits and negatives.

Entity IDs share one contiguous space: users occupy ``[0, num_users)`` and
item ``i`` is entity ``num_users + i``.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionDataset:
    num_users: int
    num_items: int
    pairs: np.ndarray  # (P, 2) int64, column 1 holds item IDs (not entity IDs)
    user_tokens: tuple = ()
    item_tokens: tuple = ()

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", pairs)
        if len(pairs):
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.num_users:
                raise DatasetError("user id out of range")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.num_items:
                raise DatasetError("item id out of range")
            keys = pairs[:, 0] * max(self.num_items, 1) + pairs[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise DatasetError("duplicate interaction pairs")

    @property
    def num_entities(self) -> int:
        return self.num_users + self.num_items

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """CSR matrix with strictly increasing column indices inside each row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.asarray(self.row_offsets, dtype=np.int64)
        ci = np.asarray(self.col_indices, dtype=np.int64)
        va = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if len(ro) != self.n_rows + 1 or ro[0] != 0 or ro[-1] != len(ci):
            raise ValueError("row_offsets inconsistent with shape")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if len(ci) != len(va):
            raise ValueError("col_indices and values differ in length")
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ValueError("column index out of range")
        if not np.all(np.isfinite(va)):
            raise ValueError("non-finite adjacency value")
        # strictly increasing columns within each row
        if len(ci) > 1:
            step = np.diff(ci)
            row_start = np.zeros(len(ci), dtype=bool)
            row_start[ro[1:-1][ro[1:-1] < len(ci)]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must strictly increase within a row")

    @classmethod
    def from_scipy(cls, m) -> SparseAdjacency:
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int | None = None) -> SparseAdjacency:
        n_cols = n_rows if n_cols is None else n_cols
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, np.int64), np.zeros(0, np.int64), np.zeros(0))

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(self.n_rows, self.n_cols)
        )

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.col_indices)

    def row(self, j: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[j] : self.row_offsets[j + 1]]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def todense(self) -> np.ndarray:
        return self.csr.toarray()


@dataclass
class DatasetSplit:
    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    negatives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), np.int64))

    @property
    def num_entities(self) -> int:
        return self.num_users + self.num_items

    def train_dataset(self) -> InteractionDataset:
        return InteractionDataset(self.num_users, self.num_items, self.train)

    def items_by_user(self, which: str) -> list[np.ndarray]:
        pairs = getattr(self, which)
        return _group_items(pairs, self.num_users)


def _group_items(pairs: np.ndarray, num_users: int) -> list[np.ndarray]:
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    sorted_pairs = pairs[order]
    bounds = np.searchsorted(sorted_pairs[:, 0], np.arange(num_users + 1))
    return [sorted_pairs[bounds[u] : bounds[u + 1], 1] for u in range(num_users)]


def load_interactions(path, format: str = "tsv_pairs") -> InteractionDataset:
    """Read one ``user item`` pair per line, mapping tokens to dense IDs.

    Tokens get IDs in first-appearance order; repeated pairs are dropped.
    Lines starting with ``#`` and blank lines are skipped.
    """
    if format not in ("tsv_pairs", "csv_pairs"):
        raise ValueError(f"unknown interaction format {format!r}")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    pairs: list[tuple[int, int]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if format == "csv_pairs":
                tokens = [t.strip() for t in next(csv.reader([text]))]
            else:
                # tab-separated, but whitespace/comma is accepted too
                tokens = text.replace(",", "\t").split()
            if len(tokens) < 2 or not tokens[0] or not tokens[1]:
                raise DatasetError(f"{path}:{lineno}: expected 'user item', got {text!r}")
            u = users.setdefault(tokens[0], len(users))
            i = items.setdefault(tokens[1], len(items))
            if (u, i) not in seen:
                seen.add((u, i))
                pairs.append((u, i))
    if not pairs:
        raise DatasetError(f"{path}: no interactions found")
    return InteractionDataset(
        len(users), len(items), np.array(pairs, dtype=np.int64), tuple(users), tuple(items)
    )


def save_interactions(ds: InteractionDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in ds.pairs:
            fh.write(f"u{u}\ti{i}\n")


def build_adjacency(ds: InteractionDataset) -> SparseAdjacency:
    """Symmetric binary bipartite adjacency over all N entities."""
    n = ds.num_entities
    if len(ds.pairs) == 0:
        return SparseAdjacency.zeros(n)
    u = ds.pairs[:, 0]
    i = ds.pairs[:, 1] + ds.num_users
    rows = np.concatenate([u, i])
    cols = np.concatenate([i, u])
    m = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return SparseAdjacency.from_scipy(m)


def normalize_symmetric(a: SparseAdjacency) -> SparseAdjacency:
    """Scale each nonzero by ``1/sqrt(rowdeg(j) * coldeg(k))``.

    For a symmetric matrix this is the usual ``D^-1/2 A D^-1/2``; for a
    directed one the left factor uses row sums and the right factor column
    sums. Zero-degree rows/columns stay zero.
    """
    m = a.csr
    row_deg = np.asarray(m.sum(axis=1)).ravel()
    col_deg = np.asarray(m.sum(axis=0)).ravel()
    with np.errstate(divide="ignore"):
        r = np.where(row_deg > 0, 1.0 / np.sqrt(row_deg), 0.0)
        c = np.where(col_deg > 0, 1.0 / np.sqrt(col_deg), 0.0)
    rows = np.repeat(np.arange(a.n_rows), a.row_nnz())
    values = a.values * r[rows] * c[a.col_indices]
    return SparseAdjacency(a.n_rows, a.n_cols, a.row_offsets, a.col_indices, values)


def split_dataset(ds: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Per-user stratified split; ``ratios`` is ``(train, test, valid)``.

    Users with fewer than three interactions keep everything in train.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0):
        raise ValueError("ratios must be three nonnegative numbers (train, test, valid)")
    total = ratios.sum()
    if total <= 0:
        raise ValueError("split ratios sum to zero")
    _, test_r, valid_r = ratios / total
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for u, items in enumerate(_group_items(ds.pairs, ds.num_users)):
        n = len(items)
        if n == 0:
            continue
        items = items.copy()
        if n < 3:
            train.extend((u, i) for i in items)
            continue
        rng.shuffle(items)
        n_test = int(np.floor(n * test_r + 0.5))
        n_valid = int(np.floor(n * valid_r + 0.5))
        if n_test + n_valid >= n:
            n_valid = max(0, n - 1 - n_test)
            n_test = min(n_test, n - 1)
        test.extend((u, i) for i in items[:n_test])
        valid.extend((u, i) for i in items[n_test : n_test + n_valid])
        train.extend((u, i) for i in items[n_test + n_valid :])

    def arr(x):
        return np.array(x, dtype=np.int64).reshape(-1, 2)

    return DatasetSplit(ds.num_users, ds.num_items, arr(train), arr(valid), arr(test))


def sample_negatives(split: DatasetSplit, k: int = 5, seed: int = 0) -> DatasetSplit:
    """Attach ``k`` uniformly drawn unobserved items to every train pair."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    observed = np.concatenate([split.train, split.valid, split.test])
    observed_by_user = _group_items(observed, split.num_users)
    train = split.train
    negatives = np.empty((len(train), k), dtype=np.int64)
    order = np.argsort(train[:, 0], kind="stable")
    bounds = np.searchsorted(train[order, 0], np.arange(split.num_users + 1))
    all_items = np.arange(split.num_items)
    for u in range(split.num_users):
        idx = order[bounds[u] : bounds[u + 1]]
        if len(idx) == 0:
            continue
        candidates = np.setdiff1d(all_items, observed_by_user[u], assume_unique=True)
        if len(candidates) == 0:
            raise DatasetError(f"user {u} interacted with every item; cannot sample negatives")
        negatives[idx] = rng.choice(candidates, size=(len(idx), k))
    return DatasetSplit(
        split.num_users, split.num_items, split.train, split.valid, split.test, negatives
    )


def multi_hop_row(a: SparseAdjacency, j: int, t: int, max_hops: int | None = None) -> np.ndarray:
    """Sorted entities within ``t`` hops of ``j`` (excluding ``j``), via bounded BFS."""
    if t < 1 or (max_hops is not None and t > max_hops):
        raise ValueError(f"hop count {t} out of range")
    if not 0 <= j < a.n_rows:
        raise ValueError(f"entity {j} out of range")
    seen = {j}
    frontier = deque([j])
    for _ in range(t):
        nxt = deque()
        while frontier:
            v = frontier.popleft()
            for w in a.row(v):
                w = int(w)
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        if not nxt:
            break
        frontier = nxt
    seen.discard(j)
    return np.array(sorted(seen), dtype=np.int64)


def planted_community_dataset(
    num_users: int = 800,
    num_items: int = 1200,
    num_communities: int = 10,
    interactions_per_user: float = 25.0,
    in_community: float = 0.85,
    seed: int = 0,
) -> InteractionDataset:
    """Synthetic bipartite interactions with planted user/item communities.

    Each user draws a Poisson-ish number of items, mostly from its own
    community with a Zipf-like popularity skew inside each community.
    """
    rng = np.random.default_rng(seed)
    user_comm = rng.integers(0, num_communities, size=num_users)
    item_comm = np.arange(num_items) % num_communities
    rng.shuffle(item_comm)
    members = [np.flatnonzero(item_comm == c) for c in range(num_communities)]
    weights = []
    for mem in members:
        w = 1.0 / np.arange(1, len(mem) + 1) ** 0.6
        weights.append(w / w.sum())
    global_w = 1.0 / np.arange(1, num_items + 1) ** 0.6
    global_perm = rng.permutation(num_items)
    global_w = global_w / global_w.sum()
    pairs = set()
    for u in range(num_users):
        n = max(3, int(rng.poisson(interactions_per_user)))
        c = user_comm[u]
        n_in = rng.binomial(n, in_community)
        chosen = rng.choice(members[c], size=min(n_in, len(members[c])), replace=False, p=weights[c])
        out = global_perm[rng.choice(num_items, size=n - len(chosen), replace=False, p=global_w)]
        for i in np.concatenate([chosen, out]):
            pairs.add((u, int(i)))
    pairs_arr = np.array(sorted(pairs), dtype=np.int64)
    # drop items never touched so IDs stay dense
    used = np.unique(pairs_arr[:, 1])
    remap = np.full(num_items, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    pairs_arr[:, 1] = remap[pairs_arr[:, 1]]
    return InteractionDataset(num_users, len(used), pairs_arr)
