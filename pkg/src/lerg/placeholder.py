"""Placeholder centroids for entities that no longer come from the codebook."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .binio import Reader, pack_header

MAGIC = b"LERGPLHD"


@dataclass
class PlaceholderCodebook:
    centroids: np.ndarray  # (r, d)
    assignment: np.ndarray  # (count,) centroid index per imputed entity
    entities: np.ndarray | None = None  # entity ID per assignment slot
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.r):
            raise ValueError("placeholder assignment index out of range")
        if self.entities is not None:
            self.entities = np.asarray(self.entities, dtype=np.int64)
            if self.entities.shape != self.assignment.shape:
                raise ValueError("entity list and assignment differ in length")

    @property
    def r(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def to_bytes(self, config_hash: str | None = None) -> bytes:
        head = pack_header(MAGIC, "QQ", (self.r, self.d), config_hash)
        return (
            head
            + self.centroids.astype("<f4").tobytes()
            + np.uint64(len(self.assignment)).astype("<u8").tobytes()
            + self.assignment.astype("<u4").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes, name="placeholder codebook"):
        rd = Reader(data, name)
        (r, d), config_hash = rd.header(MAGIC, "QQ")
        cent = rd.array("f4", r * d).astype(np.float64).reshape(r, d)
        (count,) = rd.unpack("Q")
        q = rd.array("u4", count).astype(np.int64)
        rd.done()
        return cls(cent, q), config_hash


def _sq_dists(x, centroids):
    return (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * x @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    ).clip(min=0.0)


def _kmeanspp(x, r, rng):
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[idx]).ravel()
    for _ in range(1, r):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a chosen centre
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rest[0])
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]]).ravel())
    return x[idx].copy()


def lloyd_objective(x, centroids, labels) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def cluster_pruned(x: np.ndarray, r: int, seed: int = 0, max_iters: int = 100) -> PlaceholderCodebook:
    """k-means++ seeding followed by Lloyd iterations.

    Stops once assignments stop changing or after ``max_iters``. An empty
    cluster is re-seeded with the point farthest from its current centre.
    The per-iteration objective is kept in ``history``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if r < 1:
        raise ValueError("need at least one placeholder")
    if r > n:
        raise ValueError(f"{r} placeholders requested for {n} entities")
    if r > max(n / 10, 1):
        warnings.warn(f"{r} placeholders for {n} entities saves little storage", stacklevel=2)
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, r, rng)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    history = [lloyd_objective(x, centroids, labels)]
    for _ in range(max_iters):
        for k in range(r):
            members = labels == k
            if members.any():
                centroids[k] = x[members].mean(axis=0)
        counts = np.bincount(labels, minlength=r)
        for k in np.flatnonzero(counts == 0):
            far = int(np.argmax(np.einsum("ij,ij->i", x - centroids[labels], x - centroids[labels])))
            centroids[k] = x[far]
            labels[far] = k
        history.append(lloyd_objective(x, centroids, labels))
        dist = _sq_dists(x, centroids)
        new = np.argmin(dist, axis=1)
        # keep current label on exact ties so the objective cannot rise
        cur = dist[np.arange(n), labels]
        new = np.where(dist[np.arange(n), new] < cur, new, labels)
        changed = np.any(new != labels)
        labels = new
        history.append(lloyd_objective(x, centroids, labels))
        if not changed:
            break
    return PlaceholderCodebook(centroids, labels, history=history)


def impute_pruned(p: PlaceholderCodebook) -> np.ndarray:
    return p.centroids[p.assignment]
