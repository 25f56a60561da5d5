"""Full-catalog top-N ranking metrics and the metrics report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import DatasetSplit, _group_items


def rank_items(table: np.ndarray, num_users: int, u: int, exclude=()) -> np.ndarray:
    """Items (item IDs, not entity IDs) by descending score, ties by ascending ID."""
    if not 0 <= u < num_users:
        raise ValueError(f"unknown user {u}")
    items = table[num_users:]
    scores = items @ table[u]
    keep = np.ones(len(items), dtype=bool)
    keep[np.asarray(list(exclude), dtype=np.int64)] = False
    cand = np.flatnonzero(keep)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order]


def recall_at_n(ranked, relevant, n: int) -> float | None:
    if n < 1:
        raise ValueError("n must be >= 1")
    relevant = set(int(i) for i in relevant)
    if not relevant:
        return None
    hits = sum(1 for i in ranked[:n] if int(i) in relevant)
    return hits / len(relevant)


def ndcg_at_n(ranked, relevant, n: int) -> float | None:
    if n < 1:
        raise ValueError("n must be >= 1")
    relevant = set(int(i) for i in relevant)
    if not relevant:
        return None
    dcg = sum(1.0 / np.log2(p + 2) for p, i in enumerate(ranked[:n]) if int(i) in relevant)
    idcg = sum(1.0 / np.log2(p + 2) for p in range(min(n, len(relevant))))
    return float(dcg / idcg)


def _batched_topn(table, num_users, users, exclude_lists, n_max):
    """Top-``n_max`` item lists for many users at once (same ordering as rank_items)."""
    items = table[num_users:]
    scores = table[users] @ items.T
    for row, ex in enumerate(exclude_lists):
        scores[row, ex] = -np.inf
    out = []
    n_items = items.shape[0]
    k = min(n_max, n_items)
    for row, ex in enumerate(exclude_lists):
        s = scores[row]
        avail = n_items - len(ex)
        kk = min(k, avail)
        if kk <= 0:
            out.append(np.zeros(0, dtype=np.int64))
            continue
        if kk < n_items:
            # pad the partition to keep every tie at the cut boundary
            thresh = np.partition(s, n_items - kk)[n_items - kk]
            cand = np.flatnonzero(s >= thresh)
        else:
            cand = np.arange(n_items)
        cand = cand[np.isfinite(s[cand])]
        order = np.lexsort((cand, -s[cand]))
        out.append(cand[order][:kk])
    return out


def ranking_metrics(table: np.ndarray, split: DatasetSplit, which: str = "test", n_list=(10, 20), batch: int = 512) -> dict:
    """User-mean Recall@n / NDCG@n over users with a nonempty ``which`` set.

    Training items are excluded from each user's candidate list.
    """
    table = np.asarray(table, dtype=np.float64)
    nu = split.num_users
    train_by_user = _group_items(split.train, nu)
    target_by_user = _group_items(getattr(split, which), nu)
    users = np.array([u for u in range(nu) if len(target_by_user[u])], dtype=np.int64)
    n_max = max(n_list)
    sums = {n: {"recall": 0.0, "ndcg": 0.0} for n in n_list}
    for start in range(0, len(users), batch):
        chunk = users[start : start + batch]
        tops = _batched_topn(table, nu, chunk, [train_by_user[u] for u in chunk], n_max)
        for u, ranked in zip(chunk, tops):
            rel = target_by_user[u]
            for n in n_list:
                sums[n]["recall"] += recall_at_n(ranked, rel, n)
                sums[n]["ndcg"] += ndcg_at_n(ranked, rel, n)
    count = max(len(users), 1)
    return {
        str(n): {"recall": sums[n]["recall"] / count, "ndcg": sums[n]["ndcg"] / count} for n in n_list
    }


@dataclass
class MetricsReport:
    dataset: str
    config_hash: str | None
    storage_bytes: dict
    macs_per_layer: int
    metrics: dict
    timing: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "dataset": self.dataset,
            "config_hash": self.config_hash,
            "storage_bytes": self.storage_bytes,
            "macs_per_layer": self.macs_per_layer,
            "metrics": self.metrics,
            "timing": self.timing,
        }
        body.update(self.extra)
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MetricsReport:
        body = json.loads(text)
        known = {"dataset", "config_hash", "storage_bytes", "macs_per_layer", "metrics", "timing"}
        return cls(
            body["dataset"],
            body["config_hash"],
            body["storage_bytes"],
            body["macs_per_layer"],
            body["metrics"],
            body.get("timing", {}),
            {k: v for k, v in body.items() if k not in known},
        )


def evaluate(
    table,
    split: DatasetSplit,
    n_list=(10, 20),
    *,
    dataset: str = "",
    config_hash: str | None = None,
    storage=None,
    macs_per_layer: int = 0,
    which: str = "test",
) -> MetricsReport:
    metrics = ranking_metrics(table, split, which, n_list)
    storage_dict = storage.as_dict() if hasattr(storage, "as_dict") else dict(storage or {})
    return MetricsReport(dataset, config_hash, storage_dict, int(macs_per_layer), metrics)
