"""Full-rank top-K evaluation: precision, recall and NDCG with binary relevance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


def rank_metrics(ranked, relevant, k: int):
    """(precision@k, recall@k, ndcg@k) of one ranked list against a relevant set."""
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = 0
    dcg = 0.0
    for pos, item in enumerate(list(ranked)[:k]):
        if int(item) in relevant:
            hits += 1
            dcg += 1.0 / math.log2(pos + 2)
    idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(relevant))))
    return hits / k, hits / len(relevant), dcg / idcg


@dataclass
class EvalReport:
    cutoff: int
    precision: float
    recall: float
    ndcg: float
    users: np.ndarray
    per_user: np.ndarray  # columns: precision, recall, ndcg
    skipped: int = 0

    @property
    def n_users(self) -> int:
        return len(self.users)

    def as_row(self) -> dict:
        return {"k": self.cutoff, "users": self.n_users, "skipped": self.skipped,
                "precision": self.precision, "recall": self.recall, "ndcg": self.ndcg}

    def per_user_csv(self, key_of: Callable[[int], str] = str) -> str:
        lines = ["user,precision,recall,ndcg"]
        for u, (p, r, n) in zip(self.users, self.per_user):
            lines.append(f"{key_of(int(u))},{float(p)!r},{float(r)!r},{float(n)!r}")
        return "\n".join(lines) + "\n"


def group_by_user(users, items) -> dict[int, np.ndarray]:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    bounds = np.flatnonzero(np.diff(users)) + 1
    return {int(us[0]): np.unique(it) for us, it in
            zip(np.split(users, bounds), np.split(items, bounds)) if len(us)}


def full_rank_evaluate(scorer: Callable[[np.ndarray], np.ndarray], test_users, test_items,
                       known: dict[int, np.ndarray], n_users: int, n_items: int,
                       cutoff: int = 20, batch: int = 64) -> EvalReport:
    """Rank every item a user has not interacted with and score the top ``cutoff``.

    ``scorer(users)`` returns a ``(len(users), n_items)`` score matrix whose
    column ``j`` is item node ``n_users + j``. ``known`` maps a user to the item
    node ids seen during embedding or model training; those are removed from
    the candidates and from the user's test items. Ties rank by ascending item
    id. Users left with no test items are dropped; users with no candidate
    items are skipped and counted.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    empty = np.empty(0, dtype=np.int64)
    tests = {}
    for u, its in group_by_user(test_users, test_items).items():
        its = np.setdiff1d(its, known.get(u, empty))
        if len(its):
            tests[u] = its
    users = np.array(sorted(tests), dtype=np.int64)
    kept, rows = [], []
    skipped = 0
    for s in range(0, len(users), batch):
        chunk = users[s:s + batch]
        scores = np.asarray(scorer(chunk), dtype=np.float64)
        for u, row in zip(chunk, scores):
            seen = known.get(int(u), empty) - n_users
            n_cand = n_items - len(seen)
            if n_cand <= 0:
                skipped += 1
                continue
            row = row.copy()
            row[seen] = -np.inf
            ranked = np.argsort(-row, kind="stable")[:min(cutoff, n_cand)] + n_users
            kept.append(u)
            rows.append(rank_metrics(ranked, tests[int(u)], cutoff))
    if skipped:
        log.warning("skipped %d users with no candidate items", skipped)
    per_user = np.array(rows, dtype=np.float64).reshape(-1, 3)
    means = per_user.mean(axis=0) if len(per_user) else np.zeros(3)
    return EvalReport(cutoff, float(means[0]), float(means[1]), float(means[2]),
                      np.array(kept, dtype=np.int64), per_user, skipped)
