"""User-item bipartite graph with a unified node id space.

Users occupy ids ``0..N-1`` and items ``N..N+M-1``, so the adjacency of the
whole graph is the symmetric block matrix ``[[0, R], [R^T, 0]]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InputError

DEFAULT_SPLIT = (0.65, 0.15, 0.20)


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    item: str
    weight: float = 1.0


def parse_interactions(lines: Iterable[str]) -> Iterator[InteractionRecord]:
    """Parse ``user<TAB>item[<TAB>weight]`` lines; ``#`` lines and blanks are skipped."""
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
            raise InputError(f"expected user<TAB>item[<TAB>weight], got {line!r}", lineno)
        weight = 1.0
        if len(fields) == 3:
            try:
                weight = float(fields[2])
            except ValueError:
                raise InputError(f"bad weight {fields[2]!r}", lineno) from None
            if not math.isfinite(weight) or weight <= 0:
                raise InputError(f"weight must be positive, got {fields[2]}", lineno)
        yield InteractionRecord(fields[0], fields[1], weight)


def read_interactions(path) -> list[InteractionRecord]:
    with open(path, encoding="utf-8") as fh:
        return list(parse_interactions(fh))


def write_interactions(path, records: Iterable[InteractionRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.user}\t{r.item}\t{r.weight!r}\n")


class BipartiteGraph:
    """Immutable weighted bipartite graph stored as a symmetric CSR index.

    Neighbor lists are sorted by node id and carry the merged edge weight.
    """

    def __init__(self, user_keys: Sequence[str], item_keys: Sequence[str],
                 indptr: np.ndarray, indices: np.ndarray, weights: np.ndarray):
        self.user_keys = list(user_keys)
        self.item_keys = list(item_keys)
        self.n_users = len(self.user_keys)
        self.n_items = len(self.item_keys)
        self.indptr = indptr
        self.indices = indices
        self.weights = weights
        for arr in (indptr, indices, weights):
            arr.setflags(write=False)
        self._user_ids = {k: i for i, k in enumerate(self.user_keys)}
        self._item_ids = {k: self.n_users + i for i, k in enumerate(self.item_keys)}
        self._pattern = None

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_edges(self) -> int:
        """Number of user-item edges (each stored twice in the index)."""
        return len(self.indices) // 2

    def is_user(self, node: int) -> bool:
        return 0 <= node < self.n_users

    def user_id(self, key: str) -> int:
        return self._user_ids[key]

    def item_id(self, key: str) -> int:
        return self._item_ids[key]

    def key_of(self, node: int) -> str:
        self._check(node)
        if node < self.n_users:
            return self.user_keys[node]
        return self.item_keys[node - self.n_users]

    def _check(self, node) -> None:
        if not (0 <= int(node) < self.n_nodes):
            raise IndexError(f"invalid node id {node} (graph has {self.n_nodes} nodes)")

    def neighbors(self, node: int) -> np.ndarray:
        self._check(node)
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def edge_weights(self, node: int) -> np.ndarray:
        self._check(node)
        return self.weights[self.indptr[node]:self.indptr[node + 1]]

    def degree(self, node: int) -> int:
        self._check(node)
        return int(self.indptr[node + 1] - self.indptr[node])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def adjacency(self, weighted: bool = True) -> sp.csr_matrix:
        data = self.weights if weighted else np.ones_like(self.weights)
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.n_nodes, self.n_nodes))

    def bfs_levels(self, root: int, depth: int) -> list[np.ndarray]:
        """Nodes at exact BFS distance 0..depth from ``root``, each level ascending."""
        self._check(root)
        seen = np.zeros(self.n_nodes, dtype=bool)
        seen[root] = True
        frontier = np.array([root], dtype=np.int64)
        levels = [frontier]
        for _ in range(depth):
            if len(frontier):
                spans = [self.indices[self.indptr[v]:self.indptr[v + 1]] for v in frontier]
                cand = np.unique(np.concatenate(spans))
                frontier = cand[~seen[cand]]
                seen[frontier] = True
            levels.append(frontier)
        return levels

    def ring_rows(self, roots: np.ndarray, depth: int) -> list[sp.csr_matrix]:
        """BFS levels 1..depth for many roots at once, one sparse row per root.

        Row ``r`` of the ``k``-th matrix has its nonzeros exactly at the k-hop
        ring of ``roots[r]``, column indices ascending.
        """
        roots = np.asarray(roots, dtype=np.int64)
        n, R = self.n_nodes, len(roots)
        if self._pattern is None:
            self._pattern = self.adjacency(weighted=False)
        # (row, node) pairs encoded as row * n + node; each level is sorted
        row_base = np.arange(R, dtype=np.int64) * n
        levels = [row_base + roots]
        frontier = sp.csr_matrix((np.ones(R), roots, np.arange(R + 1)), shape=(R, n))
        rings = []
        for _ in range(depth):
            prod = frontier @ self._pattern
            prod.sort_indices()
            keys = np.repeat(row_base, np.diff(prod.indptr)) + prod.indices
            for prev in levels[-2:]:
                # bipartite: a ring can only collide with the two rings before it
                pos = np.minimum(np.searchsorted(prev, keys), len(prev) - 1)
                keys = keys[prev[pos] != keys]
            levels.append(keys)
            indptr = np.searchsorted(keys, np.arange(R + 1, dtype=np.int64) * n)
            frontier = sp.csr_matrix((np.ones(len(keys)), keys - np.repeat(row_base, np.diff(indptr)),
                                      indptr), shape=(R, n))
            rings.append(frontier)
        return rings

    def neighbor_set(self, root: int, order: int) -> np.ndarray:
        """Exact k-hop ring of ``root``: lower rings and the root itself are excluded."""
        if order < 0:
            raise ValueError("order must be >= 0")
        return self.bfs_levels(root, order)[order]

    def interaction_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(user, item) node id arrays for every edge, user-major order."""
        users = np.repeat(np.arange(self.n_users), np.diff(self.indptr[:self.n_users + 1]))
        items = self.indices[:self.indptr[self.n_users]]
        return users, items


def ingest_interactions(records: Iterable[InteractionRecord],
                        universe: Iterable[InteractionRecord] | None = None) -> BipartiteGraph:
    """Build the graph from interaction records, summing duplicate pairs.

    ``universe`` optionally registers extra user/item keys (in first-appearance
    order, before those of ``records``) without adding their edges, so that
    graphs built from different splits share one id space.
    """
    user_keys: dict[str, None] = {}
    item_keys: dict[str, None] = {}
    if universe is not None:
        for r in universe:
            user_keys.setdefault(r.user)
            item_keys.setdefault(r.item)
    merged: dict[tuple[str, str], float] = {}
    count = 0
    for n, r in enumerate(records, start=1):
        if not r.user or not r.item:
            raise InputError("missing user or item key", n)
        if not (r.weight > 0 and math.isfinite(r.weight)):
            raise InputError(f"weight must be positive, got {r.weight}", n)
        user_keys.setdefault(r.user)
        item_keys.setdefault(r.item)
        pair = (r.user, r.item)
        merged[pair] = merged.get(pair, 0.0) + float(r.weight)
        count += 1
    if count == 0:
        raise InputError("no interactions")

    users = list(user_keys)
    items = list(item_keys)
    n_users = len(users)
    uid = {k: i for i, k in enumerate(users)}
    iid = {k: n_users + i for i, k in enumerate(items)}
    n = n_users + len(items)

    src = np.fromiter((uid[u] for u, _ in merged), dtype=np.int64, count=len(merged))
    dst = np.fromiter((iid[i] for _, i in merged), dtype=np.int64, count=len(merged))
    w = np.fromiter(merged.values(), dtype=np.float64, count=len(merged))
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    ws = np.concatenate([w, w])
    order = np.lexsort((cols, rows))
    rows, cols, ws = rows[order], cols[order], ws[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return BipartiteGraph(users, items, indptr, cols, ws)


def split_dataset(records: Sequence[InteractionRecord], ratios=DEFAULT_SPLIT, seed: int = 0):
    """Uniform random partition of records into (embedding, model, test) parts.

    Each part keeps the input order of its records.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three nonnegative values summing to 1, got {ratios}")
    n = len(records)
    perm = np.random.default_rng(seed).permutation(n)
    n_embed = int(round(n * ratios[0]))
    n_model = min(int(round(n * ratios[1])), n - n_embed)
    cuts = (np.sort(perm[:n_embed]), np.sort(perm[n_embed:n_embed + n_model]),
            np.sort(perm[n_embed + n_model:]))
    return tuple([records[i] for i in idx] for idx in cuts)


SPLIT_FILES = ("embed.tsv", "model.tsv", "test.tsv")


def write_split(out_dir, parts, ratios, seed: int) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, parts):
        write_interactions(out / name, part)
    manifest = {"seed": seed, "ratios": list(ratios),
                "sizes": {name: len(part) for name, part in zip(SPLIT_FILES, parts)}}
    (out / "split.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_split(split_dir):
    d = Path(split_dir)
    return tuple(read_interactions(d / name) for name in SPLIT_FILES)
