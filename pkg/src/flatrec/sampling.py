"""Neighbor scoring and top-budget selection over k-hop rings.

Three samplers share one interface, ``select(root, order, budget)`` returning
``(ids, scores)`` ordered by descending score with ties broken by ascending
node id:

* :class:`InfomaxSampler` ranks by the mutual-information criterion
  ``log sigmoid(e_v.e_u) + log(1 - sigmoid(e_v.mean))``;
* :class:`IntuitiveSampler` ranks by weighted path products;
* :class:`RandomWalkSampler` ranks by random-walk visit frequency.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .embeddings import EmbeddingMatrix, mean_embedding
from .graph import BipartiteGraph

SAMPLERS = ("infomax", "intuitive", "random")


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def row_dots(mat: np.ndarray, rows, vec: np.ndarray) -> np.ndarray:
    """``mat[rows] @ vec`` with a per-row reduction.

    BLAS kernels may round a row differently depending on where it sits in the
    batch; einsum's row-wise loop keeps equal rows producing equal scores,
    which the id tie-break relies on.
    """
    return np.einsum("ij,j->i", mat.take(rows, axis=0), vec)


def top_rank(ids: np.ndarray, scores: np.ndarray, budget: int):
    """The ``budget`` highest-scoring ids, ties broken by ascending id."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(ids) != len(scores):
        raise ValueError("ids and scores differ in length")
    by_id = np.argsort(ids, kind="stable")
    _, pos = segment_top_rank(np.array([0, len(ids)]), scores[by_id], budget)
    return ids[by_id[pos]], scores[by_id[pos]]


def segment_top_rank(indptr: np.ndarray, scores: np.ndarray, budget: int):
    """Top-``budget`` selection inside each CSR segment of a flat score array.

    Returns ``(out_indptr, positions)``: flat positions into ``scores`` ordered
    per segment by descending score, ties by ascending position. Callers keep
    ids ascending within segments, so position order is id order.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    indptr = np.asarray(indptr, dtype=np.int64)
    lengths = np.diff(indptr)
    n_seg = len(lengths)
    seg = np.repeat(np.arange(n_seg), lengths)
    keep = np.ones(len(scores), dtype=bool)
    over = lengths > budget
    if over.any():
        # per-segment cutoff score; everything tied with it survives
        rows = np.flatnonzero(over)
        width = int(lengths[rows].max())
        pad = np.full((len(rows), width), np.inf)
        for r, row in enumerate(rows):
            pad[r, :lengths[row]] = -scores[indptr[row]:indptr[row + 1]]
        cut = np.full(n_seg, np.inf)
        cut[rows] = np.partition(pad, budget - 1, axis=1)[:, budget - 1]
        keep = -scores <= cut[seg]
    cand = np.flatnonzero(keep)
    order = cand[np.lexsort((cand, -scores[cand], seg[cand]))]
    counts = np.minimum(lengths, budget)
    out_indptr = np.zeros(n_seg + 1, dtype=np.int64)
    np.cumsum(counts, out=out_indptr[1:])
    seg_o = seg[order]
    first = np.searchsorted(seg_o, np.arange(n_seg))
    rank = np.arange(len(order)) - first[seg_o]
    return out_indptr, order[rank < budget]


def infomax_score(v: int, u: int, emb: EmbeddingMatrix, mean: np.ndarray) -> float:
    """Jensen-simplified informativeness of neighbor ``v`` for root ``u`` (nats)."""
    E = emb.as64
    rows = np.array([v])
    affinity = row_dots(E, rows, E[u])
    spread = row_dots(E, rows, np.asarray(mean, dtype=np.float64))
    return float(-softplus(-affinity)[0] - softplus(spread)[0])


def exact_info_score(v: int, u: int, emb: EmbeddingMatrix) -> float:
    """Mutual-information lower bound averaged over every node; O(N+M) per call."""
    E = emb.as64
    affinity = row_dots(E, np.array([v]), E[u])[0]
    others = E @ E[v]
    return float(-softplus(-affinity) - np.mean(softplus(others)))


class RingSampler:
    """Shared selection logic; subclasses provide ``ring_scores``.

    ``ring_scores(roots, order, ring)`` scores every entry of ``ring``, a CSR
    matrix whose row ``r`` lists the ring members of ``roots[r]`` in
    ascending id order, and returns a flat array aligned with
    ``ring.indices``.
    """

    name = ""

    def __init__(self, graph: BipartiteGraph):
        self.graph = graph

    def ring_scores(self, roots, order, ring) -> np.ndarray:
        raise NotImplementedError

    def _per_root(self, score_fn, roots, ring):
        out = np.empty(len(ring.indices))
        for r, root in enumerate(roots):
            lo, hi = ring.indptr[r], ring.indptr[r + 1]
            if hi > lo:
                out[lo:hi] = score_fn(int(root), ring.indices[lo:hi].astype(np.int64))
        return out

    def select_rings(self, roots, order, budget, ring=None):
        """Picks for many roots as ``(indptr, ids, scores)``, each root in rank order."""
        roots = np.asarray(roots, dtype=np.int64)
        if ring is None:
            ring = self.graph.ring_rows(roots, order)[order - 1]
        scores = self.ring_scores(roots, order, ring)
        indptr, pos = segment_top_rank(ring.indptr, scores, budget)
        return indptr, ring.indices[pos].astype(np.int64), scores[pos]

    def select(self, root, order, budget, members=None):
        """``(ids, scores)`` picked from one root's k-hop ring, or from ``members``."""
        if members is None:
            members = self.graph.neighbor_set(root, order)
        members = np.unique(np.asarray(members, dtype=np.int64))
        ring = sp.csr_matrix((np.ones(len(members), dtype=bool), members, [0, len(members)]),
                             shape=(1, self.graph.n_nodes))
        _, ids, scores = self.select_rings([root], order, budget, ring)
        return ids, scores


class InfomaxSampler(RingSampler):
    name = "infomax"

    def __init__(self, graph: BipartiteGraph, emb: EmbeddingMatrix, mean=None):
        if emb.n_rows != graph.n_nodes:
            raise ValueError(f"embedding rows ({emb.n_rows}) != graph nodes ({graph.n_nodes})")
        super().__init__(graph)
        self.emb = emb
        self.mean = mean_embedding(emb) if mean is None else np.asarray(mean, dtype=np.float64)
        # second term depends on the candidate only
        self._spread = softplus(row_dots(emb.as64, np.arange(graph.n_nodes), self.mean))
        # nodes with identical embeddings share one canonical row, so they
        # receive bitwise-equal affinities and fall back to the id tie-break
        self._uniq, self._canon = np.unique(emb.as64, axis=0, return_inverse=True)
        self._canon = self._canon.reshape(-1)

    def scores(self, root: int, members: np.ndarray) -> np.ndarray:
        E = self.emb.as64
        return -softplus(-row_dots(E, members, E[root])) - self._spread[members]

    def ring_scores(self, roots, order, ring):
        members = ring.indices
        canon = self._canon[members]
        used = np.zeros(len(self._uniq), dtype=bool)
        used[canon] = True
        cols = np.flatnonzero(used)
        slot = np.empty(len(self._uniq), dtype=np.int64)
        slot[cols] = np.arange(len(cols))
        dots = self.emb.as64[roots] @ self._uniq[cols].T
        seg = np.repeat(np.arange(len(roots)), np.diff(ring.indptr))
        affinity = dots[seg, slot[canon]]
        return -softplus(-affinity) - self._spread[members]


class IntuitiveSampler(RingSampler):
    """Edge-weight proximity: direct weight at hop 1, summed path products beyond."""

    name = "intuitive"

    def __init__(self, graph: BipartiteGraph):
        super().__init__(graph)
        self._adj = graph.adjacency(weighted=True)

    def ring_scores(self, roots, order, ring):
        x = sp.csr_matrix((np.ones(len(roots)), (np.arange(len(roots)), roots)),
                          shape=(len(roots), self.graph.n_nodes))
        for _ in range(order):
            x = x @ self._adj
        x.sort_indices()

        def lookup(r, members):
            lo, hi = x.indptr[r], x.indptr[r + 1]
            cols, vals = x.indices[lo:hi], x.data[lo:hi]
            pos = np.searchsorted(cols, members)
            hit = pos < len(cols)
            hit[hit] = cols[pos[hit]] == members[hit]
            out = np.zeros(len(members))
            out[hit] = vals[pos[hit]]
            return out

        row_of = {int(root): r for r, root in enumerate(roots)}
        return self._per_root(lambda root, m: lookup(row_of[root], m), roots, ring)


class RandomWalkSampler(RingSampler):
    """Visit-frequency ranking from uniform random walks started at the root.

    Each (root, order) pair draws from its own generator seeded by
    ``(seed, root, order)``, so results do not depend on call order. Ring
    members never visited score zero and fill remaining slots by id.
    """

    name = "random"

    def __init__(self, graph: BipartiteGraph, walks: int = 1000, walk_len: int | None = None,
                 seed: int = 0):
        if walks < 1:
            raise ValueError("walks must be >= 1")
        super().__init__(graph)
        self.walks = walks
        self.walk_len = walk_len
        self.seed = seed
        self._deg = graph.degrees()

    def visit_frequencies(self, root: int, order: int, members: np.ndarray) -> np.ndarray:
        g = self.graph
        length = 2 * order if self.walk_len is None else self.walk_len
        if length < order:
            raise ValueError(f"walk_len {length} cannot reach hop {order}")
        rng = np.random.default_rng([self.seed, root, order])
        pos = np.full(self.walks, root, dtype=np.int64)
        counts = np.zeros(g.n_nodes, dtype=np.int64)
        for _ in range(length):
            deg = self._deg[pos]
            step = np.floor(rng.random(self.walks) * np.maximum(deg, 1)).astype(np.int64)
            nxt = g.indices[np.minimum(g.indptr[pos] + step, len(g.indices) - 1)]
            pos = np.where(deg > 0, nxt, pos)
            counts += np.bincount(pos, minlength=g.n_nodes)
        c = counts[members].astype(np.float64)
        total = c.sum()
        return c / total if total > 0 else c

    def ring_scores(self, roots, order, ring):
        return self._per_root(lambda r, m: self.visit_frequencies(r, order, m), roots, ring)


def make_sampler(name: str, graph: BipartiteGraph, emb: EmbeddingMatrix | None = None,
                 mean=None, seed: int = 0, walks: int = 1000, walk_len: int | None = None):
    if name == "infomax":
        if emb is None:
            raise ValueError("infomax sampler needs embeddings")
        return InfomaxSampler(graph, emb, mean)
    if name == "intuitive":
        return IntuitiveSampler(graph)
    if name == "random":
        return RandomWalkSampler(graph, walks=walks, walk_len=walk_len, seed=seed)
    raise ValueError(f"unknown sampler {name!r}; expected one of {', '.join(SAMPLERS)}")


def select_topk(u: int, k: int, graph: BipartiteGraph, emb: EmbeddingMatrix, mean,
                budget: int) -> np.ndarray:
    """Ids of the ``budget`` most informative members of the k-hop ring of ``u``."""
    return InfomaxSampler(graph, emb, mean).select(u, k, budget)[0]
