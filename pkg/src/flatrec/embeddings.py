"""Node feature matrix, its global mean, and a BPR matrix-factorization pretrainer."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import InputError
from .graph import BipartiteGraph

log = logging.getLogger(__name__)

EMB_MAGIC = "flatrec-emb"
EMB_VERSION = "v1"


class EmbeddingMatrix:
    """One 32-bit feature row per node, indexed by unified node id.

    Score arithmetic reads :attr:`as64`, a cached 64-bit copy.
    """

    def __init__(self, values):
        values = np.array(values, dtype=np.float32, copy=True)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ValueError(f"embedding matrix must be non-empty 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding matrix contains non-finite entries")
        values.setflags(write=False)
        self.values = values
        self._as64 = None

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def as64(self) -> np.ndarray:
        if self._as64 is None:
            a = self.values.astype(np.float64)
            a.setflags(write=False)
            self._as64 = a
        return self._as64

    def __eq__(self, other):
        return isinstance(other, EmbeddingMatrix) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"EmbeddingMatrix(n_rows={self.n_rows}, dim={self.dim})"


def mean_embedding(emb: EmbeddingMatrix) -> np.ndarray:
    """Componentwise mean of all rows, in float64."""
    return emb.as64.mean(axis=0)


def save_embeddings(path, emb: EmbeddingMatrix, graph: BipartiteGraph) -> None:
    if emb.n_rows != graph.n_nodes:
        raise ValueError(f"matrix has {emb.n_rows} rows but graph has {graph.n_nodes} nodes")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{EMB_MAGIC} {EMB_VERSION} {emb.n_rows} {emb.dim}\n")
        for node in range(graph.n_nodes):
            row = "\t".join(str(x) for x in emb.values[node])
            fh.write(f"{graph.key_of(node)}\t{row}\n")


def load_embeddings(path, graph: BipartiteGraph) -> EmbeddingMatrix:
    """Read an embedding file and align its rows to the graph's unified ids.

    Keys must identify nodes unambiguously, so a key used both as a user and
    as an item is rejected.
    """
    clash = set(graph.user_keys).intersection(graph.item_keys)
    if clash:
        raise InputError(f"ambiguous key shared by a user and an item: {sorted(clash)[0]}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != EMB_MAGIC or header[1] != EMB_VERSION:
            raise InputError(f"bad embedding header {' '.join(header)!r}", 1)
        try:
            count, dim = int(header[2]), int(header[3])
        except ValueError:
            raise InputError("bad embedding header counts", 1) from None
        if dim <= 0:
            raise InputError(f"embedding dimension must be positive, got {dim}", 1)
        out = np.zeros((graph.n_nodes, dim), dtype=np.float32)
        filled = np.zeros(graph.n_nodes, dtype=bool)
        rows = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            key, *vals = line.split("\t")
            if len(vals) != dim:
                raise InputError(f"dimension mismatch for {key}: expected {dim}, got {len(vals)}", lineno)
            node = _lookup(graph, key)
            if node is None:
                raise InputError(f"unknown node in embedding file: {key}", lineno)
            if filled[node]:
                raise InputError(f"duplicate embedding: {key}", lineno)
            try:
                out[node] = np.array(vals, dtype=np.float32)
            except ValueError:
                raise InputError(f"non-numeric embedding value for {key}", lineno) from None
            filled[node] = True
            rows += 1
    if not filled.all():
        missing = graph.key_of(int(np.flatnonzero(~filled)[0]))
        raise InputError(f"missing embedding: {missing}")
    if rows != count:
        raise InputError(f"header declares {count} rows, file has {rows}")
    return EmbeddingMatrix(out)


def _lookup(graph: BipartiteGraph, key: str):
    try:
        return graph.user_id(key)
    except KeyError:
        pass
    try:
        return graph.item_id(key)
    except KeyError:
        return None


def _bpr_positive_codes(users, items, n_nodes):
    return np.unique(users.astype(np.int64) * n_nodes + items)


def _is_positive(codes, users, items, n_nodes):
    q = users.astype(np.int64) * n_nodes + items
    pos = np.searchsorted(codes, q)
    pos[pos == len(codes)] = 0
    return codes[pos] == q


def sample_negatives(rng, users, codes, n_users, n_nodes, max_tries=100):
    """Uniform item ids per user, redrawn while they hit a known positive."""
    neg = rng.integers(n_users, n_nodes, size=len(users))
    bad = _is_positive(codes, users, neg, n_nodes)
    tries = 0
    while bad.any():
        tries += 1
        if tries > max_tries:
            raise RuntimeError("negative sampling failed: users interacted with (almost) every item")
        neg[bad] = rng.integers(n_users, n_nodes, size=int(bad.sum()))
        bad = _is_positive(codes, users, neg, n_nodes)
    return neg


def bpr_loss(E: np.ndarray, users, pos, neg) -> float:
    x = np.sum(E[users] * (E[pos] - E[neg]), axis=1)
    return float(np.mean(np.logaddexp(0.0, -x)))


def pretrain_bpr(graph: BipartiteGraph, users, items, dim: int = 64, epochs: int = 40,
                 lr: float = 0.05, reg: float = 1e-4, batch_size: int = 256, seed: int = 0,
                 callback: Callable[[int, np.ndarray], None] | None = None) -> EmbeddingMatrix:
    """Train user/item embeddings with the BPR pairwise objective.

    ``users``/``items`` are unified node ids of the observed pairs. Minibatch
    SGD ascends ``log sigmoid(e_u.e_i - e_u.e_j)`` against one uniformly
    sampled unobserved item ``j`` per pair. ``callback(epoch, E)`` is invoked
    after each epoch with the current float64 matrix.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    if epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {epochs}")
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) == 0 or len(users) != len(items):
        raise ValueError("need a non-empty, equal-length set of (user, item) pairs")

    rng = np.random.default_rng(seed)
    n, nu = graph.n_nodes, graph.n_users
    bound = 0.1 / np.sqrt(dim)
    E = rng.uniform(-bound, bound, size=(n, dim))
    codes = _bpr_positive_codes(users, items, n)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(users))
        for start in range(0, len(order), batch_size):
            b = order[start:start + batch_size]
            u, i = users[b], items[b]
            j = sample_negatives(rng, u, codes, nu, n)
            eu, ei, ej = E[u], E[i], E[j]
            g = expit(-np.sum(eu * (ei - ej), axis=1))[:, None]
            np.add.at(E, u, lr * (g * (ei - ej) - reg * eu))
            np.add.at(E, i, lr * (g * eu - reg * ei))
            np.add.at(E, j, lr * (-g * eu - reg * ej))
        if callback is not None:
            callback(epoch, E)
    log.debug("bpr pretraining finished after %d epochs", epochs)
    return EmbeddingMatrix(E)


def pairs_from_records(graph: BipartiteGraph, records):
    """Map interaction records onto (user, item) node id arrays."""
    users = np.fromiter((graph.user_id(r.user) for r in records), dtype=np.int64)
    items = np.fromiter((graph.item_id(r.item) for r in records), dtype=np.int64)
    return users, items
