"""One-shot flattened layer aggregation and its binary persistence.

For every node ``u`` and hop ``k`` the representation ``h_u^k`` is the mean
embedding of the neighbors a sampler selected from the k-hop ring of ``u``;
``h_u^0`` is the node's own embedding. Nothing here has trainable
parameters, so the whole table is computed once before training.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import (BadMagicError, FormatError, ShapeMismatchError, TruncatedFileError,
                     VersionMismatchError)
from .graph import BipartiteGraph

log = logging.getLogger(__name__)

REPR_MAGIC = b"FLTR"
REPR_VERSION = 1
_HEADER = struct.Struct("<4sIQII")  # magic, version, n_nodes, dim, K
CHUNK = 64


@dataclass(eq=False)
class LayerRepresentations:
    """``values[node, k]`` holds ``h^k`` (float32); ``empty[node, k]`` marks empty rings."""

    values: np.ndarray
    empty: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def K(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other):
        return (isinstance(other, LayerRepresentations)
                and self.values.dtype == other.values.dtype
                and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes()
                and np.array_equal(self.empty, other.empty))


def segment_means(emb: EmbeddingMatrix, indptr, ids):
    """Mean embedding per CSR segment of node ids, summed in ascending id order.

    Returns float32 means and a flag per segment that is set when the segment
    is empty (its mean is then the zero vector).
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    counts = np.diff(indptr)
    seg = np.repeat(np.arange(len(counts)), counts)
    ids = ids[np.lexsort((ids, seg))]
    out = np.zeros((len(counts), emb.dim), dtype=np.float32)
    full = counts > 0
    if full.any():
        sums = np.add.reduceat(emb.as64.take(ids, axis=0), indptr[:-1][full], axis=0)
        out[full] = (sums / counts[full][:, None]).astype(np.float32)
    return out, ~full


def aggregate_layer(selected, emb: EmbeddingMatrix):
    """Mean of the selected neighbors' embeddings, as ``(vector, is_empty)``."""
    selected = np.asarray(selected, dtype=np.int64)
    vals, empty = segment_means(emb, [0, len(selected)], selected)
    return vals[0], bool(empty[0])


def node_layers(node: int, graph: BipartiteGraph, emb: EmbeddingMatrix, sampler,
                budgets: Sequence[int], K: int):
    """All ``K+1`` layer vectors of a single node, without chunking."""
    out = np.empty((K + 1, emb.dim), dtype=np.float32)
    empty = np.zeros(K + 1, dtype=bool)
    out[0] = emb.values[node]
    for k in range(1, K + 1):
        ids, _ = sampler.select(node, k, budgets[k - 1])
        out[k], empty[k] = aggregate_layer(ids, emb)
    return out, empty


_STATE = None


def _run_chunk(bounds):
    graph, emb, sampler, budgets, K = _STATE
    start, stop = bounds
    roots = np.arange(start, stop)
    vals = np.empty((len(roots), K + 1, emb.dim), dtype=np.float32)
    flags = np.zeros((len(roots), K + 1), dtype=bool)
    vals[:, 0] = emb.values[start:stop]
    try:
        rings = graph.ring_rows(roots, K)
        for k in range(1, K + 1):
            indptr, ids, _ = sampler.select_rings(roots, k, budgets[k - 1], rings[k - 1])
            vals[:, k], flags[:, k] = segment_means(emb, indptr, ids)
    except Exception as exc:
        raise RuntimeError(f"sampling failed for nodes {start}..{stop - 1}: {exc}") from exc
    return vals, flags


def precompute_all(graph: BipartiteGraph, emb: EmbeddingMatrix, sampler, budgets: Sequence[int],
                   K: int, workers: int = 1) -> LayerRepresentations:
    """Layer representations for every node.

    Nodes are processed in fixed chunks; with ``workers > 1`` the chunks are
    spread over forked processes. Each node's output depends only on the
    read-only inputs, so the result is identical for any worker count.
    """
    global _STATE
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    budgets = [int(b) for b in budgets]
    if len(budgets) != K or min(budgets) < 1:
        raise ValueError(f"need {K} budgets >= 1, got {budgets}")
    if emb.n_rows != graph.n_nodes:
        raise ValueError(f"embedding rows ({emb.n_rows}) != graph nodes ({graph.n_nodes})")
    n = graph.n_nodes
    chunks = [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]
    _STATE = (graph, emb, sampler, budgets, K)
    try:
        if workers <= 1 or len(chunks) == 1:
            parts = [_run_chunk(c) for c in chunks]
        else:
            with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as pool:
                parts = list(pool.map(_run_chunk, chunks))
    finally:
        _STATE = None
    values = np.concatenate([p[0] for p in parts])
    empty = np.concatenate([p[1] for p in parts])
    log.info("precomputed %d nodes x %d layers (%d empty rings)", n, K + 1, int(empty.sum()))
    return LayerRepresentations(values, empty)


def save_reprs(reprs: LayerRepresentations, path) -> None:
    n, layers, dim = reprs.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(REPR_MAGIC, REPR_VERSION, n, dim, layers - 1))
        fh.write(np.ascontiguousarray(reprs.values, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(reprs.empty, dtype=np.uint8).tobytes())


def load_reprs(path, expected_k: int | None = None) -> LayerRepresentations:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != REPR_MAGIC:
        raise BadMagicError(f"{path}: not a layer representation file")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, n, dim, K = _HEADER.unpack_from(blob)
    if version != REPR_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {REPR_VERSION}")
    n_vals = n * (K + 1) * dim
    expected = _HEADER.size + 4 * n_vals + n * (K + 1)
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} trailing bytes")
    if expected_k is not None and K != expected_k:
        raise ShapeMismatchError(f"{path}: file has K={K}, configuration expects K={expected_k}")
    off = _HEADER.size
    values = np.frombuffer(blob, dtype="<f4", count=n_vals, offset=off)
    values = values.astype(np.float32).reshape(n, K + 1, dim)
    flags = np.frombuffer(blob, dtype=np.uint8, count=n * (K + 1), offset=off + 4 * n_vals)
    return LayerRepresentations(values, flags.astype(bool).reshape(n, K + 1))
