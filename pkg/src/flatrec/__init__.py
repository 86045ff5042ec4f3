"""Flattened graph-convolution recommender toolkit.

Neighbors are sampled and averaged once per hop before training; a small
MLP over cross-layer inner products then scores user-item pairs without ever
touching the graph again.
"""

__version__ = "0.1.0"

from .aggregate import LayerRepresentations, load_reprs, precompute_all, save_reprs
from .embeddings import EmbeddingMatrix, load_embeddings, pretrain_bpr, save_embeddings
from .evaluate import EvalReport, full_rank_evaluate, rank_metrics
from .graph import BipartiteGraph, InteractionRecord, ingest_interactions, split_dataset
from .model import TrainConfig, cross_features, gradient_check, load_model, save_model, train
from .pipeline import bench_samplers
from .sampling import (InfomaxSampler, IntuitiveSampler, RandomWalkSampler, exact_info_score,
                       infomax_score, make_sampler, select_topk)

__all__ = [
    "BipartiteGraph", "EmbeddingMatrix", "EvalReport", "InfomaxSampler", "InteractionRecord",
    "IntuitiveSampler", "LayerRepresentations", "RandomWalkSampler", "TrainConfig",
    "bench_samplers", "cross_features", "exact_info_score", "full_rank_evaluate",
    "gradient_check", "infomax_score", "ingest_interactions", "load_embeddings", "load_model",
    "load_reprs", "make_sampler", "precompute_all", "pretrain_bpr", "rank_metrics",
    "save_embeddings", "save_model", "save_reprs", "select_topk", "split_dataset", "train",
]
