"""Stage functions shared by the CLI and the sampler benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .aggregate import LayerRepresentations, precompute_all
from .embeddings import EmbeddingMatrix, mean_embedding, pairs_from_records, pretrain_bpr
from .evaluate import EvalReport, full_rank_evaluate, group_by_user
from .graph import BipartiteGraph, InteractionRecord, ingest_interactions, split_dataset
from .model import (ModelParams, TrainConfig, TrainHistory, default_sizes, init_params,
                    score_items, train)
from .sampling import make_sampler


@dataclass
class Dataset:
    """A three-way split bound to one graph.

    The graph carries only embedding- and model-split edges; test records
    contribute node ids but no edges, so sampling never sees test data.
    """

    graph: BipartiteGraph
    embed: tuple[np.ndarray, np.ndarray]
    model: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    known: dict = field(repr=False)
    known_codes: np.ndarray = field(repr=False)


def build_dataset(embed: Sequence[InteractionRecord], model: Sequence[InteractionRecord],
                  test: Sequence[InteractionRecord]) -> Dataset:
    graph = ingest_interactions([*embed, *model], universe=[*embed, *model, *test])
    e = pairs_from_records(graph, embed)
    m = pairs_from_records(graph, model)
    t = pairs_from_records(graph, test)
    ku = np.concatenate([e[0], m[0]])
    ki = np.concatenate([e[1], m[1]])
    codes = np.unique(ku * graph.n_nodes + ki)
    return Dataset(graph, e, m, t, group_by_user(ku, ki), codes)


@dataclass
class PretrainSettings:
    dim: int = 64
    epochs: int = 40
    lr: float = 0.05
    reg: float = 1e-4
    batch_size: int = 256


@dataclass
class SamplerSettings:
    name: str = "infomax"
    K: int = 2
    budgets: tuple = (25, 25)
    walks: int = 1000
    walk_len: int | None = None


def run_pretrain(ds: Dataset, s: PretrainSettings, seed: int) -> EmbeddingMatrix:
    return pretrain_bpr(ds.graph, *ds.embed, dim=s.dim, epochs=s.epochs, lr=s.lr, reg=s.reg,
                        batch_size=s.batch_size, seed=seed)


def run_precompute(ds: Dataset, emb: EmbeddingMatrix, s: SamplerSettings, seed: int,
                   workers: int = 1) -> LayerRepresentations:
    sampler = make_sampler(s.name, ds.graph, emb, mean_embedding(emb), seed=seed,
                           walks=s.walks, walk_len=s.walk_len)
    return precompute_all(ds.graph, emb, sampler, s.budgets, s.K, workers=workers)


def run_train(ds: Dataset, reprs: LayerRepresentations, cfg: TrainConfig,
              hidden=(64, 32), clock=None) -> tuple[ModelParams, TrainHistory]:
    params = init_params(default_sizes(reprs.K, hidden), seed=cfg.seed)
    return train(params, reprs, *ds.model, ds.known_codes, ds.graph.n_users, cfg, clock=clock)


def run_evaluate(ds: Dataset, reprs: LayerRepresentations, params: ModelParams,
                 cutoff: int = 20) -> EvalReport:
    g = ds.graph
    return full_rank_evaluate(lambda us: score_items(params, reprs, us, g.n_users),
                              *ds.test, ds.known, g.n_users, g.n_items, cutoff)


METRICS = ("precision", "recall", "ndcg")
STAGES = ("precompute", "train", "evaluate")


@dataclass
class BenchRow:
    sampler: str
    seeds: tuple
    metrics: dict  # metric -> per-seed values
    seconds: dict  # stage -> per-seed values

    def mean(self, metric):
        return float(np.mean(self.metrics[metric]))

    def std(self, metric):
        return float(np.std(self.metrics[metric]))


def bench_samplers(records: Sequence[InteractionRecord], samplers: Sequence[SamplerSettings],
                   seeds: Sequence[int], pretrain: PretrainSettings, train_cfg: TrainConfig,
                   ratios=(0.65, 0.15, 0.20), hidden=(64, 32), cutoff: int = 20,
                   workers: int = 1, embeddings: EmbeddingMatrix | None = None) -> list[BenchRow]:
    """Run split, pretrain, precompute, train and evaluate per sampler and seed.

    For a given seed every sampler sees the same split, embeddings, and
    training seed; only the neighbor selection differs.
    """
    if len(samplers) < 2:
        raise ValueError("bench needs at least two sampler configurations")
    rows = [BenchRow(s.name, tuple(seeds), {m: [] for m in METRICS}, {st: [] for st in STAGES})
            for s in samplers]
    for seed in seeds:
        ds = build_dataset(*split_dataset(records, ratios, seed))
        emb = embeddings if embeddings is not None else run_pretrain(ds, pretrain, seed)
        for row, s in zip(rows, samplers):
            try:
                t0 = time.perf_counter()
                reprs = run_precompute(ds, emb, s, seed, workers)
                t1 = time.perf_counter()
                params, _ = run_train(ds, reprs, replace(train_cfg, seed=seed), hidden)
                t2 = time.perf_counter()
                report = run_evaluate(ds, reprs, params, cutoff)
                t3 = time.perf_counter()
            except Exception as exc:
                raise RuntimeError(f"sampler {s.name} (seed {seed}): {exc}") from exc
            for m in METRICS:
                row.metrics[m].append(getattr(report, m))
            for st, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2)):
                row.seconds[st].append(dt)
    return rows


def bench_csv(rows: Sequence[BenchRow]) -> str:
    head = ["sampler", "seeds"]
    for m in METRICS:
        head += [f"{m}_mean", f"{m}_std"]
    head += [f"{st}_seconds" for st in STAGES]
    lines = [",".join(head)]
    for r in rows:
        cells = [r.sampler, " ".join(str(s) for s in r.seeds)]
        for m in METRICS:
            cells += [repr(r.mean(m)), repr(r.std(m))]
        cells += [f"{np.mean(r.seconds[st]):.4f}" for st in STAGES]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
