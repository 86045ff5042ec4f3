import pytest

from flatrec.graph import split_dataset
from flatrec.model import TrainConfig
from flatrec.pipeline import (PretrainSettings, SamplerSettings, bench_csv, bench_samplers,
                              build_dataset)
from flatrec.synthetic import planted_blocks

SMALL = planted_blocks(150, 120, per_user=10, seed=4)
QUICK = dict(pretrain=PretrainSettings(dim=16, epochs=5), train_cfg=TrainConfig(epochs=5))


def test_dataset_graph_excludes_test_edges():
    parts = split_dataset(SMALL, seed=1)
    ds = build_dataset(*parts)
    assert ds.graph.n_edges == len({(r.user, r.item) for r in [*parts[0], *parts[1]]})
    keys = {r.user for r in SMALL}
    assert set(ds.graph.user_keys) == keys
    codes = set(ds.known_codes.tolist())
    for u, i in zip(*ds.model):
        assert u * ds.graph.n_nodes + i in codes


def test_identical_samplers_give_identical_rows():
    rows = bench_samplers(SMALL, [SamplerSettings(budgets=(5, 5))] * 2, [0], **QUICK)
    assert rows[0].metrics == rows[1].metrics


def test_bench_table():
    samplers = [SamplerSettings(name=n, budgets=(5, 5), walks=40) for n in
                ("infomax", "intuitive", "random")]
    rows = bench_samplers(SMALL, samplers, [0, 1], **QUICK)
    text = bench_csv(rows).splitlines()
    assert text[0].startswith("sampler,seeds,precision_mean,precision_std,recall_mean")
    assert len(text) == 4 and text[1].startswith("infomax,0 1,")
    for r in rows:
        assert len(r.metrics["recall"]) == 2 and r.std("recall") >= 0
        assert all(0 <= v <= 1 for v in r.metrics["ndcg"])


def test_bench_needs_two_configs():
    with pytest.raises(ValueError, match="two"):
        bench_samplers(SMALL, [SamplerSettings()], [0], **QUICK)


def test_errors_carry_sampler_context():
    bad = SamplerSettings(name="random", walk_len=1)
    with pytest.raises(RuntimeError, match="sampler random"):
        bench_samplers(SMALL, [SamplerSettings(budgets=(5, 5)), bad], [0], **QUICK)
