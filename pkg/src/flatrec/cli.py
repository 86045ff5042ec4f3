"""``flatrec`` command line: one subcommand per pipeline stage.

Every stage reads its inputs from the work directory (or explicit paths),
writes its artifacts there and records a ``<stage>.manifest.json`` with the
effective configuration, input and output content hashes and wall time.
Errors print a single ``flatrec: error: ...`` line and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .aggregate import load_reprs, save_reprs
from .config import PipelineConfig, parse_assignment
from .embeddings import load_embeddings, save_embeddings
from .errors import ConfigError, FlatRecError, StageDependencyError
from .graph import SPLIT_FILES, read_interactions, read_split, split_dataset, write_interactions, write_split
from .model import TrainConfig, load_model, save_model
from .pipeline import (METRICS, STAGES, PretrainSettings, SamplerSettings, bench_csv, bench_samplers,
                       build_dataset, run_evaluate, run_precompute, run_pretrain, run_train)
from .synthetic import planted_blocks

log = logging.getLogger("flatrec")

LABELS = {"precision": "PRE", "recall": "REC", "ndcg": "NDCG"}

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3


def git_blob_hash(path) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Stage:
    """Resolves artifact paths and writes the run manifest for one command."""

    def __init__(self, name: str, cfg: PipelineConfig):
        self.name = name
        self.cfg = cfg
        self.workdir = Path(cfg["paths.workdir"])
        self.inputs: dict[str, Path] = {}
        self.outputs: dict[str, Path] = {}
        self.t0 = time.perf_counter()

    def path(self, name: str, key: str | None = None) -> Path:
        if key is not None and self.cfg[key]:
            return Path(self.cfg[key])
        return self.workdir / name

    def need(self, name: str, path: Path) -> Path:
        if not path.is_file():
            raise StageDependencyError(name)
        self.inputs[name] = path
        return path

    def need_split(self):
        for name in SPLIT_FILES:
            self.need(f"split/{name}", self.workdir / "split" / name)
        return read_split(self.workdir / "split")

    def output(self, name: str, path: Path | None = None) -> Path:
        path = self.workdir / name if path is None else path
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs[name] = path
        return path

    def finish(self, **extra) -> dict:
        manifest = {
            "stage": self.name,
            "version": __version__,
            "seed": self.cfg["seed"],
            "config": self.cfg.effective(),
            "inputs": {k: git_blob_hash(p) for k, p in sorted(self.inputs.items())},
            "outputs": {k: git_blob_hash(p) for k, p in sorted(self.outputs.items())},
            "wall_seconds": round(time.perf_counter() - self.t0, 4),
            **extra,
        }
        self.workdir.mkdir(parents=True, exist_ok=True)
        (self.workdir / f"{self.name}.manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _pretrain_settings(cfg: PipelineConfig) -> PretrainSettings:
    return PretrainSettings(dim=cfg["pretrain.dim"], epochs=cfg["pretrain.epochs"],
                            lr=cfg["pretrain.lr"], reg=cfg["pretrain.reg"],
                            batch_size=cfg["pretrain.batch_size"])


def _sampler_settings(cfg: PipelineConfig, name: str | None = None) -> SamplerSettings:
    return SamplerSettings(name=name or cfg["sampler"], K=cfg.K, budgets=cfg.budgets(),
                           walks=cfg["walk.count"], walk_len=cfg["walk.length"])


def _train_config(cfg: PipelineConfig) -> TrainConfig:
    return TrainConfig(lr=cfg["train.lr"], l2=cfg["train.l2"], epochs=cfg["train.epochs"],
                       batch_size=cfg["train.batch_size"], negatives=cfg["train.negatives"],
                       patience=cfg["train.patience"], val_fraction=cfg["train.val_fraction"],
                       seed=cfg["seed"])


def _embeddings_path(st: Stage) -> Path:
    return st.path("embeddings.emb", "paths.embeddings")


def _interactions(st: Stage):
    src = st.cfg["paths.interactions"]
    if not src:
        raise ConfigError("paths.interactions", "required by this command")
    return read_interactions(st.need("interactions", Path(src)))


def cmd_split(cfg: PipelineConfig) -> str:
    st = Stage("split", cfg)
    records = _interactions(st)
    parts = split_dataset(records, cfg["split.ratios"], cfg["seed"])
    write_split(st.workdir / "split", parts, cfg["split.ratios"], cfg["seed"])
    for name in (*SPLIT_FILES, "split.json"):
        st.output(f"split/{name}", st.workdir / "split" / name)
    st.finish()
    return "split " + " ".join(f"{n}={len(p)}" for n, p in zip(SPLIT_FILES, parts))


def cmd_pretrain(cfg: PipelineConfig) -> str:
    st = Stage("pretrain", cfg)
    ds = build_dataset(*st.need_split())
    emb = run_pretrain(ds, _pretrain_settings(cfg), cfg["seed"])
    save_embeddings(st.output("embeddings.emb", _embeddings_path(st)), emb, ds.graph)
    m = st.finish()
    return f"pretrain {emb.n_rows} x {emb.dim} embeddings in {m['wall_seconds']:.2f}s"


def cmd_precompute(cfg: PipelineConfig) -> str:
    st = Stage("precompute", cfg)
    ds = build_dataset(*st.need_split())
    emb = load_embeddings(st.need("embeddings.emb", _embeddings_path(st)), ds.graph)
    reprs = run_precompute(ds, emb, _sampler_settings(cfg), cfg["seed"], cfg["workers"])
    save_reprs(reprs, st.output("reprs.fltr", st.path("reprs.fltr", "paths.reprs")))
    m = st.finish(empty_rings=int(reprs.empty.sum()))
    return (f"precompute {reprs.n_nodes} nodes x {reprs.K + 1} layers "
            f"({cfg['sampler']}) in {m['wall_seconds']:.2f}s")


def cmd_train(cfg: PipelineConfig) -> str:
    st = Stage("train", cfg)
    ds = build_dataset(*st.need_split())
    reprs = load_reprs(st.need("reprs.fltr", st.path("reprs.fltr", "paths.reprs")), cfg.K)
    params, history = run_train(ds, reprs, _train_config(cfg), cfg["train.hidden"])
    save_model(params, st.output("model.fltm", st.path("model.fltm", "paths.model")))
    st.output("history.csv").write_text(history.to_csv())
    m = st.finish(best_epoch=history.best_epoch)
    return (f"train {len(history.rows) - 1} epochs, best epoch {history.best_epoch}, "
            f"in {m['wall_seconds']:.2f}s")


def _report_dir(st: Stage) -> Path:
    return Path(st.cfg["paths.reports"]) if st.cfg["paths.reports"] else st.workdir


def cmd_evaluate(cfg: PipelineConfig) -> str:
    st = Stage("evaluate", cfg)
    ds = build_dataset(*st.need_split())
    reprs = load_reprs(st.need("reprs.fltr", st.path("reprs.fltr", "paths.reprs")), cfg.K)
    params = load_model(st.need("model.fltm", st.path("model.fltm", "paths.model")))
    report = run_evaluate(ds, reprs, params, cfg["eval.k"])
    row = report.as_row()
    head = ["k", "users", "skipped", *METRICS]
    out = _report_dir(st)
    st.output("report.csv", out / "report.csv").write_text(
        ",".join(head) + "\n" + ",".join(repr(row[h]) for h in head) + "\n")
    st.output("per_user.csv", out / "per_user.csv").write_text(report.per_user_csv(ds.graph.key_of))
    st.finish()
    k = cfg["eval.k"]
    return "\n".join([f"{'metric':<10}{'value':>10}",
                      *(f"{LABELS[m] + '@' + str(k):<10}{row[m]:>10.4f}" for m in METRICS),
                      f"{'users':<10}{report.n_users:>10d}"])


def cmd_bench(cfg: PipelineConfig) -> str:
    st = Stage("bench", cfg)
    records = _interactions(st)
    samplers = [_sampler_settings(cfg, name) for name in cfg["bench.samplers"]]
    if len(samplers) < 2:
        raise ConfigError("bench.samplers", "need at least two samplers")
    rows = bench_samplers(records, samplers, cfg["bench.seeds"], _pretrain_settings(cfg),
                          _train_config(cfg), cfg["split.ratios"], cfg["train.hidden"],
                          cfg["eval.k"], cfg["workers"])
    st.output("bench.csv", _report_dir(st) / "bench.csv").write_text(bench_csv(rows))
    st.finish()
    k = cfg["eval.k"]
    lines = [f"{'sampler':<10}" + "".join(f"{LABELS[m] + '@' + str(k):>18}" for m in METRICS)
             + "".join(f"{s + ' s':>14}" for s in STAGES)]
    for r in rows:
        cells = "".join(f"{r.mean(m):>10.4f} ±{r.std(m):.4f}" for m in METRICS)
        times = "".join(f"{sum(r.seconds[s]) / len(r.seeds):>14.3f}" for s in STAGES)
        lines.append(f"{r.sampler:<10}{cells}{times}")
    return "\n".join(lines)


def cmd_synth(cfg: PipelineConfig, args) -> str:
    records = planted_blocks(n_users=args.users, n_items=args.items, per_user=args.per_user,
                             within=args.within, seed=cfg["seed"])
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_interactions(out, records)
    return f"synth {len(records)} interactions -> {out}"


COMMANDS = {
    "split": (cmd_split, "partition interactions into embedding/model/test parts"),
    "pretrain": (cmd_pretrain, "fit BPR embeddings on the embedding part"),
    "precompute": (cmd_precompute, "sample neighbors and build layer representations"),
    "train": (cmd_train, "fit the layer-ensemble scorer on the model part"),
    "evaluate": (cmd_evaluate, "full-rank top-K evaluation on the test part"),
    "bench": (cmd_bench, "compare samplers end to end over several seeds"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides 'seed'")
    common.add_argument("--workers", type=int, help="overrides 'workers'")
    common.add_argument("--k", type=int, help="overrides 'graph.k'")
    common.add_argument("--workdir", help="overrides 'paths.workdir'")
    common.add_argument("--interactions", help="overrides 'paths.interactions'")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="flatrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"flatrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    synth = sub.add_parser("synth", parents=[common], help="write a planted two-block dataset")
    synth.add_argument("output")
    synth.add_argument("--users", type=int, default=1000)
    synth.add_argument("--items", type=int, default=1000)
    synth.add_argument("--per-user", type=int, default=20)
    synth.add_argument("--within", type=float, default=0.9)
    return parser


def resolve_config(args) -> PipelineConfig:
    overrides = dict(parse_assignment(s) for s in args.set)
    flags = {"seed": args.seed, "workers": args.workers, "graph.k": args.k,
             "paths.workdir": args.workdir, "paths.interactions": args.interactions}
    for key, value in flags.items():
        if value is not None:
            overrides[key] = value
    for key in ("seed", "workers", "graph.k"):
        lo = 0 if key == "seed" else 1
        if key in overrides and overrides[key] < lo:
            raise ConfigError(key, f"must be >= {lo}")
    return PipelineConfig.build(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            summary = cmd_synth(cfg, args)
        else:
            summary = COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"flatrec: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageDependencyError as exc:
        print(f"flatrec: error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (FlatRecError, ValueError, OSError) as exc:
        print(f"flatrec: error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_ERROR
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
