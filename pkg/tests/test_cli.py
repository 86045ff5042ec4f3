import csv
import json
import subprocess
import sys

import pytest

from flatrec.cli import git_blob_hash, main

FAST = ["--set", "pretrain.epochs=3", "--set", "train.epochs=4", "--set", "walk.count=50"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "inter.tsv"
    assert main(["synth", str(path), "--users", "120", "--items", "90", "--per-user", "8"]) == 0
    return path


def pipeline(capsys, data, workdir, *extra):
    for stage in ("split", "pretrain", "precompute", "train", "evaluate"):
        code, out, err = run(capsys, stage, "--interactions", data, "--workdir", workdir, *FAST,
                             *extra)
        assert code == 0, err
    return out


class TestPipeline:
    def test_stages_produce_report(self, capsys, data, tmp_path):
        out = pipeline(capsys, data, tmp_path / "w")
        assert "REC@20" in out
        with open(tmp_path / "w" / "report.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["k", "users", "skipped", "precision", "recall", "ndcg"]
        assert rows[0]["k"] == "20"
        for name in ("embeddings.emb", "reprs.fltr", "model.fltm", "history.csv",
                     "per_user.csv", "split/embed.tsv", "split/split.json"):
            assert (tmp_path / "w" / name).is_file()

    def test_rerun_is_byte_identical(self, capsys, data, tmp_path):
        pipeline(capsys, data, tmp_path / "a")
        pipeline(capsys, data, tmp_path / "b")
        names = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                       if p.is_file())
        for name in names:
            a, b = tmp_path / "a" / name, tmp_path / "b" / name
            if name.name.endswith(".manifest.json"):
                ma, mb = json.loads(a.read_text()), json.loads(b.read_text())
                for m in (ma, mb):
                    m.pop("wall_seconds")
                    m["config"].pop("paths.workdir")
                assert ma == mb, name
            else:
                assert a.read_bytes() == b.read_bytes(), name

    def test_manifest_records_merged_config(self, capsys, data, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 3\nbudget.k1 = 4\n")
        code, _, err = run(capsys, "split", "--config", cfg, "--interactions", data,
                           "--workdir", tmp_path / "w", "--seed", 8, "--k", 3)
        assert code == 0, err
        m = json.loads((tmp_path / "w" / "split.manifest.json").read_text())
        assert m["seed"] == 8 and m["config"]["graph.k"] == 3
        assert m["config"]["budget.k1"] == 4 and m["config"]["budget.k3"] == 25
        assert m["inputs"]["interactions"] == git_blob_hash(data)
        assert set(m["outputs"]) == {"split/embed.tsv", "split/model.tsv", "split/test.tsv",
                                     "split/split.json"}
        assert m["wall_seconds"] >= 0

    def test_workers_do_not_change_reprs(self, capsys, data, tmp_path):
        pipeline(capsys, data, tmp_path / "a")
        code, _, err = run(capsys, "precompute", "--workdir", tmp_path / "a", "--workers", 3,
                           "--set", "paths.reprs=" + str(tmp_path / "r3.fltr"), *FAST)
        assert code == 0, err
        assert (tmp_path / "r3.fltr").read_bytes() == (tmp_path / "a" / "reprs.fltr").read_bytes()

    def test_git_blob_hash(self, tmp_path):
        (tmp_path / "f").write_bytes(b"hello\n")
        # value printed by `git hash-object` for the same content
        assert git_blob_hash(tmp_path / "f") == "ce013625030ba8dba906f756967f9e9ca394464a"


class TestErrors:
    def test_train_without_reprs(self, capsys, data, tmp_path):
        run(capsys, "split", "--interactions", data, "--workdir", tmp_path)
        code, out, err = run(capsys, "train", "--workdir", tmp_path)
        assert code == 3 and out == ""
        assert err == "flatrec: error: stage dependency missing: reprs.fltr\n"

    def test_missing_split(self, capsys, tmp_path):
        code, _, err = run(capsys, "pretrain", "--workdir", tmp_path)
        assert code != 0 and "stage dependency missing: split/embed.tsv" in err

    def test_config_violation_names_key(self, capsys, tmp_path):
        code, _, err = run(capsys, "split", "--workdir", tmp_path, "--set", "graph.k=0")
        assert code == 2 and "graph.k" in err and err.count("\n") == 1

    def test_flag_violation(self, capsys, tmp_path):
        code, _, err = run(capsys, "split", "--workdir", tmp_path, "--workers", 0)
        assert code == 2 and "workers" in err

    def test_interactions_required(self, capsys, tmp_path):
        code, _, err = run(capsys, "split", "--workdir", tmp_path)
        assert code == 2 and "paths.interactions" in err

    def test_k_mismatch_between_stages(self, capsys, data, tmp_path):
        pipeline(capsys, data, tmp_path)
        code, _, err = run(capsys, "train", "--workdir", tmp_path, "--k", 3, *FAST)
        assert code == 1 and "K=2" in err

    def test_bad_input_line(self, capsys, tmp_path):
        (tmp_path / "bad.tsv").write_text("u1\ti1\nu2\n")
        code, _, err = run(capsys, "split", "--interactions", tmp_path / "bad.tsv",
                           "--workdir", tmp_path)
        assert code == 1 and "line 2" in err


def test_bench_three_samplers(capsys, data, tmp_path):
    code, out, err = run(capsys, "bench", "--interactions", data, "--workdir", tmp_path, *FAST,
                         "--set", "bench.seeds=0 1")
    assert code == 0, err
    with open(tmp_path / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["sampler"] for r in rows] == ["infomax", "intuitive", "random"]
    for col in ("recall_mean", "recall_std", "precompute_seconds", "train_seconds",
                "evaluate_seconds"):
        assert col in rows[0]
    assert "infomax" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "flatrec.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("flatrec ")
