"""End-to-end CLI behavior on a tiny configuration."""

import csv
import subprocess
import sys

import numpy as np
import pytest

from graphssl.cli import main
from graphssl.data import save_embeddings

TINY = """
data.n_per_class = 10
data.classes = 3
data.dim = 4
pretrain.epochs = 2
pretrain.hidden = 8
pretrain.embed_dim = 6
pretrain.head_hidden = 8
pretrain.out_dim = 10
pretrain.batch_size = 8
neighbor.w = 3
gnn.depth = 2
gnn.hidden = 4
refine.epochs = 3
probe.epochs = 20
probe.knn_k = 5
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


class TestStages:
    def test_stage_by_stage(self, tmp_path, cfg, capsys):
        out = tmp_path / "run"
        common = ["--config", str(cfg), "--out", str(out), "--quiet"]
        assert main(["synth", *common]) == 0
        assert {"dataset.gdem", "labels.gdlb"} <= set(_files(out))
        assert main(["pretrain", *common]) == 0
        assert {"student_embeddings.gdem", "teacher_graph.gdgr", "student_store.gdns",
                "pretrain_metrics.csv"} <= set(_files(out))
        assert main(["refine", *common]) == 0
        assert "refined.gdem" in _files(out)
        assert main(["probe", *common, "--embeddings", str(out / "refined.gdem"),
                     str(out / "student_embeddings.gdem")]) == 0
        text = capsys.readouterr().out
        assert "refined: train acc" in text and "student_embeddings:" in text
        with open(out / "probe.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["embedding"] for r in rows] == ["refined", "student_embeddings"]

    def test_pipeline_deterministic(self, tmp_path, cfg):
        for name in ("a", "b"):
            assert main(["pipeline", "--config", str(cfg), "--seed", "7",
                         "--out", str(tmp_path / name), "--quiet"]) == 0
        a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
        assert a.keys() == b.keys()
        assert {"refined.gdem", "student_graph.gdgr", "probe.csv", "refine_loss.csv"} <= set(a)
        for name in a:
            assert a[name] == b[name], name

    def test_seed_changes_output(self, tmp_path, cfg):
        for seed in ("1", "2"):
            main(["synth", "--config", str(cfg), "--seed", seed, "--out", str(tmp_path / seed)])
        assert (tmp_path / "1" / "dataset.gdem").read_bytes() != \
            (tmp_path / "2" / "dataset.gdem").read_bytes()

    def test_ablate_jk(self, tmp_path, cfg, capsys):
        assert main(["ablate", "--sweep", "jk", "--config", str(cfg),
                     "--out", str(tmp_path), "--quiet"]) == 0
        with open(tmp_path / "ablate_jk.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["param", "value", "probe_val_acc", "seed"]
        assert [r[1] for r in rows[1:]] == ["disabled", "sum", "max", "concat"]
        assert capsys.readouterr().out.startswith("param,value,probe_val_acc,seed")


class TestExitCodes:
    def test_validation_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("neighbor.k = 4\nneighbor.e = 4\n")
        assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1
        assert "neighbor.k" in capsys.readouterr().err

    def test_parse_error(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("foo.bar = 1\n")
        assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1

    def test_missing_input(self, tmp_path, capsys):
        assert main(["pretrain", "--out", str(tmp_path), "--data", str(tmp_path / "no.gdem")]) == 2
        assert capsys.readouterr().err

    def test_corrupt_input(self, tmp_path, cfg):
        (tmp_path / "labels.gdlb").write_bytes(b"GDLB")
        assert main(["probe", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_row_mismatch(self, tmp_path, cfg):
        out = tmp_path / "run"
        assert main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        save_embeddings(np.ones((4, 2)), out / "short.gdem")
        assert main(["probe", "--config", str(cfg), "--out", str(out),
                     "--embeddings", str(out / "short.gdem")]) == 1

    def test_module_entry_point(self, tmp_path, cfg):
        proc = subprocess.run([sys.executable, "-m", "graphssl.cli", "synth", "--config", str(cfg),
                               "--out", str(tmp_path), "--quiet"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "dataset.gdem").exists()
