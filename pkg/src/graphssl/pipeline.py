"""Stage orchestration shared by the CLI and the acceptance harness."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .data import LabeledDataset, gen_clusters, save_embeddings, save_labels
from .distill import TrainArtifacts, run_pretrain
from .evaluation import ProbeReport, knn_eval, make_split, train_linear_probe
from .gnn import RefinedEmbeddings, run_refine
from .neighbors import NeighborConfig

KW_SWEEP = ((1, 15), (2, 8), (3, 5), (4, 5))
LAYER_SWEEP = ("gcn", "gat", "sage", "gin")
JK_SWEEP = ("disabled", "sum", "max", "concat")
ABLATION_HEADER = ("param", "value", "probe_val_acc", "seed")


def synthesize(cfg: PipelineConfig) -> LabeledDataset:
    d = cfg.data
    return gen_clusters(d.n_per_class, d.classes, d.dim, d.spread, cfg.seed)


def split_for(cfg: PipelineConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    return make_split(n, cfg.data.val_fraction, cfg.seed)


def pretrain(cfg: PipelineConfig, features: np.ndarray) -> TrainArtifacts:
    mask = None
    if cfg.pretrain.exclude_validation:
        mask = np.zeros(features.shape[0], dtype=bool)
        mask[split_for(cfg, features.shape[0])[0]] = True
    return run_pretrain(features, cfg.pretrain, candidate_mask=mask)


def refine(cfg: PipelineConfig, artifacts: TrainArtifacts) -> RefinedEmbeddings:
    return run_refine(artifacts, cfg.gnn, cfg.refine)


def probe(cfg: PipelineConfig, features, labels) -> ProbeReport:
    split = split_for(cfg, len(labels))
    return train_linear_probe(features, labels, split, cfg.probe.epochs, cfg.probe.lr)


@dataclass
class PipelineResult:
    dataset: LabeledDataset
    artifacts: TrainArtifacts
    refined: RefinedEmbeddings
    reports: dict[str, ProbeReport]
    knn: dict[str, float]


def run_pipeline(cfg: PipelineConfig, out_dir: str | PathLike | None = None,
                 artifacts: TrainArtifacts | None = None,
                 dataset: LabeledDataset | None = None) -> PipelineResult:
    """synth -> pretrain -> refine -> probe. Writes every stage's files when ``out_dir`` is set."""
    dataset = dataset if dataset is not None else synthesize(cfg)
    artifacts = artifacts if artifacts is not None else pretrain(cfg, dataset.features)
    refined = refine(cfg, artifacts)
    feats = {
        "raw": dataset.features,
        "student": artifacts.student_embeddings,
        "refined": refined.matrix,
    }
    split = split_for(cfg, dataset.n)
    reports = {name: probe(cfg, f, dataset.labels) for name, f in feats.items()}
    k_eval = min(cfg.probe.knn_k, split[0].size)
    knn = {name: knn_eval(f, dataset.labels, split, k_eval) for name, f in feats.items()}
    result = PipelineResult(dataset, artifacts, refined, reports, knn)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_dataset(dataset, out)
        artifacts.save(out)
        write_refined(refined, out)
        write_probe_csv(out / "probe.csv", reports, knn)
    return result


def write_dataset(dataset: LabeledDataset, out: Path) -> None:
    save_embeddings(dataset.features, out / "dataset.gdem")
    save_labels(dataset.labels, dataset.class_count, out / "labels.gdlb")


def write_refined(refined: RefinedEmbeddings, out: Path) -> None:
    save_embeddings(refined.matrix, out / "refined.gdem")
    if refined.teacher_matrix is not None:
        save_embeddings(refined.teacher_matrix, out / "refined_teacher.gdem")
    with open(out / "refine_loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(refined.loss_curve):
            writer.writerow([epoch, repr(float(loss))])


def write_probe_csv(path: Path, reports: dict[str, ProbeReport],
                    knn: dict[str, float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["embedding", "train_acc", "val_acc", "epochs", "final_loss", "knn_acc"])
        for name, r in reports.items():
            k = "" if knn is None or name not in knn else f"{knn[name]:.6f}"
            writer.writerow([name, f"{r.train_accuracy:.6f}", f"{r.val_accuracy:.6f}",
                             r.epochs, f"{r.final_loss:.6f}", k])


def _with_kw(cfg: PipelineConfig, k: int, w: int) -> PipelineConfig:
    neighbor = NeighborConfig(k=k, w=w, e=max(4 * k, k + 1))
    return dataclasses.replace(cfg, pretrain=dataclasses.replace(cfg.pretrain, neighbor=neighbor))


def sweep_configs(cfg: PipelineConfig, sweep: str) -> list[tuple[str, str, PipelineConfig]]:
    """``(param, value, config)`` for every point of a named sweep, in fixed order."""
    if sweep == "kw":
        return [("kw", f"{k}x{w}", _with_kw(cfg, k, w)) for k, w in KW_SWEEP]
    if sweep == "layer":
        return [("layer", kind, dataclasses.replace(cfg, gnn=dataclasses.replace(cfg.gnn, kind=kind)))
                for kind in LAYER_SWEEP]
    if sweep == "jk":
        return [("jk", mode, dataclasses.replace(cfg, gnn=dataclasses.replace(cfg.gnn, jk=mode)))
                for mode in JK_SWEEP]
    raise ValueError(f"unknown sweep {sweep!r}")


def ablate(cfg: PipelineConfig, sweep: str) -> list[tuple[str, str, float, int]]:
    """Refined-embedding probe accuracy at every sweep point.

    Layer and JK sweeps share one pretraining run; the k/w sweep retrains per point.
    """
    dataset = synthesize(cfg)
    shared = None if sweep == "kw" else pretrain(cfg, dataset.features)
    rows = []
    for param, value, point in sweep_configs(cfg, sweep):
        artifacts = shared if shared is not None else pretrain(point, dataset.features)
        refined = refine(point, artifacts)
        report = probe(point, refined.matrix, dataset.labels)
        rows.append((param, value, report.val_accuracy, cfg.seed))
    return rows


def write_ablation_csv(path: str | PathLike, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for param, value, acc, seed in rows:
            writer.writerow([param, value, f"{acc:.6f}", seed])
