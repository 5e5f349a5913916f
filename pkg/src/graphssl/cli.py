"""Command-line entry point: ``graphssl {synth,pretrain,refine,probe,pipeline,ablate}``.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, parse_config
from .data import load_embeddings, load_labels
from .distill import TrainArtifacts
from .errors import FormatError, ValidationFailure
from .evaluation import knn_eval
from . import pipeline

log = logging.getLogger("graphssl")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="section.key = value config file")
    p.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--quiet", action="store_true", help="only errors on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset (GDEM) and labels (GDLB)")
    _add_common(p)

    p = sub.add_parser("pretrain", help="distillation phase: dataset -> embeddings, graphs, stores")
    _add_common(p)
    p.add_argument("--data", type=Path, help="GDEM dataset (default: OUT/dataset.gdem)")

    p = sub.add_parser("refine", help="GNN refinement: pretrain artifacts -> refined GDEM")
    _add_common(p)
    p.add_argument("--artifacts", type=Path, help="pretrain output directory (default: OUT)")

    p = sub.add_parser("probe", help="linear probe on embeddings + labels")
    _add_common(p)
    p.add_argument("--embeddings", type=Path, nargs="+", help="GDEM files (default: OUT/refined.gdem)")
    p.add_argument("--labels", type=Path, help="GDLB labels (default: OUT/labels.gdlb)")

    p = sub.add_parser("pipeline", help="synth -> pretrain -> refine -> probe")
    _add_common(p)

    p = sub.add_parser("ablate", help="sweep k/w, GNN layer kind or JK mode")
    _add_common(p)
    p.add_argument("--sweep", choices=("kw", "layer", "jk"), required=True)
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = parse_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _cmd_synth(cfg, args):
    dataset = pipeline.synthesize(cfg)
    pipeline.write_dataset(dataset, args.out)
    log.info("wrote %d x %d dataset to %s", *dataset.features.shape, args.out)


def _cmd_pretrain(cfg, args):
    features = load_embeddings(args.data or args.out / "dataset.gdem")
    artifacts = pipeline.pretrain(cfg, features)
    artifacts.save(args.out)
    log.info("pretrain done: final loss %.6f", artifacts.loss_curve[-1])


def _cmd_refine(cfg, args):
    artifacts = TrainArtifacts.load(args.artifacts or args.out)
    refined = pipeline.refine(cfg, artifacts)
    pipeline.write_refined(refined, args.out)
    log.info("refine done: final loss %.6f", refined.loss_curve[-1])


def _cmd_probe(cfg, args):
    labels, _ = load_labels(args.labels or args.out / "labels.gdlb")
    paths = args.embeddings or [args.out / "refined.gdem"]
    reports, knn = {}, {}
    split = pipeline.split_for(cfg, len(labels))
    for path in paths:
        feats = load_embeddings(path)
        if feats.shape[0] != len(labels):
            raise ValidationFailure(f"{path}: {feats.shape[0]} rows but {len(labels)} labels")
        name = Path(path).stem
        reports[name] = pipeline.probe(cfg, feats, labels)
        knn[name] = knn_eval(feats, labels, split, min(cfg.probe.knn_k, split[0].size))
    pipeline.write_probe_csv(args.out / "probe.csv", reports, knn)
    for name, r in reports.items():
        print(f"{name}: train acc {r.train_accuracy:.4f}  val acc {r.val_accuracy:.4f}  "
              f"knn acc {knn[name]:.4f}  ({r.epochs} epochs, loss {r.final_loss:.4f})")


def _cmd_pipeline(cfg, args):
    result = pipeline.run_pipeline(cfg, args.out)
    for name, r in result.reports.items():
        print(f"{name}: val acc {r.val_accuracy:.4f}  knn acc {result.knn[name]:.4f}")


def _cmd_ablate(cfg, args):
    rows = pipeline.ablate(cfg, args.sweep)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"ablate_{args.sweep}.csv"
    pipeline.write_ablation_csv(path, rows)
    print(",".join(pipeline.ABLATION_HEADER))
    for param, value, acc, seed in rows:
        print(f"{param},{value},{acc:.6f},{seed}")


COMMANDS = {
    "synth": _cmd_synth,
    "pretrain": _cmd_pretrain,
    "refine": _cmd_refine,
    "probe": _cmd_probe,
    "pipeline": _cmd_pipeline,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
