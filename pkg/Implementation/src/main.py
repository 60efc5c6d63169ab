"""
Main Entry Point for SMELL

Command-line facade over the whole pipeline: train, eval, ablate, export,
risk, synth and sweep. Exit codes: 0 success, 1 internal error, 2 user error.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : SmellMain (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <BuildParser>  → subcommands + shared flags                              │
  │  <ResolveRun>   → config layers, datasets, output writer                  │
  │  <Commands>     → cmd_train / cmd_eval / cmd_ablate / cmd_export /        │
  │                   cmd_risk / cmd_synth / cmd_sweep                        │
  │  <ExitPolicy>   → user error → 2, anything else → 1                       │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <config>       ← from core (load_config, load_settings)                  │
  │  <checkpoint>   ← from core (save / load)                                 │
  │  <hasher>       ← from core (dataset fingerprints)                        │
  │  <modules>      ← data_pipeline, trainer, evaluation, exporter, theory,   │
  │                   reporter                                                │
  │  <utils>        ← synth_generator                                         │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : argv, int, "manifest.json"

Production Rules:
  SmellMain       → imports + <BuildParser> + <ResolveRun> + <Commands> + <ExitPolicy>
═══════════════════════════════════════════════════════════════════════════════
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import ValidationError

from core.checkpoint import load_checkpoint, save_checkpoint
from core.config import TrainConfig, load_config, load_settings
from core.exceptions import ConfigError, IntegrityError, SmellError
from core.hasher import fingerprint_file
from modules.data_pipeline import Dataset, load_csv, make_folds, prepare, save_csv
from modules.evaluation import (
    MetricKind,
    evaluate_checkpoint,
    evaluate_methods,
    latent_dim_sweep,
    marker_count_sweep,
    run_ablations,
    summarize,
)
from modules.exporter import export_embeddings
from modules.reporter import (
    RunWriter,
    fold_results_frame,
    marker_sweep_frame,
    markers_payload,
    method_scores_frame,
    pretrain_log_frame,
    risk_frame,
    summary_frame,
    sweep_frame,
    training_log_frame,
)
from modules.theory import RiskInput, default_grid, risk_consistency_report
from modules.trainer import TrainedModel, marker_geometry_check, train
from utils.synth_generator import GENERATORS, SEEDED, generate

logger = logging.getLogger("smell")

# Pattern: Facade
# Purpose: Simplifies the multi-stage learning and evaluation pipeline into one entry point.

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USER = 2

CHECKPOINT_FILE = "model.npz"
DEFAULT_DIMS = "2,8,32,64"
STAGES = ("pretrained", "final")

# CLI flag (dest) → TrainConfig field
OVERRIDE_FLAGS = {
    "seed": "seed",
    "downsample": "downsample_fraction",
    "downsample_above": "downsample_above",
    "latent_dim": "latent_dim",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "pretrain_epochs": "pretrain_epochs",
    "joint_epochs": "joint_epochs",
    "folds": "n_folds",
    "zero_r_r": "zero_r_r",
    "zero_r_d": "zero_r_d",
    "euclidean_eval": "euclidean_eval",
}


# ── Parser ───────────────────────────────────────────────────────────────────

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON file with TrainConfig fields")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $SMELL_LOG_LEVEL or INFO)")
    common.add_argument("--workers", type=int, default=1, help="fold-level worker processes")
    return common


def _data_parser() -> argparse.ArgumentParser:
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, action="append", default=[], help="CSV dataset (repeatable)")
    data.add_argument("--data-dir", type=Path, help="directory of CSV datasets")
    data.add_argument("--label-col", default=None, help="'last' or a zero-based column index")
    data.add_argument("--has-header", action="store_true", default=None)
    data.add_argument("--downsample", type=float, help="stratified fraction kept")
    data.add_argument("--downsample-above", type=int, help="only downsample datasets with more rows")
    return data


def _training_parser() -> argparse.ArgumentParser:
    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--latent-dim", type=int)
    training.add_argument("--batch-size", type=int)
    training.add_argument("--learning-rate", type=float)
    training.add_argument("--pretrain-epochs", type=int)
    training.add_argument("--joint-epochs", type=int)
    training.add_argument("--folds", type=int)
    training.add_argument("--zero-r-r", action="store_true", default=None)
    training.add_argument("--zero-r-d", action="store_true", default=None)
    training.add_argument("--euclidean-eval", action="store_true", default=None)
    return training


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smell", description="Supervised deep metric learning with S-space markers")
    sub = parser.add_subparsers(dest="command", required=True)
    common, data, training = _common_parser(), _data_parser(), _training_parser()

    p = sub.add_parser("train", parents=[common, data, training], help="train one model")
    p.add_argument("--test-fold", type=int, help="hold out this fold (default: train on every row)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common, data, training], help="cross-validated KNN accuracy")
    p.add_argument("--methods", help="comma list of " + ",".join(k.value for k in MetricKind))
    p.add_argument("--checkpoint", type=Path, help="score this trained model on the fold it held out")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", parents=[common, data, training], help="full / r_r=0 / r_d=0 / both=0 / euclidean")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("sweep", parents=[common, data, training], help="accuracy versus latent width or marker split")
    p.add_argument("--dims", help=f"comma list of latent widths (default {DEFAULT_DIMS} unless --markers is given)")
    p.add_argument("--markers", help="comma list of k:w-k marker splits, e.g. 1:1,3:2,5:5")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("export", parents=[common, data], help="latent / S-vector / marker files")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--pca2", action="store_true", help="add a 2-component PCA of the S-vectors")
    p.add_argument("--stage", choices=STAGES, default="final",
                   help="pretrained: encoder and markers before the joint loop; final: after it")
    p.set_defaults(handler=cmd_export)

    p = sub.add_parser("risk", parents=[common], help="closed-form vs numerical misclassification risk")
    p.add_argument("--dplus", type=float)
    p.add_argument("--dminus", type=float)
    p.add_argument("--grid", action="store_true", help="evaluate the {0, 0.5, 1, 2, 5}² grid")
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(handler=cmd_risk)

    p = sub.add_parser("synth", parents=[common], help="write synthetic or bundled datasets")
    p.add_argument("--kind", default="disjoint_regions", choices=sorted(GENERATORS) + ["all"])
    p.add_argument("--rows", type=int, help="row count for the seeded kinds")
    p.add_argument("--separation", type=float, help="disjoint_regions cluster offset in spreads")
    p.add_argument("--noise-dims", type=int, help="disjoint_regions columns of class-free uniform noise")
    p.set_defaults(handler=cmd_synth)
    return parser


# ── Run resolution ───────────────────────────────────────────────────────────

def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    overrides = {field: getattr(args, flag) for flag, field in OVERRIDE_FLAGS.items() if hasattr(args, flag)}
    return load_config(args.config, overrides)


def _label_column(raw: Any):
    if raw is None or str(raw) == "last":
        return "last"
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"--label-col must be 'last' or an integer, got {raw!r}") from e


def _dataset_paths(args: argparse.Namespace) -> List[Path]:
    paths = list(args.data)
    if args.data_dir is not None:
        if not args.data_dir.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {args.data_dir}")
        paths.extend(sorted(args.data_dir.glob("*.csv")))
    if not paths:
        raise ConfigError("no dataset given; use --data or --data-dir")
    return paths


def _load_datasets(args: argparse.Namespace, config: TrainConfig) -> List[Tuple[Dataset, str]]:
    settings = load_settings().get("data", {})
    label_col = _label_column(args.label_col if args.label_col is not None else settings.get("label_col"))
    has_header = args.has_header if args.has_header is not None else bool(settings.get("has_header", False))
    loaded = []
    for path in _dataset_paths(args):
        raw = load_csv(path, label_col, has_header)
        loaded.append((prepare(raw, config), fingerprint_file(path)))
    return loaded


def _writer(args: argparse.Namespace) -> RunWriter:
    if args.out is not None:
        return RunWriter(args.out)
    root = Path(load_settings().get("evaluation", {}).get("output_dir", "data/runs"))
    return RunWriter(root / args.command)


def _fingerprints(datasets: Sequence[Tuple[Dataset, str]]) -> Dict[str, str]:
    return {d.name: digest for d, digest in datasets}


# ── Commands ─────────────────────────────────────────────────────────────────

def cmd_train(args: argparse.Namespace) -> None:
    config = _resolve_config(args)
    datasets = _load_datasets(args, config)
    if len(datasets) != 1:
        raise ConfigError("train takes exactly one dataset")
    dataset, digest = datasets[0]
    plan = make_folds(dataset, config.seed, config.n_folds) if args.test_fold is not None else None
    model = train(dataset, plan, args.test_fold, config, dataset_fingerprint=digest)

    writer = _writer(args)
    save_checkpoint(writer.register(CHECKPOINT_FILE), model.params, model.markers, model.config,
                    pretrained=model.pretrained_params, initial_markers=model.initial_markers,
                    metadata={"dataset": dataset.name, "dataset_fingerprint": digest, "test_fold": args.test_fold})
    writer.write_frame("log.csv", training_log_frame(model))
    writer.write_frame("pretrain_log.csv", pretrain_log_frame(model))
    writer.write_json("markers.json", markers_payload(model.markers))
    writer.write_json("marker_geometry.json", marker_geometry_check(model).model_dump())
    writer.finalize("train", model.config, config.seed, _fingerprints(datasets))
    print(f"trained {dataset.name}: {len(model.log)} joint steps, final J={model.log[-1].loss.total:.6g}"
          if model.log else f"trained {dataset.name}: no joint steps")


def _methods(args: argparse.Namespace, config: TrainConfig) -> List[str]:
    raw = args.methods or ",".join(load_settings().get("evaluation", {}).get("methods", ["smell", "raw_euclidean"]))
    methods = [m.strip() for m in raw.split(",") if m.strip()]
    valid = {k.value for k in MetricKind}
    unknown = [m for m in methods if m not in valid]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; choose from {sorted(valid)}")
    if config.euclidean_eval:
        methods = [MetricKind.SMELL_EUCLIDEAN.value if m == MetricKind.SMELL.value else m for m in methods]
    return list(dict.fromkeys(methods))


def _write_scores(writer: RunWriter, scores) -> None:
    summary = summarize(scores)
    writer.write_frame("folds.csv", fold_results_frame(scores))
    writer.write_frame("scores.csv", method_scores_frame(scores))
    writer.write_frame("summary.csv", summary_frame(summary))
    for row in scores:
        print(f"{row.dataset:>20} {row.method:>22}: {row.mean_accuracy:.4f} ± {row.std_accuracy:.4f}")


def _restore(path: Path) -> TrainedModel:
    contents = load_checkpoint(path)
    meta = contents.metadata
    return TrainedModel(
        contents.params, contents.markers, contents.config,
        pretrained_params=contents.pretrained,
        dataset_fingerprint=meta.get("dataset_fingerprint", ""),
        test_fold=meta.get("test_fold"),
        initial_markers=contents.initial_markers,
    )


def _single_dataset(args: argparse.Namespace, model: TrainedModel) -> Tuple[Dataset, List[Tuple[Dataset, str]]]:
    datasets = _load_datasets(args, model.config)
    if len(datasets) != 1:
        raise ConfigError(f"{args.command} with a checkpoint takes exactly one dataset")
    dataset, digest = datasets[0]
    if model.dataset_fingerprint and digest != model.dataset_fingerprint:
        raise IntegrityError(f"{dataset.name} is not the dataset this checkpoint was trained on")
    return dataset, datasets


def cmd_eval(args: argparse.Namespace) -> None:
    if args.checkpoint is not None:
        _eval_checkpoint(args)
        return
    config = _resolve_config(args)
    datasets = _load_datasets(args, config)
    methods = _methods(args, config)
    scores = []
    for dataset, _ in datasets:
        scores.extend(evaluate_methods(dataset, config, methods, args.workers))
    writer = _writer(args)
    _write_scores(writer, scores)
    writer.finalize("eval", config, config.seed, _fingerprints(datasets))


def _eval_checkpoint(args: argparse.Namespace) -> None:
    model = _restore(args.checkpoint)
    dataset, datasets = _single_dataset(args, model)
    scores = evaluate_checkpoint(dataset, model, _methods(args, model.config))
    writer = _writer(args)
    _write_scores(writer, scores)
    writer.finalize("eval", model.config, model.config.seed, _fingerprints(datasets))


def cmd_ablate(args: argparse.Namespace) -> None:
    config = _resolve_config(args)
    datasets = _load_datasets(args, config)
    scores = []
    for dataset, _ in datasets:
        scores.extend(run_ablations(dataset, config, args.workers))
    writer = _writer(args)
    _write_scores(writer, scores)
    writer.finalize("ablate", config, config.seed, _fingerprints(datasets))


def _marker_splits(raw: str) -> List[Tuple[int, int]]:
    try:
        splits = [tuple(int(x) for x in item.split(":")) for item in raw.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"--markers must look like 1:1,3:2, got {raw!r}") from e
    if not splits or any(len(s) != 2 for s in splits):
        raise ConfigError(f"--markers must look like 1:1,3:2, got {raw!r}")
    return splits


def cmd_sweep(args: argparse.Namespace) -> None:
    config = _resolve_config(args)
    datasets = _load_datasets(args, config)
    raw_dims = args.dims if args.dims is not None else (None if args.markers else DEFAULT_DIMS)
    try:
        dims = [int(d) for d in raw_dims.split(",") if d.strip()] if raw_dims else []
    except ValueError as e:
        raise ConfigError(f"--dims must be a comma list of integers, got {args.dims!r}") from e
    splits = _marker_splits(args.markers) if args.markers else []
    writer = _writer(args)
    for dataset, _ in datasets:
        if dims:
            rows = latent_dim_sweep(dataset, config, dims, args.workers)
            writer.write_frame(f"sweep_{dataset.name}.csv", sweep_frame(rows))
            for row in rows:
                print(f"{dataset.name} n={row.latent_dim}: {row.mean_accuracy:.4f} ± {row.std_accuracy:.4f}")
        if splits:
            marker_rows = marker_count_sweep(dataset, config, splits, args.workers)
            writer.write_frame(f"marker_sweep_{dataset.name}.csv", marker_sweep_frame(marker_rows))
            for row in marker_rows:
                print(f"{dataset.name} k={row.k_pos} w-k={row.k_neg}: "
                      f"{row.mean_accuracy:.4f} ± {row.std_accuracy:.4f}")
    writer.finalize("sweep", config, config.seed, _fingerprints(datasets))


def cmd_export(args: argparse.Namespace) -> None:
    model = _restore(args.checkpoint)
    dataset, datasets = _single_dataset(args, model)
    seed = args.seed if args.seed is not None else model.config.seed
    writer = _writer(args)
    export_embeddings(model.at_stage(args.stage), dataset, writer, with_pca2=args.pca2, seed=seed)
    writer.finalize("export", model.config, seed, _fingerprints(datasets))


def cmd_risk(args: argparse.Namespace) -> None:
    if args.grid:
        grid = default_grid()
    elif args.dplus is not None and args.dminus is not None:
        grid = [RiskInput(d_plus=args.dplus, d_minus=args.dminus)]
    else:
        raise ConfigError("risk needs --dplus and --dminus, or --grid")
    report = risk_consistency_report(grid, args.tol)
    writer = _writer(args)
    writer.write_frame("risk.csv", risk_frame(report))
    writer.finalize("risk", None, args.seed or 0)
    for row in report.rows:
        print(f"D+={row.d_plus:g} D-={row.d_minus:g}: closed={row.closed_form:.10g} "
              f"numerical={row.numerical:.10g} {row.flag}".rstrip())


def cmd_synth(args: argparse.Namespace) -> None:
    seed = args.seed if args.seed is not None else 0
    kinds = sorted(GENERATORS) if args.kind == "all" else [args.kind]
    writer = _writer(args)
    for kind in kinds:
        options = {}
        if args.rows is not None and kind in SEEDED:
            options["n_rows"] = args.rows
        if args.separation is not None and kind == "disjoint_regions":
            options["separation"] = args.separation
        if args.noise_dims is not None and kind == "disjoint_regions":
            if args.noise_dims < 0:
                raise ConfigError(f"--noise-dims must be non-negative, got {args.noise_dims}")
            options["noise_dims"] = args.noise_dims
        dataset = generate(kind, seed, **options)
        save_csv(dataset, writer.register(f"{kind}.csv"))
        print(f"{kind}: {dataset.v} rows, {dataset.m} features, {dataset.n_classes} classes")
    writer.finalize("synth", None, seed)


# ── Entry ────────────────────────────────────────────────────────────────────

def _configure_logging(level: Optional[str]) -> None:
    level = (level or os.environ.get("SMELL_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        args.handler(args)
        return EXIT_OK
    except (FileNotFoundError, ValidationError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except SmellError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER if e.user_error else EXIT_INTERNAL
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
