"""
Reporter Module for SMELL

Turns training logs, fold results, benchmark summaries, sweeps and risk
reports into plot-ready CSV/JSON artifacts, and closes every output directory
with exactly one manifest.json.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : ReporterModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <Frames>       → pandas tables for every result type                     │
  │  <RunWriter>    → single writer per output directory                      │
  │  <RunManifest>  → command, config, fingerprints, seed, version, outputs   │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <pandas>      ← from library (CSV writing)                               │
  │  <pydantic>    ← from library (RunManifest contract)                      │
  │  <json>        ← Standard lib                                             │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : dict, str, "manifest.json"

Production Rules:
  ReporterModule  → imports + <Frames> + <RunWriter> + <RunManifest>
═══════════════════════════════════════════════════════════════════════════════
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel, Field

from core import __version__
from core.kernel import MarkerSet
from modules.evaluation import BenchmarkSummary, MarkerSweepRow, MethodScore, SweepRow
from modules.theory import ConsistencyReport
from modules.trainer import TrainedModel

logger = logging.getLogger(__name__)

# Pattern: Builder
# Purpose: Accumulates artifacts for one run directory and seals them with a manifest.

MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = lambda x: repr(float(x))  # noqa: E731 - plain repr under NumPy 2


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any]
    dataset_fingerprints: Dict[str, str] = Field(default_factory=dict)
    seed: int
    tool_version: str = __version__
    outputs: List[str] = Field(default_factory=list)


def training_log_frame(model: TrainedModel) -> pd.DataFrame:
    """One row per joint step: step, epoch, h_c, r_r_term, r_d_term, total."""
    return pd.DataFrame(
        [
            {"step": r.step, "epoch": r.epoch, "h_c": r.loss.h_c, "r_r_term": r.loss.r_r_term,
             "r_d_term": r.loss.r_d_term, "total": r.loss.total}
            for r in model.log
        ],
        columns=["step", "epoch", "h_c", "r_r_term", "r_d_term", "total"],
    )


def pretrain_log_frame(model: TrainedModel) -> pd.DataFrame:
    return pd.DataFrame({"epoch": range(1, len(model.pretrain_log) + 1), "mse": model.pretrain_log})


def fold_results_frame(scores: Sequence[MethodScore]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"dataset": s.dataset, "method": s.method, "fold": f.fold, "accuracy": f.accuracy}
            for s in scores
            for f in s.folds
        ],
        columns=["dataset", "method", "fold", "accuracy"],
    )


def method_scores_frame(scores: Sequence[MethodScore]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"dataset": s.dataset, "method": s.method, "mean_accuracy": s.mean_accuracy,
          "std_accuracy": s.std_accuracy} for s in scores],
        columns=["dataset", "method", "mean_accuracy", "std_accuracy"],
    )


def summary_frame(summary: BenchmarkSummary) -> pd.DataFrame:
    return pd.DataFrame(
        [a.model_dump() for a in summary.aggregates],
        columns=["method", "accuracy_avg", "ranking_avg", "diff_avg", "firsts"],
    )


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in rows], columns=["latent_dim", "mean_accuracy", "std_accuracy"])


def marker_sweep_frame(rows: Sequence[MarkerSweepRow]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in rows], columns=["k_pos", "k_neg", "mean_accuracy", "std_accuracy"])


def risk_frame(report: ConsistencyReport) -> pd.DataFrame:
    return pd.DataFrame(
        [r.model_dump() for r in report.rows],
        columns=["d_plus", "d_minus", "closed_form", "numerical", "abs_diff", "error_estimate", "flag"],
    )


def markers_payload(markers: MarkerSet) -> Dict[str, Any]:
    return {
        "k": markers.k,
        "w": markers.w,
        "markers": [{"group": "+", "coords": mu.tolist()} for mu in markers.positive]
        + [{"group": "-", "coords": mu.tolist()} for mu in markers.negative],
    }


class RunWriter:
    """Every file of one output directory goes through here; the manifest is written last."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: List[str] = []
        self.sealed = False

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _record(self, name: str) -> Path:
        if self.sealed:
            raise RuntimeError(f"{self.out_dir} already has a manifest; cannot add {name}")
        if name not in self.outputs:
            self.outputs.append(name)
        return self.path(name)

    def write_frame(self, name: str, frame: pd.DataFrame, header: bool = True) -> Path:
        target = self._record(name)
        frame.to_csv(target, index=False, header=header, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.info("wrote %s (%d rows)", target, len(frame))
        return target

    def write_json(self, name: str, payload: Any) -> Path:
        target = self._record(name)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info("wrote %s", target)
        return target

    def register(self, name: str) -> Path:
        """Claims a file written by another component (checkpoints, dataset CSVs)."""
        return self._record(name)

    def finalize(
        self,
        command: str,
        config: Optional[BaseModel],
        seed: int,
        dataset_fingerprints: Optional[Dict[str, str]] = None,
    ) -> RunManifest:
        manifest = RunManifest(
            command=command,
            config=config.model_dump(mode="json") if config is not None else {},
            dataset_fingerprints=dict(sorted((dataset_fingerprints or {}).items())),
            seed=seed,
            outputs=sorted(self.outputs),
        )
        save_manifest(manifest, self.path(MANIFEST_NAME))
        self.sealed = True
        return manifest


def save_manifest(manifest: RunManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))
        f.write("\n")
    logger.info("manifest saved: %s", path)
    return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    with open(path, "r", encoding="utf-8") as f:
        return RunManifest.model_validate_json(f.read())
