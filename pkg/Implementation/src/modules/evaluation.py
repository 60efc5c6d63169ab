"""
Evaluation Module for SMELL

KNN classification with the learned metric, stratified k-fold cross
validation, the ablation grid, latent-width and marker-count sweeps, scoring
of a restored checkpoint on its held-out fold and the cross-dataset
aggregation (Accuracy_AVG, Ranking_AVG, Diff_AVG, count of firsts).

Tie rules:
  - KNN: majority label among the k nearest; ties broken by the smallest
    summed neighbor distance, then by the lowest label.
  - Ranking: tied methods share the minimum rank.
  - Firsts: every method tied at the top of a dataset gets the first.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : EvaluationModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <KNN>           → stable argsort, majority vote, tie rules               │
  │  <FoldRun>       → train once, score every requested metric kind          │
  │  <CrossValidate> → fan folds out (optionally to processes), reduce       │
  │  <Ablations>     → full, r_r=0, r_d=0, both=0, euclidean                  │
  │  <Aggregate>     → ranks, diffs, firsts across datasets                   │
  │  <Sweep>         → accuracy versus latent width or marker split           │
  │  <Checkpoint>    → score a restored model on its held-out fold            │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>            ← from library                                        │
  │  <pydantic>         ← from library (result contracts)                     │
  │  <concurrent>       ← Standard lib (ProcessPoolExecutor)                  │
  │  <trainer>          ← from modules (train)                                │
  │  <kernel>           ← from core (SmellMetric, euclidean_distances)        │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : float, int, "smell", "smell_euclidean", "raw_euclidean"

Production Rules:
  EvaluationModule → imports + <KNN> + <FoldRun> + <CrossValidate>
                     + <Ablations> + <Aggregate> + <Sweep> + <Checkpoint>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.config import TrainConfig
from core.exceptions import AggregationError, ConfigError, DatasetError, FoldError, SmellError
from core.kernel import SmellMetric, euclidean_distances
from core.network import encode
from modules.data_pipeline import Dataset, FoldPlan, make_folds
from modules.trainer import TrainedModel, train

logger = logging.getLogger(__name__)

# Pattern: Strategy
# Purpose: Each MetricKind selects how query/train distances are produced; KNN is shared.

DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class MetricKind(str, Enum):
    SMELL = "smell"
    SMELL_EUCLIDEAN = "smell_euclidean"
    RAW_EUCLIDEAN = "raw_euclidean"
    AUTOENCODER_EUCLIDEAN = "autoencoder_euclidean"

    @property
    def needs_training(self) -> bool:
        return self is not MetricKind.RAW_EUCLIDEAN


class FoldResult(BaseModel):
    """
    Accuracy of one held-out fold; confusion rows are true labels, columns
    predictions. A fold with no test rows has accuracy None.
    """

    model_config = ConfigDict(frozen=True)

    fold: int
    accuracy: Optional[float] = Field(ge=0, le=1)
    confusion: List[List[int]]

    @classmethod
    def from_predictions(cls, fold: int, truth: np.ndarray, predicted: np.ndarray, n_classes: int) -> "FoldResult":
        confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(confusion, (truth - 1, predicted - 1), 1)
        total = confusion.sum()
        accuracy = float(np.trace(confusion) / total) if total else None
        return cls(fold=fold, accuracy=accuracy, confusion=confusion.tolist())


class MethodScore(BaseModel):
    """Mean ± std (ddof=0) accuracy of one method on one dataset."""

    dataset: str
    method: str
    mean_accuracy: float
    std_accuracy: float
    folds: List[FoldResult] = Field(default_factory=list)

    @classmethod
    def from_folds(cls, dataset: str, method: str, folds: Sequence[FoldResult]) -> "MethodScore":
        """Empty folds are kept in `folds` but left out of the mean and std."""
        acc = np.array([f.accuracy for f in folds if f.accuracy is not None], dtype=np.float64)
        if acc.size == 0:
            raise AggregationError(f"{dataset}/{method}: no fold has test rows")
        return cls(dataset=dataset, method=method, mean_accuracy=float(acc.mean()),
                   std_accuracy=float(acc.std()), folds=list(folds))


class MethodAggregate(BaseModel):
    method: str
    accuracy_avg: float
    ranking_avg: float
    diff_avg: float
    firsts: int


class BenchmarkSummary(BaseModel):
    scores: List[MethodScore] = Field(default_factory=list)
    aggregates: List[MethodAggregate] = Field(default_factory=list)

    def aggregate_for(self, method: str) -> MethodAggregate:
        for row in self.aggregates:
            if row.method == method:
                return row
        raise KeyError(method)


class SweepRow(BaseModel):
    latent_dim: int
    mean_accuracy: float
    std_accuracy: float


class MarkerSweepRow(BaseModel):
    k_pos: int
    k_neg: int
    mean_accuracy: float
    std_accuracy: float


# ── KNN ──────────────────────────────────────────────────────────────────────

def knn_predict(distances: np.ndarray, train_labels: np.ndarray, k_neighbors: int = 3) -> np.ndarray:
    """Predicts a label per query row of a (queries, train) distance matrix."""
    distances = np.atleast_2d(np.asarray(distances, dtype=np.float64))
    train_labels = np.asarray(train_labels)
    if distances.shape[1] < k_neighbors:
        raise DatasetError(f"KNN needs at least {k_neighbors} training rows, got {distances.shape[1]}")
    nearest = np.argsort(distances, axis=1, kind="stable")[:, :k_neighbors]
    predictions = np.empty(distances.shape[0], dtype=np.int64)
    for q, idx in enumerate(nearest):
        labels = train_labels[idx]
        dist = distances[q, idx]
        candidates = np.unique(labels)
        votes = np.array([np.count_nonzero(labels == c) for c in candidates])
        summed = np.array([dist[labels == c].sum() for c in candidates])
        predictions[q] = candidates[np.lexsort((candidates, summed, -votes))[0]]
    return predictions


def knn_classify(
    train_rows: np.ndarray,
    train_labels: np.ndarray,
    query_row: np.ndarray,
    metric: DistanceFn,
    k_neighbors: int = 3,
) -> int:
    """Single-query KNN; `metric(a, b)` returns the (len(a), len(b)) distance matrix."""
    distances = metric(np.atleast_2d(query_row), np.atleast_2d(train_rows))
    return int(knn_predict(distances, train_labels, k_neighbors)[0])


def distance_matrix(kind: MetricKind, model, x_query: np.ndarray, x_train: np.ndarray) -> np.ndarray:
    """(queries, train) distances for one metric kind; `model` is unused for raw_euclidean."""
    if kind is MetricKind.RAW_EUCLIDEAN:
        return euclidean_distances(x_query, x_train)
    if kind is MetricKind.SMELL:
        metric = SmellMetric(model.params, model.markers)
        return metric.pairwise(metric.embed(x_query), metric.embed(x_train))
    if kind is MetricKind.SMELL_EUCLIDEAN:
        return euclidean_distances(encode(model.params, x_query), encode(model.params, x_train))
    if kind is MetricKind.AUTOENCODER_EUCLIDEAN:
        pre = model.pretrained_params
        return euclidean_distances(encode(pre, x_query), encode(pre, x_train))
    raise ValueError(f"unknown metric kind {kind!r}")


# ── Cross-validation ─────────────────────────────────────────────────────────

def score_fold(
    dataset: Dataset,
    plan: FoldPlan,
    fold: int,
    model: Optional[TrainedModel],
    kinds: Sequence[MetricKind],
    k_neighbors: int = 3,
) -> Dict[MetricKind, FoldResult]:
    """KNN of the `fold` rows against every other row under each kind, with an already trained model."""
    train_rows = plan.train_rows(fold)
    test_rows = plan.test_rows(fold)
    x_train, y_train = dataset.features[train_rows], dataset.labels[train_rows]
    x_test, y_test = dataset.features[test_rows], dataset.labels[test_rows]
    results = {}
    for kind in kinds:
        dist = distance_matrix(kind, model, x_test, x_train)
        predicted = knn_predict(dist, y_train, k_neighbors)
        results[kind] = FoldResult.from_predictions(fold, y_test, predicted, dataset.n_classes)
        logger.info("%s fold %d %s: accuracy=%s", dataset.name, fold, kind.value, results[kind].accuracy)
    return results


def evaluate_fold(
    dataset: Dataset,
    plan: FoldPlan,
    fold: int,
    config: TrainConfig,
    kinds: Sequence[MetricKind],
) -> Dict[MetricKind, FoldResult]:
    """One training run (seed = base + fold) scores every requested kind."""
    try:
        model = None
        if any(k.needs_training for k in kinds):
            model = train(dataset, plan, fold, config.for_fold(fold))
        return score_fold(dataset, plan, fold, model, kinds, config.knn_neighbors)
    except SmellError as e:
        raise FoldError(fold, e) from e


def _run_folds(
    dataset: Dataset,
    plan: FoldPlan,
    config: TrainConfig,
    kinds: Sequence[MetricKind],
    workers: int,
) -> List[Dict[MetricKind, FoldResult]]:
    folds = range(plan.n_folds)
    if workers <= 1:
        return [evaluate_fold(dataset, plan, f, config, kinds) for f in folds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(evaluate_fold, dataset, plan, f, config, kinds) for f in folds]
        # Reduced in fold order regardless of completion order.
        return [fut.result() for fut in futures]


def cross_validate_many(
    dataset: Dataset,
    config: TrainConfig,
    kinds: Sequence[MetricKind],
    workers: int = 1,
    plan: Optional[FoldPlan] = None,
) -> Dict[MetricKind, List[FoldResult]]:
    kinds = [MetricKind(k) for k in kinds]
    plan = plan or make_folds(dataset, config.seed, config.n_folds)
    per_fold = _run_folds(dataset, plan, config, kinds, workers)
    return {kind: [row[kind] for row in per_fold] for kind in kinds}


def cross_validate(
    dataset: Dataset,
    config: TrainConfig,
    metric_kind: MetricKind = MetricKind.SMELL,
    workers: int = 1,
    plan: Optional[FoldPlan] = None,
) -> List[FoldResult]:
    """
    n_folds-fold cross-validation of KNN under one metric kind. Trained kinds
    fit on the other folds only; raw_euclidean skips training.
    """
    kind = MetricKind(metric_kind)
    return cross_validate_many(dataset, config, [kind], workers, plan)[kind]


def evaluate_methods(
    dataset: Dataset,
    config: TrainConfig,
    methods: Sequence[str],
    workers: int = 1,
) -> List[MethodScore]:
    """Scores each method name (a MetricKind value) on one dataset."""
    results = cross_validate_many(dataset, config, methods, workers)
    return [MethodScore.from_folds(dataset.name, kind.value, folds) for kind, folds in results.items()]


def evaluate_checkpoint(
    dataset: Dataset,
    model: TrainedModel,
    methods: Sequence[str],
) -> List[MethodScore]:
    """
    Scores a restored model on the fold it held out during training. The fold
    plan is rebuilt from the model's own seed and fold count.
    """
    if model.test_fold is None:
        raise ConfigError("checkpoint was trained on every row; it has no held-out fold to score")
    cfg = model.config
    if not 0 <= model.test_fold < cfg.n_folds:
        raise ConfigError(f"checkpoint test fold {model.test_fold} is outside 0..{cfg.n_folds - 1}")
    kinds = [MetricKind(m) for m in methods]
    if MetricKind.AUTOENCODER_EUCLIDEAN in kinds and model.pretrained_params is None:
        raise ConfigError("autoencoder_euclidean needs a checkpoint with pretrained weights")
    plan = make_folds(dataset, cfg.seed, cfg.n_folds)
    results = score_fold(dataset, plan, model.test_fold, model, kinds, cfg.knn_neighbors)
    return [MethodScore.from_folds(dataset.name, kind.value, [results[kind]]) for kind in kinds]


ABLATIONS: Tuple[Tuple[str, Dict[str, bool]], ...] = (
    ("r_r=0", {"zero_r_r": True}),
    ("r_d=0", {"zero_r_d": True}),
    ("both=0", {"zero_r_r": True, "zero_r_d": True}),
)


def run_ablations(dataset: Dataset, base_config: TrainConfig, workers: int = 1) -> List[MethodScore]:
    """
    Five rows per dataset: full, r_r=0, r_d=0, both=0 and euclidean. The full
    and euclidean rows share one set of trained models; all runs share a seed
    and fold plan.
    """
    base = base_config.model_copy(update={"zero_r_r": False, "zero_r_d": False, "euclidean_eval": False})
    plan = make_folds(dataset, base.seed, base.n_folds)
    shared = cross_validate_many(dataset, base, [MetricKind.SMELL, MetricKind.SMELL_EUCLIDEAN], workers, plan)
    rows = [MethodScore.from_folds(dataset.name, "full", shared[MetricKind.SMELL])]
    for name, flags in ABLATIONS:
        folds = cross_validate(dataset, base.model_copy(update=flags), MetricKind.SMELL, workers, plan)
        rows.append(MethodScore.from_folds(dataset.name, name, folds))
    rows.append(MethodScore.from_folds(dataset.name, "euclidean", shared[MetricKind.SMELL_EUCLIDEAN]))
    return rows


def latent_dim_sweep(
    dataset: Dataset,
    config: TrainConfig,
    dims: Sequence[int],
    workers: int = 1,
) -> List[SweepRow]:
    """KNN accuracy of the SMELL metric for each latent width n."""
    plan = make_folds(dataset, config.seed, config.n_folds)
    rows = []
    for n in dims:
        folds = cross_validate(dataset, config.model_copy(update={"latent_dim": int(n)}),
                               MetricKind.SMELL, workers, plan)
        score = MethodScore.from_folds(dataset.name, f"n={n}", folds)
        rows.append(SweepRow(latent_dim=int(n), mean_accuracy=score.mean_accuracy,
                             std_accuracy=score.std_accuracy))
    return rows


def marker_count_sweep(
    dataset: Dataset,
    config: TrainConfig,
    counts: Sequence[Tuple[int, int]],
    workers: int = 1,
) -> List[MarkerSweepRow]:
    """KNN accuracy of the SMELL metric for each (k, w - k) marker split, on one fold plan."""
    plan = make_folds(dataset, config.seed, config.n_folds)
    rows = []
    for k_pos, k_neg in counts:
        cfg = TrainConfig.model_validate({**config.model_dump(), "k_pos": k_pos, "k_neg": k_neg})
        folds = cross_validate(dataset, cfg, MetricKind.SMELL, workers, plan)
        score = MethodScore.from_folds(dataset.name, f"k={k_pos},w-k={k_neg}", folds)
        rows.append(MarkerSweepRow(k_pos=k_pos, k_neg=k_neg, mean_accuracy=score.mean_accuracy,
                                   std_accuracy=score.std_accuracy))
    return rows

# ── Aggregation ──────────────────────────────────────────────────────────────

def score_matrix(scores: Sequence[MethodScore]) -> Dict[str, Dict[str, float]]:
    matrix: Dict[str, Dict[str, float]] = {}
    for s in scores:
        matrix.setdefault(s.dataset, {})[s.method] = s.mean_accuracy
    return matrix


def aggregate(
    results: Mapping[str, Mapping[str, float]],
    scores: Sequence[MethodScore] = (),
) -> BenchmarkSummary:
    """
    results[dataset][method] = mean accuracy. Every method must appear for
    every dataset; methods keep their first-seen order.
    """
    if not results:
        raise AggregationError("no results to aggregate")
    methods: List[str] = []
    for per_method in results.values():
        for m in per_method:
            if m not in methods:
                methods.append(m)
    for dataset, per_method in results.items():
        missing = [m for m in methods if m not in per_method]
        if missing:
            raise AggregationError(f"dataset {dataset!r} lacks results for {missing}")

    acc = np.array([[results[d][m] for m in methods] for d in results], dtype=np.float64)
    best = acc.max(axis=1, keepdims=True)
    ranks = 1 + (acc[:, None, :] > acc[:, :, None]).sum(axis=2)
    aggregates = [
        MethodAggregate(
            method=m,
            accuracy_avg=float(acc[:, c].mean()),
            ranking_avg=float(ranks[:, c].mean()),
            diff_avg=float((best[:, 0] - acc[:, c]).mean()),
            firsts=int(np.count_nonzero(acc[:, c] == best[:, 0])),
        )
        for c, m in enumerate(methods)
    ]
    return BenchmarkSummary(scores=list(scores), aggregates=aggregates)


def summarize(scores: Sequence[MethodScore]) -> BenchmarkSummary:
    return aggregate(score_matrix(scores), scores)
