"""
Data Pipeline Module for SMELL

Ingests tabular CSV datasets, min-max normalizes them, downsamples, stratifies
rows into folds and samples balanced batches of similar / dissimilar pairs.

Normalization runs on the full dataset before folds are drawn (the reference
preprocessing does the same); test-fold statistics therefore leak into the
feature ranges. This is kept on purpose for comparability.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : DataPipelineModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <LoadCSV>      → parse, validate, re-encode labels to 1..b               │
  │  <Normalize>    → per-column min-max to [0, 1]                            │
  │  <Downsample>   → stratified, seeded subset                               │
  │  <MakeFolds>    → stratified 10-fold plan, round-robin per class          │
  │  <SamplePairs>  → ⌈g/2⌉ similar + ⌊g/2⌋ dissimilar pairs                  │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <pandas>      ← from library (CSV ingest / export)                       │
  │  <numpy>       ← from library (index arithmetic)                          │
  │  <exceptions>  ← from core (DatasetError)                                 │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : str, int, np.ndarray

Production Rules:
  DataPipelineModule → imports + <LoadCSV> + <Normalize> + <Downsample>
                       + <MakeFolds> + <SamplePairs>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.config import TrainConfig
from core.exceptions import DatasetError

logger = logging.getLogger(__name__)

# Pattern: Pipes and Filters
# Purpose: Each stage takes an immutable Dataset and returns a new one.

LabelColumn = Union[str, int]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (v, m), labels in 1..b, a name and the original class names."""

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    class_names: Tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise DatasetError(f"{self.name}: features {features.shape} do not match labels {labels.shape}")
        object.__setattr__(self, "features", _freeze(features))
        object.__setattr__(self, "labels", _freeze(labels))
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(str(c) for c in range(1, self.n_classes + 1)))
        self.validate()

    @property
    def v(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def class_counts(self) -> np.ndarray:
        """Members per class, index c-1 for class c."""
        return np.bincount(self.labels, minlength=self.n_classes + 1)[1:]

    def validate(self):
        if not np.all(np.isfinite(self.features)):
            raise DatasetError(f"{self.name}: features must be finite")
        if self.labels.size and self.labels.min() < 1:
            raise DatasetError(f"{self.name}: labels must be encoded as 1..b")
        if self.n_classes < 2:
            raise DatasetError(f"{self.name}: single-class dataset; dissimilar pairs need b >= 2")
        counts = self.class_counts()
        if np.any(counts < 2):
            tiny = [self.class_names[c] for c in np.flatnonzero(counts < 2)]
            raise DatasetError(f"{self.name}: class with fewer than 2 members: {tiny}")

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], self.name, self.class_names)


@dataclass(frozen=True)
class FoldPlan:
    """Fold index per row plus the seed that produced it."""

    fold_of_row: np.ndarray
    seed: int
    n_folds: int = 10

    def __post_init__(self):
        object.__setattr__(self, "fold_of_row", _freeze(np.asarray(self.fold_of_row, dtype=np.int64)))

    def test_rows(self, test_fold: Optional[int]) -> np.ndarray:
        if test_fold is None:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.fold_of_row == test_fold)

    def train_rows(self, test_fold: Optional[int]) -> np.ndarray:
        """Every row outside `test_fold`; None means every row."""
        if test_fold is None:
            return np.arange(self.fold_of_row.size)
        return np.flatnonzero(self.fold_of_row != test_fold)


@dataclass(frozen=True)
class PairBatch:
    """Row indices (i, j) with a similar flag; similar pairs come first."""

    i: np.ndarray
    j: np.ndarray
    similar: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.i.size)

    @property
    def u(self) -> np.ndarray:
        """One-hot pair labels: (1, 0) similar, (0, 1) dissimilar."""
        sim = self.similar.astype(np.float64)
        return np.stack([sim, 1.0 - sim], axis=1)


def _encode_labels(raw: pd.Series) -> Tuple[np.ndarray, Tuple[str, ...]]:
    values = raw.astype(str).str.strip()
    uniques = values.unique().tolist()
    numeric = pd.to_numeric(pd.Series(uniques), errors="coerce")
    if numeric.notna().all():
        order = [u for _, u in sorted(zip(numeric.tolist(), uniques))]
    else:
        order = sorted(uniques)
    mapping = {name: idx + 1 for idx, name in enumerate(order)}
    return values.map(mapping).to_numpy(dtype=np.int64), tuple(order)


def load_csv(
    path: Union[str, Path],
    label_column: LabelColumn = "last",
    has_header: bool = False,
    name: Optional[str] = None,
) -> Dataset:
    """
    Reads a comma-separated UTF-8 table. Labels are re-encoded to contiguous
    integers 1..b (numeric order when every label is numeric, else lexical);
    row order is preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, header=0 if has_header else None, dtype=str,
                            keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"cannot parse {path}: {e}") from e
    if frame.shape[1] < 2:
        raise DatasetError(f"{path}: need at least one feature column and one label column")

    label_idx = frame.shape[1] - 1 if label_column == "last" else int(label_column)
    if not -frame.shape[1] <= label_idx < frame.shape[1]:
        raise DatasetError(f"{path}: label column {label_column} out of range")
    label_idx %= frame.shape[1]

    feature_frame = frame.drop(columns=frame.columns[label_idx])
    numeric = feature_frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        raise DatasetError(
            f"{path}: non-numeric feature cell {feature_frame.iat[row, col]!r} at row {row + 1}, column {col + 1}"
        )
    labels, class_names = _encode_labels(frame.iloc[:, label_idx])
    dataset = Dataset(numeric.to_numpy(dtype=np.float64), labels, name or path.stem, class_names)
    logger.info("loaded %s: v=%d m=%d b=%d", dataset.name, dataset.v, dataset.m, dataset.n_classes)
    return dataset


def save_csv(d: Dataset, path: Union[str, Path]) -> Path:
    """Writes features and original class names, no header, floats via repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(d.features)
    frame["label"] = [d.class_names[c - 1] for c in d.labels]
    frame.to_csv(path, header=False, index=False, float_format=lambda x: repr(float(x)), lineterminator="\n")
    return path


def minmax_normalize(d: Dataset) -> Dataset:
    """x' = (x - min_c)/(max_c - min_c) per column; constant columns become 0."""
    lo = d.features.min(axis=0)
    span = d.features.max(axis=0) - lo
    constant = span == 0
    scaled = (d.features - lo) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.0
    return Dataset(scaled, d.labels, d.name, d.class_names)


def downsample(d: Dataset, fraction: float, seed: int) -> Dataset:
    """
    Stratified random subset keeping round(fraction·n_c) rows of each class
    (at least 2). Surviving rows keep their original order.
    """
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"downsample fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return d
    if fraction * d.v < 2 * d.n_classes:
        raise DatasetError(
            f"{d.name}: fraction {fraction} keeps {fraction * d.v:.1f} rows, fewer than 2 per class"
        )
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(1, d.n_classes + 1):
        members = np.flatnonzero(d.labels == c)
        quota = int(round(fraction * members.size))
        if quota < 2:
            raise DatasetError(f"{d.name}: fraction {fraction} leaves class {d.class_names[c - 1]!r} with < 2 rows")
        keep.append(rng.choice(members, size=quota, replace=False))
    rows = np.sort(np.concatenate(keep))
    logger.info("downsampled %s from %d to %d rows", d.name, d.v, rows.size)
    return d.subset(rows)


def apply_size_rule(d: Dataset, config: TrainConfig) -> Dataset:
    """Downsamples by config.downsample_fraction only when v > config.downsample_above."""
    if config.downsample_fraction >= 1.0 or d.v <= config.downsample_above:
        return d
    return downsample(d, config.downsample_fraction, config.seed)


def make_folds(d: Dataset, seed: int, n_folds: int = 10) -> FoldPlan:
    """
    Stratified plan: each class is shuffled and dealt round-robin, the deal
    continuing where the previous class stopped, so classes smaller than
    n_folds are spread across different folds.
    Every fold gets at least one row; n_folds > v raises DatasetError.
    """
    if n_folds > d.v:
        raise DatasetError(f"{d.name}: {n_folds} folds requested for only {d.v} rows")
    rng = np.random.default_rng(seed)
    fold_of_row = np.empty(d.v, dtype=np.int64)
    offset = 0
    for c in range(1, d.n_classes + 1):
        members = rng.permutation(np.flatnonzero(d.labels == c))
        fold_of_row[members] = (offset + np.arange(members.size)) % n_folds
        offset = (offset + members.size) % n_folds
    return FoldPlan(fold_of_row, seed, n_folds)


def sample_pair_batch(
    d: Dataset,
    plan: Optional[FoldPlan],
    test_fold: Optional[int],
    g: int,
    rng: np.random.Generator,
) -> PairBatch:
    """
    ⌈g/2⌉ similar and ⌊g/2⌋ dissimilar ordered pairs (i ≠ j), drawn with
    replacement and uniformly over the eligible pairs of each type, from the
    training rows only.
    """
    rows = np.arange(d.v) if plan is None else plan.train_rows(test_fold)
    labels = d.labels[rows]
    order = rows[np.argsort(labels, kind="stable")]
    counts = np.bincount(labels, minlength=d.n_classes + 1)[1:]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    n_sim, n_dis = (g + 1) // 2, g // 2

    sim_weight = counts * (counts - 1.0)
    if n_sim and sim_weight.sum() == 0:
        raise DatasetError(f"{d.name}: no eligible similar pair in the training rows")
    if n_dis and np.count_nonzero(counts) < 2:
        raise DatasetError(f"{d.name}: no eligible dissimilar pair in the training rows")

    cls = rng.choice(counts.size, size=n_sim, p=sim_weight / sim_weight.sum()) if n_sim else np.empty(0, int)
    first = rng.integers(0, counts[cls]) if n_sim else np.empty(0, int)
    second = rng.integers(0, counts[cls] - 1) if n_sim else np.empty(0, int)
    second = second + (second >= first)
    sim_i, sim_j = order[starts[cls] + first], order[starts[cls] + second]

    if n_dis:
        # i is weighted by how many partners it has outside its own class
        sorted_cls = np.sort(labels) - 1
        weight = (rows.size - counts[sorted_cls]).astype(np.float64)
        pos = rng.choice(rows.size, size=n_dis, p=weight / weight.sum())
        ci = sorted_cls[pos]
        t = rng.integers(0, rows.size - counts[ci])
        t = t + counts[ci] * (t >= starts[ci])
        dis_i, dis_j = order[pos], order[t]
    else:
        dis_i = dis_j = np.empty(0, dtype=np.int64)

    return PairBatch(
        np.concatenate([sim_i, dis_i]).astype(np.int64),
        np.concatenate([sim_j, dis_j]).astype(np.int64),
        np.concatenate([np.ones(n_sim, dtype=bool), np.zeros(n_dis, dtype=bool)]),
    )


def iterate_rows(rows: Sequence[int], batch_size: int, rng: np.random.Generator):
    """Shuffled mini-batches over single rows (autoencoder pretraining)."""
    perm = rng.permutation(np.asarray(rows))
    for start in range(0, perm.size, batch_size):
        yield perm[start:start + batch_size]


def prepare(d: Dataset, config: TrainConfig) -> Dataset:
    """Size rule first, then min-max normalization of whatever survives."""
    return minmax_normalize(apply_size_rule(d, config))
