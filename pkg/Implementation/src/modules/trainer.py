"""
Trainer Module for SMELL

Runs the training schedule: autoencoder pretraining on single rows, marker
initialization from S-vectors of the pretrained encoder, then the joint loop
where markers, encoder and decoder are all updated from one parameter
snapshot per step. Between joint epochs the markers may be refit by Lloyd
iterations warm-started from their current positions.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : TrainerModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <Pretrain>      → MSE on single rows, no pairs, no markers               │
  │  <InitMarkers>   → sampled pairs → S-vectors → Lloyd                      │
  │  <JointLoop>     → sample batch → J + gradients → synchronous update      │
  │  <RefreshMarkers> → warm Lloyd refit, kept only if it lowers J            │
  │  <MarkerGeometry> → min ||μ⁺||² < min ||μ⁻||²                            │
  │  <PairCE>         → H_c over every pair of a row set                      │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <network>        ← from core (init, forward, backward, sgd_step)        │
  │  <kernel>         ← from core (marker_init, marker_refit, SmellMetric)   │
  │  <objective>      ← from core (batch_objective, cross_entropy, R_d)      │
  │  <data_pipeline>  ← from modules (folds, pair sampling)                  │
  │  <pydantic>       ← from library (MarkerGeometryReport contract)         │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : int, float, np.ndarray

Production Rules:
  TrainerModule  → imports + <Pretrain> + <InitMarkers> + <JointLoop> + <RefreshMarkers> + <MarkerGeometry>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from core.config import TrainConfig
from core.exceptions import ConfigError, TrainingDivergedError
from core.kernel import MarkerSet, SmellMetric, marker_init, marker_refit, student_t_scores
from core.network import (
    NetworkParams,
    OptimizerState,
    backward,
    encode,
    forward,
    init_params,
    named_gradients,
    reconstruction_mse,
    sgd_step,
)
from core.objective import LossBreakdown, batch_objective, cross_entropy, repulsive_loss
from modules.data_pipeline import Dataset, FoldPlan, iterate_rows, sample_pair_batch

logger = logging.getLogger(__name__)

# Pattern: Template Method
# Purpose: train() fixes the phase order; each phase is a replaceable step.

STREAMS = ("init", "shuffle", "marker_pairs", "kmeans", "pairs", "refresh")
MARKER_TENSORS = ("markers.pos", "markers.neg")


def seed_streams(seed: int) -> Dict[str, np.random.SeedSequence]:
    """Independent child seeds per concern, spawned from one SeedSequence."""
    return dict(zip(STREAMS, np.random.SeedSequence(seed).spawn(len(STREAMS))))


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    loss: LossBreakdown


@dataclass
class TrainedModel:
    """Σ = {Θ, Θ′, M} with the config snapshot and the training logs."""

    params: NetworkParams
    markers: MarkerSet
    config: TrainConfig
    log: List[StepRecord] = field(default_factory=list)
    pretrain_log: List[float] = field(default_factory=list)
    pretrained_params: Optional[NetworkParams] = None
    dataset_fingerprint: str = ""
    test_fold: Optional[int] = None
    initial_markers: Optional[MarkerSet] = None
    refresh_epochs: List[int] = field(default_factory=list)

    def metric(self) -> SmellMetric:
        return SmellMetric(self.params, self.markers)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return encode(self.params, x)

    def all_finite(self) -> bool:
        return self.params.all_finite() and bool(
            np.all(np.isfinite(self.markers.positive)) and np.all(np.isfinite(self.markers.negative))
        )

    def at_stage(self, stage: str) -> "TrainedModel":
        """
        The model as it stood after pretraining and marker initialization
        ("pretrained") or after the joint loop ("final").
        """
        if stage == "final":
            return self
        if stage != "pretrained":
            raise ConfigError(f"unknown stage {stage!r}; expected 'pretrained' or 'final'")
        if self.pretrained_params is None or self.initial_markers is None:
            raise ConfigError("this model carries no pretrained snapshot")
        return TrainedModel(
            self.pretrained_params, self.initial_markers, self.config,
            pretrain_log=self.pretrain_log, pretrained_params=self.pretrained_params,
            dataset_fingerprint=self.dataset_fingerprint, test_fold=self.test_fold,
            initial_markers=self.initial_markers,
        )


class MarkerGeometryReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_pos_norm: float
    min_neg_norm: float
    holds: bool


def _training_features(dataset: Dataset, folds: Optional[FoldPlan], test_fold: Optional[int]) -> np.ndarray:
    rows = np.arange(dataset.v) if folds is None else folds.train_rows(test_fold)
    return dataset.features[rows]


def pretrain_autoencoder(
    dataset: Dataset,
    folds: Optional[FoldPlan],
    test_fold: Optional[int],
    config: TrainConfig,
    history: Optional[List[float]] = None,
) -> NetworkParams:
    """
    Minimizes mean ||x - f⁻¹(f(x))||² over single training rows for
    config.pretrain_epochs epochs. Appends the end-of-epoch training MSE to
    `history` when given.
    """
    streams = seed_streams(config.seed)
    params = init_params(
        dataset.m, config.latent_dim, streams["init"], config.hidden_dims,
        config.init_weight_std, config.init_bias_mean, config.init_bias_std,
    )
    x_train = _training_features(dataset, folds, test_fold)
    shuffle_rng = np.random.default_rng(streams["shuffle"])
    state = OptimizerState.for_tensors(params.named_tensors(), config.learning_rate, config.momentum)
    tensors = params.named_tensors()

    step = 0
    for epoch in range(config.pretrain_epochs):
        for rows in iterate_rows(np.arange(len(x_train)), config.batch_size, shuffle_rng):
            x = x_train[rows]
            z, enc_cache = forward(params.encoder, x)
            x_rec, dec_cache = forward(params.decoder, z)
            residual = x_rec - x
            loss = float(np.sum(residual ** 2) / len(x))
            if not math.isfinite(loss):
                raise TrainingDivergedError("reconstruction loss is not finite", step=step, phase="pretrain")
            dec_grads, grad_z = backward(params.decoder, (2.0 / len(x)) * residual, dec_cache)
            enc_grads, _ = backward(params.encoder, grad_z, enc_cache)
            grads = named_gradients("enc", enc_grads)
            grads.update(named_gradients("dec", dec_grads))
            sgd_step(tensors, grads, state)
            step += 1
        mse = reconstruction_mse(params, x_train)
        if history is not None:
            history.append(mse)
        logger.info("pretrain epoch %d/%d: mse=%.6g", epoch + 1, config.pretrain_epochs, mse)
    return params


def sample_s_vectors(
    dataset: Dataset,
    folds: Optional[FoldPlan],
    test_fold: Optional[int],
    params: NetworkParams,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    S-vectors of config.marker_sample_pairs similar and as many dissimilar
    training pairs, with the similar flag per row. Each distinct row is
    encoded once.
    """
    batch = sample_pair_batch(dataset, folds, test_fold, 2 * config.marker_sample_pairs, rng)
    rows, inverse = np.unique(np.concatenate([batch.i, batch.j]), return_inverse=True)
    z = encode(params, dataset.features[rows])
    z_i, z_j = z[inverse[: batch.size]], z[inverse[batch.size:]]
    return np.abs(z_i - z_j), batch.similar


def initialize_markers(
    dataset: Dataset,
    folds: Optional[FoldPlan],
    test_fold: Optional[int],
    params: NetworkParams,
    config: TrainConfig,
) -> MarkerSet:
    """Lloyd centroids of similar / dissimilar training-pair S-vectors."""
    streams = seed_streams(config.seed)
    s_vectors, similar = sample_s_vectors(
        dataset, folds, test_fold, params, config, np.random.default_rng(streams["marker_pairs"]),
    )
    return marker_init(
        s_vectors, similar, config.k_pos, config.n_markers,
        streams["kmeans"], config.kmeans_max_iter, config.kmeans_tol,
    )


def _marker_objective(M: MarkerSet, s_vectors: np.ndarray, u: np.ndarray, config: TrainConfig) -> float:
    """The part of J that moves with the markers: r_HC·H_c + R_d."""
    h_c = cross_entropy(student_t_scores(s_vectors, M), u, config.ce_clamp)
    return config.r_hc * h_c + repulsive_loss(M, config.r_d, config.epsilon)


def refresh_markers(
    M: MarkerSet,
    s_vectors: np.ndarray,
    similar: np.ndarray,
    config: TrainConfig,
) -> Tuple[MarkerSet, bool]:
    """
    Lloyd refit warm-started from M. The refit replaces M only when it lowers
    r_HC·H_c + R_d on the given S-vectors; returns (markers, replaced).
    """
    cfg = config.effective()
    refit = marker_refit(M, s_vectors, similar, cfg.kmeans_max_iter, cfg.kmeans_tol)
    if refit.has_duplicates():
        return M, False
    u = np.column_stack([similar, ~similar]).astype(np.float64)
    before = _marker_objective(M, s_vectors, u, cfg)
    after = _marker_objective(refit, s_vectors, u, cfg)
    if not after < before:
        return M, False
    logger.debug("marker refit lowered the marker objective %.6g -> %.6g", before, after)
    return refit, True


def clip_marker_gradients(grads: Dict[str, np.ndarray], limit: float) -> Dict[str, np.ndarray]:
    """Rescales each marker group's gradient to L2 norm <= limit (limit 0 leaves them as is)."""
    if limit <= 0:
        return grads
    for name in MARKER_TENSORS:
        norm = float(np.linalg.norm(grads[name]))
        if norm > limit:
            grads[name] = grads[name] * (limit / norm)
    return grads


def _refresh_due(epoch: int, config: TrainConfig) -> bool:
    every = config.marker_refresh_every
    return every > 0 and ((epoch + 1) % every == 0 or epoch + 1 == config.joint_epochs)


def train(
    dataset: Dataset,
    folds: Optional[FoldPlan],
    test_fold: Optional[int],
    config: TrainConfig,
    dataset_fingerprint: str = "",
) -> TrainedModel:
    """
    pretrain → marker init → joint loop. Each joint epoch holds
    ceil(v_train / batch_size) steps; every marker_refresh_every epochs (and
    after the last one) the markers get a warm Lloyd refit. A non-finite loss
    or gradient aborts with the offending step index.
    """
    cfg = config.effective()
    pretrain_log: List[float] = []
    params = pretrain_autoencoder(dataset, folds, test_fold, cfg, history=pretrain_log)
    pretrained = params.copy()
    markers = initialize_markers(dataset, folds, test_fold, params, cfg)
    initial_markers = markers.copy()

    v_train = dataset.v if folds is None else folds.train_rows(test_fold).size
    steps_per_epoch = max(1, math.ceil(v_train / cfg.batch_size))
    streams = seed_streams(cfg.seed)
    pair_rng = np.random.default_rng(streams["pairs"])
    refresh_rng = np.random.default_rng(streams["refresh"])

    tensors: Dict[str, np.ndarray] = dict(params.named_tensors())
    tensors.update(markers.named_tensors())
    state = OptimizerState.for_tensors(tensors, cfg.learning_rate, cfg.momentum)
    log: List[StepRecord] = []
    refresh_epochs: List[int] = []

    step = 0
    for epoch in range(cfg.joint_epochs):
        epoch_total = 0.0
        for _ in range(steps_per_epoch):
            batch = sample_pair_batch(dataset, folds, test_fold, cfg.batch_size, pair_rng)
            breakdown, grads = batch_objective(batch, dataset.features, params, markers, cfg)
            if not breakdown.is_finite():
                raise TrainingDivergedError(f"non-finite loss {breakdown}", step=step)
            try:
                sgd_step(tensors, clip_marker_gradients(grads, cfg.marker_grad_clip), state)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(e.message, step=step) from e
            log.append(StepRecord(step, epoch, breakdown))
            logger.debug("step %d: J=%.6g H_c=%.6g", step, breakdown.total, breakdown.h_c)
            epoch_total += breakdown.total
            step += 1

        if _refresh_due(epoch, cfg):
            s_vectors, similar = sample_s_vectors(dataset, folds, test_fold, params, cfg, refresh_rng)
            refit, replaced = refresh_markers(markers, s_vectors, similar, cfg)
            if replaced:
                # tensors and the optimizer hold these arrays, so copy in place
                markers.positive[...] = refit.positive
                markers.negative[...] = refit.negative
                for name in MARKER_TENSORS:
                    state.velocity.pop(name, None)
                refresh_epochs.append(epoch)
        logger.info("joint epoch %d/%d: mean J=%.6g", epoch + 1, cfg.joint_epochs, epoch_total / steps_per_epoch)

    model = TrainedModel(
        params, markers, cfg, log, pretrain_log, pretrained, dataset_fingerprint, test_fold,
        initial_markers=initial_markers, refresh_epochs=refresh_epochs,
    )
    if not model.all_finite():
        raise TrainingDivergedError("parameters became non-finite", step=step)
    return model


def marker_geometry_check(model: Union[TrainedModel, MarkerSet]) -> MarkerGeometryReport:
    """Holds iff some positive marker has a smaller squared norm than every negative marker."""
    markers = model.markers if isinstance(model, TrainedModel) else model
    pos = float(np.min(np.sum(markers.positive ** 2, axis=1)))
    neg = float(np.min(np.sum(markers.negative ** 2, axis=1)))
    return MarkerGeometryReport(min_pos_norm=pos, min_neg_norm=neg, holds=pos < neg)


def pair_cross_entropy(model: TrainedModel, dataset: Dataset, rows: Optional[np.ndarray] = None) -> float:
    """Mean H_c over every unordered pair of `rows` (all rows by default)."""
    rows = np.arange(dataset.v) if rows is None else np.asarray(rows)
    z = encode(model.params, dataset.features[rows])
    labels = dataset.labels[rows]
    i, j = np.triu_indices(rows.size, k=1)
    similar = labels[i] == labels[j]
    u = np.column_stack([similar, ~similar]).astype(np.float64)
    return cross_entropy(student_t_scores(np.abs(z[i] - z[j]), model.markers), u, model.config.ce_clamp)
