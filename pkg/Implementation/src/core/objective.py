"""
Objective Module for SMELL

Composes J = r_HC·H_c + R_r + R_d over a batch of pairs and returns analytic
gradients for the markers, the encoder Θ and the decoder Θ′, all computed from
one parameter snapshot.

Committed readings:
  - R_d⁺ is the ordered double sum over i ≠ j divided by C(k, 2), so two
    markers at squared distance d contribute 2/(d + ε). Same for R_d⁻.
  - ∂R_d/∂μ_t = -4·(r_d/C)·Σ_{s≠t} (μ_t - μ_s)/(||μ_t - μ_s||² + ε)², derived
    from the implemented R_d rather than transcribed.
  - Cross-entropy gradients are the exact chain rule of the implemented mean
    (clamped) cross-entropy; a clamped pair contributes no gradient.
  - d|x|/dx at x = 0 is 0.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : ObjectiveModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <CrossEntropy>   → H_c, mean over pairs, q clamped                       │
  │  <Reconstruction> → R_r = r_r/N Σ (||x_i-x_i'||² + ||x_j-x_j'||²)         │
  │  <Repulsive>      → R_d = r_d (R_d⁺ + R_d⁻)                               │
  │  <MarkerGrad>     → ∂J/∂μ                                                 │
  │  <EncoderGrad>    → ∂(r_HC·H_c + R_r)/∂Θ through |z_i - z_j|              │
  │  <DecoderGrad>    → ∂R_r/∂Θ′ only                                         │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>       ← from library                                             │
  │  <network>     ← from core (forward / backward)                           │
  │  <kernel>      ← from core (Student-t terms)                              │
  │  <config>      ← from core (TrainConfig)                                  │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : float, np.ndarray

Production Rules:
  ObjectiveModule → imports + <CrossEntropy> + <Reconstruction> + <Repulsive>
                    + <MarkerGrad> + <EncoderGrad> + <DecoderGrad>
═══════════════════════════════════════════════════════════════════════════════
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Tuple

import numpy as np

from core.config import TrainConfig
from core.exceptions import DimensionError, EmptyBatchError
from core.kernel import MarkerSet, PairScore, kernel_terms
from core.network import ForwardCache, NetworkParams, backward, forward, named_gradients

if TYPE_CHECKING:
    from modules.data_pipeline import PairBatch

# Pattern: Composite
# Purpose: Each loss term reports its value and gradient; J is their weighted sum.


@dataclass(frozen=True)
class LossBreakdown:
    """One step of the loss: H_c before scaling, the two regularizers, and J."""

    h_c: float
    r_r_term: float
    r_d_term: float
    total: float

    @classmethod
    def compose(cls, h_c: float, r_r_term: float, r_d_term: float, r_hc: float) -> "LossBreakdown":
        return cls(h_c, r_r_term, r_d_term, r_hc * h_c + r_r_term + r_d_term)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite([self.h_c, self.r_r_term, self.r_d_term, self.total])))


@dataclass
class PairForward:
    """Both pair elements pushed through encoder and decoder in one stacked pass."""

    x: np.ndarray
    z: np.ndarray
    x_rec: np.ndarray
    enc_cache: ForwardCache
    dec_cache: ForwardCache
    g: int

    @property
    def z_i(self) -> np.ndarray:
        return self.z[: self.g]

    @property
    def z_j(self) -> np.ndarray:
        return self.z[self.g:]


def cross_entropy(scores: PairScore, u: np.ndarray, clamp: float = 1e-7) -> float:
    """Mean over pairs of -[u⁺ ln q⁺ + u⁻ ln q⁻], q clamped to [clamp, 1 - clamp]."""
    q_plus = np.atleast_1d(scores.q_plus)
    q_minus = np.atleast_1d(scores.q_minus)
    u = np.atleast_2d(u)
    if q_plus.size == 0:
        raise EmptyBatchError("cross-entropy over an empty batch")
    if u.shape != (q_plus.size, 2):
        raise DimensionError(f"pair labels shaped {u.shape} for {q_plus.size} scores")
    qp = np.clip(q_plus, clamp, 1.0 - clamp)
    qm = np.clip(q_minus, clamp, 1.0 - clamp)
    return float(np.mean(-(u[:, 0] * np.log(qp) + u[:, 1] * np.log(qm))))


def reconstruction_loss(x_pairs: np.ndarray, x_reconstructions: np.ndarray, r_r: float) -> float:
    """
    R_r = r_r · N⁻¹ · Σ (||x_i - x_i'||² + ||x_j - x_j'||²).
    Both arrays are shaped (N, 2, m): [:, 0] holds x_i, [:, 1] holds x_j.
    """
    x_pairs = np.asarray(x_pairs, dtype=np.float64)
    x_reconstructions = np.asarray(x_reconstructions, dtype=np.float64)
    if x_pairs.shape != x_reconstructions.shape:
        raise DimensionError(f"pairs {x_pairs.shape} vs reconstructions {x_reconstructions.shape}")
    n_pairs = x_pairs.shape[0]
    if n_pairs == 0:
        return 0.0
    return float(r_r * np.sum((x_pairs - x_reconstructions) ** 2) / n_pairs)


def _group_repulsion(markers: np.ndarray, epsilon: float) -> Tuple[float, np.ndarray]:
    """(1/C(k,2)) Σ_{i≠j} 1/(||μ_i-μ_j||² + ε) and its gradient for one group."""
    k = markers.shape[0]
    if k < 2:
        return 0.0, np.zeros_like(markers)
    c = k * (k - 1) / 2.0
    diff = markers[:, None, :] - markers[None, :, :]
    inv = 1.0 / (np.einsum("ijn,ijn->ij", diff, diff) + epsilon)
    np.fill_diagonal(inv, 0.0)
    weights = inv ** 2
    grad = -(4.0 / c) * (weights.sum(axis=1)[:, None] * markers - weights @ markers)
    return float(inv.sum() / c), grad


def repulsive_loss(M: MarkerSet, r_d: float, epsilon: float = 1e-3) -> float:
    """R_d = r_d (R_d⁺ + R_d⁻); a single-marker group contributes 0."""
    pos, _ = _group_repulsion(M.positive, epsilon)
    neg, _ = _group_repulsion(M.negative, epsilon)
    return float(r_d * (pos + neg))


def repulsive_gradient(M: MarkerSet, r_d: float, epsilon: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
    _, g_pos = _group_repulsion(M.positive, epsilon)
    _, g_neg = _group_repulsion(M.negative, epsilon)
    return r_d * g_pos, r_d * g_neg


def _distance_coefficients(
    a: np.ndarray, q: np.ndarray, u: np.ndarray, k: int, clamp: float
) -> np.ndarray:
    """
    ∂(per-pair cross-entropy)/∂d_m with d_m = ||s - μ_m||²:
    a_m·q_m·([m in target group]/q_G - 1), zero where q_G was clamped.
    """
    similar = np.asarray(u)[:, 0] > 0.5
    target = np.zeros_like(q, dtype=bool)
    target[similar, :k] = True
    target[~similar, k:] = True
    q_target = np.where(target, q, 0.0).sum(axis=1)
    clamped = (q_target < clamp) | (q_target > 1.0 - clamp)
    coef = a * q * (target / np.where(clamped, 1.0, q_target)[:, None] - 1.0)
    coef[clamped] = 0.0
    return coef


def _ce_gradients(
    s: np.ndarray, u: np.ndarray, M: MarkerSet, r_hc: float, clamp: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (scaled H_c gradient w.r.t. s, w.r.t. M⁺, w.r.t. M⁻, per-marker q)."""
    a, q, _ = kernel_terms(s, M)
    g = s.shape[0]
    coef = _distance_coefficients(a, q, u, M.k, clamp) * (r_hc / g)
    mu = M.all
    grad_s = 2.0 * (coef.sum(axis=1)[:, None] * s - coef @ mu)
    grad_mu = -2.0 * (coef.T @ s - coef.sum(axis=0)[:, None] * mu)
    return grad_s, grad_mu[: M.k], grad_mu[M.k:], q


def marker_gradient(
    s_vectors: np.ndarray,
    u: np.ndarray,
    M: MarkerSet,
    r_hc: float,
    r_d: float,
    epsilon: float = 1e-3,
    clamp: float = 1e-7,
) -> Tuple[np.ndarray, np.ndarray]:
    """∂J/∂μ for every marker: (gradient for M⁺ shaped (k, n), for M⁻ shaped (w-k, n))."""
    s_vectors = np.atleast_2d(np.asarray(s_vectors, dtype=np.float64))
    _, ce_pos, ce_neg, _ = _ce_gradients(s_vectors, u, M, r_hc, clamp)
    rd_pos, rd_neg = repulsive_gradient(M, r_d, epsilon)
    return ce_pos + rd_pos, ce_neg + rd_neg


def pair_forward(batch: "PairBatch", features: np.ndarray, params: NetworkParams) -> PairForward:
    x = np.vstack([features[batch.i], features[batch.j]])
    z, enc_cache = forward(params.encoder, x)
    x_rec, dec_cache = forward(params.decoder, z)
    return PairForward(x, z, x_rec, enc_cache, dec_cache, len(batch.i))


def _reconstruction_backward(
    pf: PairForward, params: NetworkParams, r_r: float
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Decoder gradients of R_r and R_r's gradient at the latent codes."""
    if r_r == 0.0:
        zeros = {name: np.zeros_like(t) for name, t in params.named_tensors().items() if name.startswith("dec.")}
        return zeros, np.zeros_like(pf.z)
    grad_rec = (2.0 * r_r / pf.g) * (pf.x_rec - pf.x)
    dec_grads, grad_z = backward(params.decoder, grad_rec, pf.dec_cache)
    return named_gradients("dec", dec_grads), grad_z


def _sign_backward(grad_s: np.ndarray, pf: PairForward) -> np.ndarray:
    sign = np.sign(pf.z_i - pf.z_j)
    return np.vstack([grad_s * sign, -grad_s * sign])


def _breakdown(pf: PairForward, q: np.ndarray, u: np.ndarray, M: MarkerSet, cfg: TrainConfig) -> LossBreakdown:
    scores = PairScore(q[:, : M.k].sum(axis=1), q[:, M.k:].sum(axis=1), q)
    h_c = cross_entropy(scores, u, cfg.ce_clamp)
    r_r_term = reconstruction_loss(
        np.stack([pf.x[: pf.g], pf.x[pf.g:]], axis=1),
        np.stack([pf.x_rec[: pf.g], pf.x_rec[pf.g:]], axis=1),
        cfg.r_r,
    )
    r_d_term = repulsive_loss(M, cfg.r_d, cfg.epsilon)
    return LossBreakdown.compose(h_c, r_r_term, r_d_term, cfg.r_hc)


def batch_objective(
    batch: "PairBatch",
    features: np.ndarray,
    params: NetworkParams,
    M: MarkerSet,
    config: TrainConfig,
) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """
    Loss breakdown and every gradient (markers, Θ, Θ′) from one snapshot.
    Gradient keys match NetworkParams.named_tensors() and MarkerSet.named_tensors().
    """
    cfg = config.effective()
    pf = pair_forward(batch, features, params)
    s = np.abs(pf.z_i - pf.z_j)
    u = batch.u

    grad_s, ce_pos, ce_neg, q = _ce_gradients(s, u, M, cfg.r_hc, cfg.ce_clamp)
    breakdown = _breakdown(pf, q, u, M, cfg)

    dec_grads, grad_z_rec = _reconstruction_backward(pf, params, cfg.r_r)
    enc_grads, _ = backward(params.encoder, _sign_backward(grad_s, pf) + grad_z_rec, pf.enc_cache)
    rd_pos, rd_neg = repulsive_gradient(M, cfg.r_d, cfg.epsilon)

    grads = {"markers.pos": ce_pos + rd_pos, "markers.neg": ce_neg + rd_neg}
    grads.update(named_gradients("enc", enc_grads))
    grads.update(dec_grads)
    return breakdown, grads


def encoder_gradient(
    batch: "PairBatch", features: np.ndarray, params: NetworkParams, M: MarkerSet, config: TrainConfig
) -> Dict[str, np.ndarray]:
    """∂(r_HC·H_c + R_r)/∂Θ, both pair branches combined."""
    _, grads = batch_objective(batch, features, params, M, config)
    return {k: v for k, v in grads.items() if k.startswith("enc.")}


def decoder_gradient(
    batch: "PairBatch", features: np.ndarray, params: NetworkParams, config: TrainConfig
) -> Dict[str, np.ndarray]:
    """∂R_r/∂Θ′; cross-entropy and R_d never reach the decoder."""
    pf = pair_forward(batch, features, params)
    dec_grads, _ = _reconstruction_backward(pf, params, config.effective().r_r)
    return dec_grads


def total_loss(
    batch: "PairBatch", features: np.ndarray, params: NetworkParams, M: MarkerSet, config: TrainConfig
) -> LossBreakdown:
    """J without gradients (used by finite-difference oracles)."""
    cfg = config.effective()
    pf = pair_forward(batch, features, params)
    _, q, _ = kernel_terms(np.abs(pf.z_i - pf.z_j), M)
    return _breakdown(pf, q, batch.u, M, cfg)
