"""
S-space Kernel Module for SMELL

The S-space map s_ij = |z_i - z_j|, the learnable marker set, the Student-t
similarity kernel producing q⁺/q⁻, Lloyd (k-means++) marker initialization and
the q⁻ dissimilarity used by KNN.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : KernelModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <SSpaceMap>    → element-wise absolute difference                        │
  │  <MarkerSet>    → k positive + (w-k) negative markers                     │
  │  <StudentT>     → q^m = (1+||s-μ_m||²)⁻¹ / Σ (1+||s-μ||²)⁻¹              │
  │  <KMeans>       → Lloyd iterations from k-means++ or warm-start seeds     │
  │  <SmellMetric>  → frozen encoder + markers, vectorized q⁻                 │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>       ← from library (Vectorized kernel)                         │
  │  <network>     ← from core (encode)                                       │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : np.ndarray, float, int

Production Rules:
  KernelModule    → imports + <SSpaceMap> + <MarkerSet> + <StudentT> + <KMeans> + <SmellMetric>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from core.exceptions import DimensionError, MarkerError
from core.network import NetworkParams, SeedLike, encode

logger = logging.getLogger(__name__)

# Pattern: Strategy
# Purpose: SmellMetric plugs the learned similarity into any distance-based consumer (KNN).

QUERY_CHUNK = 8


def sspace_map(z_i: np.ndarray, z_j: np.ndarray) -> np.ndarray:
    """s_ij = |z_i - z_j| coordinate-wise; works on single vectors or aligned batches."""
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape != z_j.shape:
        raise DimensionError(f"latent shapes differ: {z_i.shape} vs {z_j.shape}")
    return np.abs(z_i - z_j)


@dataclass
class MarkerSet:
    """Positive markers M⁺ (k, n) and negative markers M⁻ (w-k, n)."""

    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        self.positive = np.atleast_2d(np.asarray(self.positive, dtype=np.float64))
        self.negative = np.atleast_2d(np.asarray(self.negative, dtype=np.float64))
        if self.positive.shape[0] < 1 or self.negative.shape[0] < 1 or self.positive.size == 0:
            raise MarkerError("marker set needs at least one positive and one negative marker")
        if self.positive.shape[1] != self.negative.shape[1]:
            raise DimensionError("positive and negative markers have different dimensions")

    @property
    def k(self) -> int:
        return self.positive.shape[0]

    @property
    def w(self) -> int:
        return self.positive.shape[0] + self.negative.shape[0]

    @property
    def dim(self) -> int:
        return self.positive.shape[1]

    @property
    def all(self) -> np.ndarray:
        """Markers stacked (w, n), positives first."""
        return np.vstack([self.positive, self.negative])

    def named_tensors(self) -> Dict[str, np.ndarray]:
        return {"markers.pos": self.positive, "markers.neg": self.negative}

    def copy(self) -> "MarkerSet":
        return MarkerSet(self.positive.copy(), self.negative.copy())

    def has_duplicates(self) -> bool:
        stacked = self.all
        return np.unique(stacked, axis=0).shape[0] < stacked.shape[0]


@dataclass(frozen=True)
class PairScore:
    """q⁺, q⁻ and the per-marker shares q^m for one S-vector or a batch of them."""

    q_plus: np.ndarray
    q_minus: np.ndarray
    per_marker: np.ndarray


def kernel_terms(s: np.ndarray, M: MarkerSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Raw Student-t terms for a (g, n) batch.
    Returns a = (1 + d)⁻¹, q = a / Σa and d = ||s - μ||², all shaped (g, w).
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape[1] != M.dim:
        raise DimensionError(f"S-vector width {s.shape[1]} != marker width {M.dim}")
    diff = s[:, None, :] - M.all[None, :, :]
    d = np.einsum("gwn,gwn->gw", diff, diff)
    a = 1.0 / (1.0 + d)
    q = a / a.sum(axis=1, keepdims=True)
    return a, q, d


def student_t_scores(s: np.ndarray, M: MarkerSet) -> PairScore:
    """Student-t kernel with one degree of freedom, normalized over every marker."""
    single = np.ndim(s) == 1
    _, q, _ = kernel_terms(s, M)
    q_plus = q[:, : M.k].sum(axis=1)
    q_minus = q[:, M.k:].sum(axis=1)
    if single:
        return PairScore(q_plus[0], q_minus[0], q[0])
    return PairScore(q_plus, q_minus, q)


def kmeans(
    points: np.ndarray,
    n_clusters: int,
    rng: Optional[np.random.Generator],
    max_iter: int = 50,
    tol: float = 1e-6,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Lloyd's algorithm from k-means++ seeds, or from `init` when given
    (warm start; `rng` is then unused).
    Empty clusters keep their previous centroid. Stops when no centroid moves
    more than `tol`.
    """
    points = np.asarray(points, dtype=np.float64)
    if init is not None:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (n_clusters, points.shape[1]):
            raise DimensionError(f"warm-start centroids shaped {centroids.shape}, expected {(n_clusters, points.shape[1])}")
    else:
        distinct = np.unique(points, axis=0).shape[0]
        if distinct < n_clusters:
            raise MarkerError(f"only {distinct} distinct S-vectors for {n_clusters} centroids")
        seeds = [points[rng.integers(len(points))]]
        closest = np.sum((points - seeds[0]) ** 2, axis=1)
        for _ in range(n_clusters - 1):
            probabilities = closest / closest.sum()
            idx = rng.choice(len(points), p=probabilities)
            seeds.append(points[idx])
            closest = np.minimum(closest, np.sum((points - points[idx]) ** 2, axis=1))
        centroids = np.array(seeds)

    for it in range(max_iter):
        sq = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assignment = np.argmin(sq, axis=1)
        updated = centroids.copy()
        for c in range(n_clusters):
            members = points[assignment == c]
            if len(members):
                updated[c] = members.mean(axis=0)
        shift = np.max(np.linalg.norm(updated - centroids, axis=1))
        centroids = updated
        if shift <= tol:
            logger.debug("k-means converged after %d iterations", it + 1)
            break
    return centroids


def marker_init(
    s_vectors: np.ndarray,
    similar: np.ndarray,
    k: int,
    w: int,
    seed: SeedLike,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> MarkerSet:
    """
    M⁺ = k centroids of the similar-pair S-vectors, M⁻ = (w - k) centroids of
    the dissimilar-pair S-vectors.
    """
    if k < 1 or w - k < 1:
        raise MarkerError(f"need k >= 1 and w - k >= 1 (got k={k}, w={w})")
    s_vectors = np.asarray(s_vectors, dtype=np.float64)
    similar = np.asarray(similar, dtype=bool)
    rng = np.random.default_rng(seed)
    positive = kmeans(s_vectors[similar], k, rng, max_iter, tol)
    negative = kmeans(s_vectors[~similar], w - k, rng, max_iter, tol)
    markers = MarkerSet(positive, negative)
    if markers.has_duplicates():
        raise MarkerError("marker initialization produced bit-identical markers")
    return markers


def marker_refit(
    M: MarkerSet,
    s_vectors: np.ndarray,
    similar: np.ndarray,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> MarkerSet:
    """
    Lloyd iterations warm-started from the current markers, each group on its
    own S-vectors. Marker identities are kept: μ⁺_t stays the t-th positive.
    """
    s_vectors = np.asarray(s_vectors, dtype=np.float64)
    similar = np.asarray(similar, dtype=bool)
    if not similar.any() or similar.all():
        raise MarkerError("marker refit needs both similar and dissimilar S-vectors")
    positive = kmeans(s_vectors[similar], M.k, None, max_iter, tol, init=M.positive)
    negative = kmeans(s_vectors[~similar], M.w - M.k, None, max_iter, tol, init=M.negative)
    return MarkerSet(positive, negative)


def euclidean_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distance matrix (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], QUERY_CHUNK):
        block = a[start:start + QUERY_CHUNK]
        out[start:start + len(block)] = np.sqrt(np.sum((block[:, None, :] - b[None, :, :]) ** 2, axis=2))
    return out


class SmellMetric:
    """Frozen encoder + marker snapshot; dissimilarity is q⁻ in [0, 1]."""

    def __init__(self, params: NetworkParams, markers: MarkerSet):
        self.params = params.copy()
        self.markers = markers.copy()

    def embed(self, x: np.ndarray) -> np.ndarray:
        return encode(self.params, np.atleast_2d(x))

    def pairwise(self, za: np.ndarray, zb: np.ndarray) -> np.ndarray:
        """q⁻ for every (row of za, row of zb) pair, shaped (len(za), len(zb))."""
        za = np.atleast_2d(za)
        zb = np.atleast_2d(zb)
        out = np.empty((za.shape[0], zb.shape[0]))
        for start in range(0, za.shape[0], QUERY_CHUNK):
            block = za[start:start + QUERY_CHUNK]
            s = np.abs(block[:, None, :] - zb[None, :, :]).reshape(-1, zb.shape[1])
            out[start:start + len(block)] = student_t_scores(s, self.markers).q_minus.reshape(len(block), -1)
        return out


def distance_for_knn(
    x_i: np.ndarray, x_j: np.ndarray, params: NetworkParams, M: MarkerSet
) -> Union[float, np.ndarray]:
    """q⁻_ij = 1 - q⁺_ij for a pair of raw feature vectors; 0 means maximally similar."""
    s = sspace_map(encode(params, x_i), encode(params, x_j))
    q_minus = student_t_scores(s, M).q_minus
    return float(q_minus) if np.ndim(q_minus) == 0 else q_minus
