"""
Exporter Module for SMELL

Writes plot-ready embeddings of a trained model: the latent vectors z of
every row, a balanced sample of S-vectors with their pair labels, the marker
coordinates and, optionally, a two-component PCA of the S-vectors.

PCA sign convention: each component is flipped so that its largest-magnitude
loading is positive (first such loading on ties).

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : ExporterModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <PCA>          → covariance eigendecomposition, sorted, sign-fixed       │
  │  <ExportLatent> → latent.csv                                              │
  │  <ExportPairs>  → svectors.csv (+ pc1, pc2)                               │
  │  <ExportMarks>  → markers.json                                            │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>          ← from library (eigh)                                   │
  │  <pandas>         ← from library (tables)                                 │
  │  <reporter>       ← from modules (RunWriter)                              │
  │  <data_pipeline>  ← from modules (sample_pair_batch)                      │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : "latent.csv", "svectors.csv", "markers.json"

Production Rules:
  ExporterModule  → imports + <PCA> + <ExportLatent> + <ExportPairs> + <ExportMarks>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd

from core.kernel import sspace_map
from core.network import encode
from modules.data_pipeline import Dataset, sample_pair_batch
from modules.reporter import RunWriter, markers_payload
from modules.trainer import TrainedModel

logger = logging.getLogger(__name__)

# Pattern: Simple implementation, no pattern needed

LATENT_FILE = "latent.csv"
SVECTOR_FILE = "svectors.csv"
MARKER_FILE = "markers.json"


@dataclass(frozen=True)
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def transform(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.mean) @ self.components.T


def pca_fit(points: np.ndarray, n_components: int = 2) -> PCAProjection:
    """Principal axes of the sample covariance, largest eigenvalue first."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n_components = min(n_components, points.shape[1])
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / max(len(points) - 1, 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues, kind="stable")[::-1][:n_components]
    components = eigenvectors[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PCAProjection(mean, components, eigenvalues[order])


def _columns(prefix: str, width: int):
    return [f"{prefix}{c}" for c in range(width)]


def export_embeddings(
    model: TrainedModel,
    dataset: Dataset,
    writer: RunWriter,
    with_pca2: bool = False,
    seed: int = 0,
) -> Dict[str, Path]:
    """
    latent.csv has one row per dataset row; svectors.csv holds
    export_pairs_per_group similar plus as many dissimilar pairs.
    """
    z = encode(model.params, dataset.features)
    latent = pd.DataFrame(z, columns=_columns("z", z.shape[1]))
    latent["label"] = dataset.labels
    paths = {"latent": writer.write_frame(LATENT_FILE, latent)}

    per_group = model.config.export_pairs_per_group
    batch = sample_pair_batch(dataset, None, None, 2 * per_group, np.random.default_rng(seed))
    s = sspace_map(z[batch.i], z[batch.j])
    pairs = pd.DataFrame({"i": batch.i, "j": batch.j, "similar": batch.similar.astype(int)})
    pairs = pd.concat([pairs, pd.DataFrame(s, columns=_columns("s", s.shape[1]))], axis=1)
    if with_pca2:
        projection = pca_fit(s, 2)
        coords = projection.transform(s)
        for c in range(coords.shape[1]):
            pairs[f"pc{c + 1}"] = coords[:, c]
        logger.info("PCA eigenvalues: %s", projection.eigenvalues.tolist())
    paths["svectors"] = writer.write_frame(SVECTOR_FILE, pairs)
    paths["markers"] = writer.write_json(MARKER_FILE, markers_payload(model.markers))
    return paths
