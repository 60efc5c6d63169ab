"""
Synthetic Dataset Generator for SMELL

Seeded fixtures with known geometry: separable Gaussians, a class split into
two disjoint regions around the other class, a disk inside a ring, and the
Monk-2 concept over its full attribute grid.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : SynthGenerator (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <GenGaussians>  → two separable 2-D blobs                                │
  │  <GenDisjoint>   → class A in two clusters flanking class B               │
  │  <GenRing>       → disk (class 1) inside a ring (class 2)                 │
  │  <GenMonk2>      → 432-row attribute grid, "exactly two first values"     │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>          ← from library (seeded Generator)                       │
  │  <data_pipeline>  ← from modules (Dataset)                                │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : Dataset, int, float

Production Rules:
  SynthGenerator  → imports + <GenGaussians> + <GenDisjoint> + <GenRing> + <GenMonk2>
═══════════════════════════════════════════════════════════════════════════════
"""

from itertools import product
from typing import Callable, Dict

import numpy as np

from modules.data_pipeline import Dataset

# Pattern: Factory (of datasets)
# Purpose: Dynamic generation of fixtures based on the requested kind.

MONK_VALUES = (3, 3, 2, 3, 4, 2)


def two_gaussians(n_rows: int = 100, distance: float = 4.0, std: float = 0.5, seed: int = 0) -> Dataset:
    """Two isotropic 2-D blobs centred at (±distance/2, 0)."""
    rng = np.random.default_rng(seed)
    n_a = n_rows // 2
    centres = np.array([[-distance / 2.0, 0.0], [distance / 2.0, 0.0]])
    labels = np.concatenate([np.ones(n_a, dtype=np.int64), np.full(n_rows - n_a, 2, dtype=np.int64)])
    features = centres[labels - 1] + rng.normal(0.0, std, size=(n_rows, 2))
    return Dataset(features, labels, "two_gaussians", ("A", "B"))


def disjoint_regions(
    n_rows: int = 300,
    separation: float = 10.0,
    spread: float = 1.0,
    seed: int = 0,
    noise_dims: int = 0,
) -> Dataset:
    """
    Class A: two clusters at (±separation·spread, 0), half of A each.
    Class B: one cluster at the origin, sitting between them.
    noise_dims appends columns uniform over [-offset, offset] that carry no
    class information.
    """
    rng = np.random.default_rng(seed)
    n_a = n_rows // 2
    n_left = n_a // 2
    offset = separation * spread
    centres = np.concatenate([
        np.tile([-offset, 0.0], (n_left, 1)),
        np.tile([offset, 0.0], (n_a - n_left, 1)),
        np.zeros((n_rows - n_a, 2)),
    ])
    features = centres + rng.normal(0.0, spread, size=(n_rows, 2))
    if noise_dims < 0:
        raise ValueError(f"noise_dims must be non-negative, got {noise_dims}")
    if noise_dims:
        features = np.hstack([features, rng.uniform(-offset, offset, size=(n_rows, noise_dims))])
    labels = np.concatenate([np.ones(n_a, dtype=np.int64), np.full(n_rows - n_a, 2, dtype=np.int64)])
    return Dataset(features, labels, "disjoint_regions", ("A", "B"))


def ring_vs_disk(
    n_rows: int = 400,
    disk_radius: float = 1.0,
    ring_inner: float = 2.0,
    ring_outer: float = 3.0,
    seed: int = 0,
) -> Dataset:
    """Points uniform by area in a disk (class 1) and in a surrounding annulus (class 2)."""
    rng = np.random.default_rng(seed)
    n_disk = n_rows // 2
    n_ring = n_rows - n_disk
    radius = np.concatenate([
        disk_radius * np.sqrt(rng.uniform(0.0, 1.0, n_disk)),
        np.sqrt(rng.uniform(ring_inner ** 2, ring_outer ** 2, n_ring)),
    ])
    angle = rng.uniform(0.0, 2.0 * np.pi, n_rows)
    features = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    labels = np.concatenate([np.ones(n_disk, dtype=np.int64), np.full(n_ring, 2, dtype=np.int64)])
    return Dataset(features, labels, "ring_vs_disk", ("disk", "ring"))


def monk2() -> Dataset:
    """
    Every combination of the six Monk attributes (3·3·2·3·4·2 = 432 rows).
    Class "1" iff exactly two attributes take their first value.
    """
    grid = np.array(list(product(*[range(1, n + 1) for n in MONK_VALUES])), dtype=np.float64)
    target = (np.sum(grid == 1, axis=1) == 2).astype(np.int64)
    return Dataset(grid, target + 1, "monk2", ("0", "1"))


def iris() -> Dataset:
    from sklearn.datasets import load_iris

    bunch = load_iris()
    return Dataset(bunch.data, bunch.target + 1, "iris", tuple(str(n) for n in bunch.target_names))


GENERATORS: Dict[str, Callable[..., Dataset]] = {
    "two_gaussians": two_gaussians,
    "disjoint_regions": disjoint_regions,
    "ring_vs_disk": ring_vs_disk,
    "monk2": monk2,
    "iris": iris,
}
SEEDED = ("two_gaussians", "disjoint_regions", "ring_vs_disk")


def generate(kind: str, seed: int = 0, **options) -> Dataset:
    if kind not in GENERATORS:
        raise KeyError(f"unknown synthetic kind {kind!r}; choose from {sorted(GENERATORS)}")
    if kind in SEEDED:
        return GENERATORS[kind](seed=seed, **options)
    return GENERATORS[kind]()
