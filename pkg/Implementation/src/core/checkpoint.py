"""
Checkpoint Module for SMELL

Seals a trained model (Θ, Θ′, markers, config) into one .npz container whose
header carries a SHA-256 over every tensor. Loading re-hashes and refuses
tampered or truncated files.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : CheckpointModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <SaveCheckpoint>  → tensors + __header__ JSON → .npz                     │
  │  <LoadCheckpoint>  → .npz → verify hash → CheckpointContents              │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>       ← from library (npz container)                             │
  │  <hasher>      ← from core (fingerprint_tensors, verify_integrity)        │
  │  <config>      ← from core (TrainConfig)                                  │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : Path, dict, "smell-checkpoint"

Production Rules:
  CheckpointModule → imports + <SaveCheckpoint> + <LoadCheckpoint>
═══════════════════════════════════════════════════════════════════════════════
"""

import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from core.config import TrainConfig
from core.exceptions import ConfigError, IntegrityError
from core.hasher import fingerprint_tensors, verify_integrity
from core.kernel import MarkerSet
from core.network import NetworkParams

logger = logging.getLogger(__name__)

# Pattern: Memento
# Purpose: Captures the full trained state so it can be restored bit-exactly.

FORMAT_NAME = "smell-checkpoint"
FORMAT_VERSION = 1
HEADER_KEY = "__header__"
PRETRAINED_PREFIX = "pre."
INITIAL_MARKERS_PREFIX = "init."
ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


@dataclass
class CheckpointContents:
    params: NetworkParams
    markers: MarkerSet
    config: TrainConfig
    pretrained: Optional[NetworkParams] = None
    initial_markers: Optional[MarkerSet] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def _collect_tensors(params: NetworkParams, markers: MarkerSet, pretrained: Optional[NetworkParams],
                     initial_markers: Optional[MarkerSet]) -> Dict[str, np.ndarray]:
    tensors = dict(params.named_tensors())
    tensors.update(markers.named_tensors())
    if pretrained is not None:
        tensors.update({PRETRAINED_PREFIX + k: v for k, v in pretrained.named_tensors().items()})
    if initial_markers is not None:
        tensors.update({INITIAL_MARKERS_PREFIX + k: v for k, v in initial_markers.named_tensors().items()})
    return tensors


def _initial_markers(tensors: Dict[str, np.ndarray]) -> Optional[MarkerSet]:
    pos, neg = INITIAL_MARKERS_PREFIX + "markers.pos", INITIAL_MARKERS_PREFIX + "markers.neg"
    if pos not in tensors or neg not in tensors:
        return None
    return MarkerSet(tensors[pos], tensors[neg])


def save_checkpoint(
    path: Union[str, Path],
    params: NetworkParams,
    markers: MarkerSet,
    config: TrainConfig,
    pretrained: Optional[NetworkParams] = None,
    metadata: Optional[Dict[str, Any]] = None,
    initial_markers: Optional[MarkerSet] = None,
) -> str:
    """Writes the container and returns the sealed tensor hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = _collect_tensors(params, markers, pretrained, initial_markers)
    digest = fingerprint_tensors(tensors)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "shapes": {name: list(t.shape) for name, t in sorted(tensors.items())},
        "sha256": digest,
        "config": config.model_dump(mode="json"),
        "metadata": metadata or {},
    }
    encoded = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    entries = {HEADER_KEY: encoded, **dict(sorted(tensors.items()))}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, arr in entries.items():
            # fixed entry timestamps keep rewritten checkpoints byte-identical
            info = zipfile.ZipInfo(name + ".npy", date_time=ZIP_TIMESTAMP)
            with archive.open(info, "w", force_zip64=True) as f:
                np.lib.format.write_array(f, np.ascontiguousarray(arr), allow_pickle=False)
    logger.info("checkpoint saved: %s (sha256 %s)", path, digest[:12])
    return digest


def load_checkpoint(path: Union[str, Path]) -> CheckpointContents:
    """
    Restores a checkpoint.
    Raises IntegrityError when the header is missing, the format is unknown
    or the tensor hash no longer matches.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            if HEADER_KEY not in archive.files:
                raise IntegrityError(f"{path}: missing checkpoint header")
            header = json.loads(archive[HEADER_KEY].tobytes().decode("utf-8"))
            tensors = {name: archive[name] for name in archive.files if name != HEADER_KEY}
    except (zipfile.BadZipFile, ValueError, OSError, UnicodeDecodeError) as e:
        raise IntegrityError(f"{path}: unreadable checkpoint ({e})") from e

    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint format {header.get('format')!r} "
                             f"v{header.get('version')}")
    if not verify_integrity(tensors, header.get("sha256", "")):
        raise IntegrityError(f"{path}: tensor hash mismatch, checkpoint was modified")

    try:
        config = TrainConfig(**header["config"])
    except ValidationError as e:
        raise ConfigError(f"{path}: stored config is invalid: {e}") from e

    pretrained_tensors = {k[len(PRETRAINED_PREFIX):]: v for k, v in tensors.items()
                          if k.startswith(PRETRAINED_PREFIX)}
    return CheckpointContents(
        params=NetworkParams.from_tensors(tensors),
        markers=MarkerSet(tensors["markers.pos"], tensors["markers.neg"]),
        config=config,
        pretrained=NetworkParams.from_tensors(pretrained_tensors) if pretrained_tensors else None,
        initial_markers=_initial_markers(tensors),
        metadata=header.get("metadata", {}),
    )
