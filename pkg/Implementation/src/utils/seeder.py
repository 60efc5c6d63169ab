"""
Dataset Seeder for SMELL

Writes the bundled benchmark CSVs (Monk-2, Iris) and the synthetic fixtures
into data/datasets/ so the eval/ablate commands have inputs without any
download step.

Pattern: Simple implementation, no pattern needed
"""

import logging
import os
import sys
from pathlib import Path
from typing import Dict, Iterable, Union

# Fix path to allow importing from parent directories
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from modules.data_pipeline import save_csv
from utils.synth_generator import GENERATORS, generate

logger = logging.getLogger(__name__)

DATASETS_DIR = Path(__file__).parent.parent.parent / "data" / "datasets"


def run_seeder(
    out_dir: Union[str, Path] = DATASETS_DIR,
    seed: int = 0,
    kinds: Iterable[str] = tuple(GENERATORS),
) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    written = {}
    for kind in kinds:
        written[kind] = save_csv(generate(kind, seed), out_dir / f"{kind}.csv")
        logger.info("seeded %s", written[kind])
    return written


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    paths = run_seeder()
    print(f"--- Seeded {len(paths)} datasets into {DATASETS_DIR} ---")
