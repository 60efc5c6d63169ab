"""
Exception Hierarchy for SMELL

Every failure the pipeline raises on purpose derives from SmellError, so the
CLI facade can map user mistakes to exit code 2 and everything else to 1.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : ExceptionsModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <UserErrors>     → DatasetError, ConfigError, IntegrityError             │
  │  <RuntimeErrors>  → DimensionError, TrainingDivergedError, MarkerError,   │
  │                     EmptyBatchError, AggregationError, QuadratureError,   │
  │                     FoldError                                             │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : str, int

Production Rules:
  ExceptionsModule → SmellError + <UserErrors> + <RuntimeErrors>
═══════════════════════════════════════════════════════════════════════════════
"""

from typing import Optional

# Pattern: Simple implementation, no pattern needed


class SmellError(Exception):
    """Base class for every error raised deliberately by the toolkit."""

    user_error = False


class DatasetError(SmellError):
    """Malformed or unusable input data (bad cell, single class, tiny class)."""

    user_error = True


class ConfigError(SmellError):
    """Configuration file or override that fails validation."""

    user_error = True


class IntegrityError(SmellError):
    """Checkpoint content does not match the hash sealed in its header."""

    user_error = True


class DimensionError(SmellError):
    """Array widths that do not chain (wrong input width, stale cache)."""


class MarkerError(SmellError):
    """Marker set cannot be built (too few distinct S-vectors, duplicates)."""


class EmptyBatchError(SmellError):
    """A loss was requested over zero pairs."""


class AggregationError(SmellError):
    """Benchmark matrix is ragged: some method misses some dataset."""


class QuadratureError(SmellError):
    """Adaptive quadrature ran out of depth before meeting its tolerance."""


class TrainingDivergedError(SmellError):
    """A loss term or gradient became NaN/Inf."""

    def __init__(self, message: str, step: Optional[int] = None, phase: str = "joint"):
        self.step = step
        self.phase = phase
        where = f" ({phase} step {step})" if step is not None else f" ({phase})"
        super().__init__(message + where)
        self.message = message

    def __reduce__(self):
        return type(self), (self.message, self.step, self.phase)


class FoldError(SmellError):
    """Wraps a failure raised while training or scoring one CV fold."""

    def __init__(self, fold: int, cause: BaseException):
        self.fold = fold
        self.cause = cause
        super().__init__(f"fold {fold}: {cause}")

    def __reduce__(self):
        return type(self), (self.fold, self.cause)

    @property
    def user_error(self) -> bool:  # type: ignore[override]
        return getattr(self.cause, "user_error", False)
