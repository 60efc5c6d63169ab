"""
Theory Module for SMELL

Executable audit of the positive-marker misclassification risk R⁺(D⁺, D⁻):
the printed closed form evaluated verbatim, and an adaptive-Simpson oracle of
its defining double integral

    R⁺ = ∫₀^{D⁺} (1 - q⁺(t)) Φ⁺(t) dt,   Φ⁺(x) = ∫₀^x q⁺(y) dy,
    q⁺(y; D⁻) = (1 + D⁻²) / (2 + y² + D⁻²).

The oracle is authoritative; the closed form is only compared against it.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : TheoryModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <AdaptiveSimpson>  → recursive Simpson with Richardson correction        │
  │  <PhiPlus>          → CDF of q⁺, closed form and numerical                │
  │  <RiskClosedForm>   → printed expression, term by term                    │
  │  <RiskNumerical>    → nested quadrature with error estimate               │
  │  <Consistency>      → grid comparison, mismatch flags                     │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <math>        ← Standard lib                                             │
  │  <pydantic>    ← from library (RiskInput, report rows)                    │
  │  <exceptions>  ← from core (QuadratureError)                              │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : float, "PRINTED-FORM MISMATCH"

Production Rules:
  TheoryModule   → imports + <AdaptiveSimpson> + <PhiPlus> + <RiskClosedForm>
                   + <RiskNumerical> + <Consistency>
═══════════════════════════════════════════════════════════════════════════════
"""

import logging
import math
from itertools import product
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from core.exceptions import QuadratureError

logger = logging.getLogger(__name__)

# Pattern: Simple implementation, no pattern needed

DEFAULT_TOL = 1e-8
MAX_DEPTH = 40
MISMATCH_FACTOR = 10.0
MISMATCH_FLAG = "PRINTED-FORM MISMATCH"
DEFAULT_GRID = (0.0, 0.5, 1.0, 2.0, 5.0)


class RiskInput(BaseModel):
    model_config = ConfigDict(frozen=True)

    d_plus: float = Field(ge=0, allow_inf_nan=False)
    d_minus: float = Field(ge=0, allow_inf_nan=False)


class RiskRow(BaseModel):
    d_plus: float
    d_minus: float
    closed_form: float
    numerical: float
    abs_diff: float
    error_estimate: float
    flag: str = ""


class ConsistencyReport(BaseModel):
    tol: float
    rows: List[RiskRow]
    max_abs_diff: float
    printed_form_matches: bool


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = DEFAULT_TOL,
    max_depth: int = MAX_DEPTH,
) -> Tuple[float, float]:
    """
    ∫ₐᵇ f with recursive Simpson subdivision; returns (value, error estimate).
    Each half gets tol/2. Raises QuadratureError when a panel reaches
    max_depth without meeting its share of the tolerance.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    if a == b:
        return 0.0, 0.0
    if a > b:
        value, err = adaptive_simpson(f, b, a, tol, max_depth)
        return -value, err

    def simpson(fa: float, fm: float, fb: float, h: float) -> float:
        return h / 3.0 * (fa + 4.0 * fm + fb)

    def recurse(lo: float, hi: float, flo: float, fmid: float, fhi: float,
                whole: float, depth: int, panel_tol: float) -> Tuple[float, float]:
        mid = (lo + hi) / 2.0
        h = (hi - lo) / 4.0
        flm = f((lo + mid) / 2.0)
        frm = f((mid + hi) / 2.0)
        left = simpson(flo, flm, fmid, h)
        right = simpson(fmid, frm, fhi, h)
        estimate = (left + right - whole) / 15.0
        if abs(estimate) < panel_tol:
            return left + right + estimate, abs(estimate)
        if depth >= max_depth:
            raise QuadratureError(
                f"depth {max_depth} exhausted on [{lo:.6g}, {hi:.6g}] (estimate {abs(estimate):.3g} >= {panel_tol:.3g})"
            )
        lv, le = recurse(lo, mid, flo, flm, fmid, left, depth + 1, panel_tol / 2.0)
        rv, re = recurse(mid, hi, fmid, frm, fhi, right, depth + 1, panel_tol / 2.0)
        return lv + rv, le + re

    fa, fm, fb = f(a), f((a + b) / 2.0), f(b)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, (b - a) / 2.0), 0, tol)


def q_plus(y: float, d_minus: float) -> float:
    dm2 = d_minus * d_minus
    return (1.0 + dm2) / (2.0 + y * y + dm2)


def phi_plus_closed_form(x: float, d_minus: float) -> float:
    """Φ⁺(x) = (D⁻² + 1)·atan(x / √(D⁻² + 2)) / √(D⁻² + 2)."""
    root = math.sqrt(d_minus * d_minus + 2.0)
    return (d_minus * d_minus + 1.0) * math.atan(x / root) / root


def phi_plus_numerical(x: float, d_minus: float, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    return adaptive_simpson(lambda y: q_plus(y, d_minus), 0.0, x, tol)


def risk_closed_form(risk: RiskInput) -> float:
    """Reference closed form, transcribed term by term without simplification."""
    dp, dm = risk.d_plus, risk.d_minus
    dm2 = dm * dm
    root = math.sqrt(dm2 + 2.0)
    log_term = root * math.log(1.0 / math.sqrt(dp * dp / (dm2 + 2.0) + 1.0))
    atan_sq_term = (dm2 + 1.0) * math.atan(dp / root) ** 2 / root
    tail_term = dp * math.atan(dp * dp / root)
    return (dm2 + 1.0) / root * (log_term - atan_sq_term + tail_term)


def risk_numerical(risk: RiskInput, tol: float = DEFAULT_TOL) -> Tuple[float, float]:
    """
    Nested quadrature of the defining integral.
    Returns (value, error estimate); the estimate is the outer estimate plus
    D⁺ times the worst inner estimate.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    dp, dm = risk.d_plus, risk.d_minus
    if dp == 0.0:
        return 0.0, 0.0
    inner_tol = tol / (2.0 * max(dp, 1.0))
    worst_inner = 0.0

    def integrand(t: float) -> float:
        nonlocal worst_inner
        phi, err = phi_plus_numerical(t, dm, inner_tol)
        worst_inner = max(worst_inner, err)
        return (1.0 - q_plus(t, dm)) * phi

    value, outer_err = adaptive_simpson(integrand, 0.0, dp, tol / 2.0)
    return value, outer_err + dp * worst_inner


def risk_consistency_report(
    grid: Optional[Iterable[RiskInput]] = None,
    tol: float = DEFAULT_TOL,
) -> ConsistencyReport:
    """Closed form vs oracle on every grid point; rows beyond 10·tol are flagged."""
    points: Sequence[RiskInput] = list(grid) if grid is not None else default_grid()
    rows = []
    for point in points:
        closed = risk_closed_form(point)
        numeric, err = risk_numerical(point, tol)
        diff = abs(closed - numeric)
        flag = MISMATCH_FLAG if diff > MISMATCH_FACTOR * tol else ""
        if flag:
            logger.warning("D+=%g D-=%g: closed form %.10g vs oracle %.10g", point.d_plus, point.d_minus,
                           closed, numeric)
        rows.append(RiskRow(d_plus=point.d_plus, d_minus=point.d_minus, closed_form=closed,
                            numerical=numeric, abs_diff=diff, error_estimate=err, flag=flag))
    max_diff = max((r.abs_diff for r in rows), default=0.0)
    return ConsistencyReport(tol=tol, rows=rows, max_abs_diff=max_diff,
                             printed_form_matches=not any(r.flag for r in rows))


def default_grid(values: Sequence[float] = DEFAULT_GRID) -> List[RiskInput]:
    return [RiskInput(d_plus=p, d_minus=m) for p, m in product(values, values)]
