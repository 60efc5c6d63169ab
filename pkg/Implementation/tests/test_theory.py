"""Closed-form expected risk against the nested adaptive-Simpson oracle."""

import math

import pytest
from pydantic import ValidationError

from core.exceptions import QuadratureError
from modules.theory import (
    MISMATCH_FLAG,
    RiskInput,
    adaptive_simpson,
    default_grid,
    phi_plus_closed_form,
    phi_plus_numerical,
    q_plus,
    risk_closed_form,
    risk_consistency_report,
    risk_numerical,
)


def test_simpson_integrates_polynomials():
    value, _ = adaptive_simpson(lambda x: x * x, 0.0, 1.0, 1e-10)
    assert value == pytest.approx(1 / 3, abs=1e-12)


def test_simpson_reversed_bounds_negate():
    forward, _ = adaptive_simpson(math.exp, 0.0, 1.0, 1e-10)
    backward, _ = adaptive_simpson(math.exp, 1.0, 0.0, 1e-10)
    assert backward == pytest.approx(-forward)
    assert forward == pytest.approx(math.e - 1, abs=1e-9)


def test_simpson_gives_up_at_depth_limit():
    with pytest.raises(QuadratureError):
        adaptive_simpson(lambda x: math.sin(50 * x), 0.0, 10.0, 1e-12, max_depth=0)


def test_simpson_rejects_non_positive_tolerance():
    with pytest.raises(ValueError):
        adaptive_simpson(math.exp, 0.0, 1.0, 0.0)


def test_q_plus_at_origin():
    assert q_plus(0.0, 0.0) == 0.5
    assert q_plus(0.0, 1.0) == pytest.approx(2 / 3)


def test_phi_plus_hand_value():
    expected = 2 / math.sqrt(3) * math.pi / 6
    assert phi_plus_closed_form(1.0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.6046, abs=1e-4)
    numeric, _ = phi_plus_numerical(1.0, 1.0)
    assert numeric == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("point", default_grid(), ids=lambda p: f"{p.d_plus}-{p.d_minus}")
def test_phi_plus_closed_form_matches_quadrature(point):
    numeric, _ = phi_plus_numerical(point.d_plus, point.d_minus, 1e-10)
    assert numeric == pytest.approx(phi_plus_closed_form(point.d_plus, point.d_minus), abs=1e-9)


def test_zero_d_plus_gives_zero_risk():
    for d_minus in (0.0, 1.0, 5.0):
        point = RiskInput(d_plus=0.0, d_minus=d_minus)
        assert risk_closed_form(point) == pytest.approx(0.0, abs=1e-15)
        assert risk_numerical(point) == (0.0, 0.0)


@pytest.mark.parametrize("point", default_grid(), ids=lambda p: f"{p.d_plus}-{p.d_minus}")
def test_halving_tolerance_stays_within_estimate(point):
    coarse, coarse_err = risk_numerical(point, 1e-6)
    fine, _ = risk_numerical(point, 5e-7)
    assert abs(fine - coarse) <= coarse_err + 1e-12


def test_risk_grows_with_d_plus():
    values = [risk_numerical(RiskInput(d_plus=p, d_minus=1.0))[0] for p in (0.0, 0.5, 1.0, 2.0, 5.0)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_negative_or_infinite_inputs_rejected():
    with pytest.raises(ValidationError):
        RiskInput(d_plus=-1.0, d_minus=0.0)
    with pytest.raises(ValidationError):
        RiskInput(d_plus=1.0, d_minus=float("inf"))


def test_consistency_report_covers_grid():
    report = risk_consistency_report(tol=1e-8)
    assert len(report.rows) == 25
    assert report.max_abs_diff == max(r.abs_diff for r in report.rows)
    for row in report.rows:
        assert (row.flag == MISMATCH_FLAG) == (row.abs_diff > 10 * report.tol)
        if row.d_plus == 0.0:
            assert row.flag == ""
    assert report.printed_form_matches == (not any(r.flag for r in report.rows))


def test_consistency_flags_are_deterministic():
    grid = default_grid((0.0, 1.0, 2.0))
    a = risk_consistency_report(grid, 1e-7)
    b = risk_consistency_report(grid, 1e-7)
    assert [r.flag for r in a.rows] == [r.flag for r in b.rows]
    assert [r.numerical for r in a.rows] == [r.numerical for r in b.rows]


def test_closed_form_hand_value_at_unit_point():
    # √3·ln(√(3/4)) - 2(π/6)²/√3 + π/6, scaled by 2/√3
    point = RiskInput(d_plus=1.0, d_minus=1.0)
    assert risk_closed_form(point) == pytest.approx(-0.0486232, abs=1e-6)
    numeric, _ = risk_numerical(point)
    assert numeric > 0
