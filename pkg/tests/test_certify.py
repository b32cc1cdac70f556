import csv
import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from biphoton_epr.certify import (EPR_BOUND, EprReport, ScalingFit, epr_certify, fit_csv_row,
                                  fit_scaling_law, monte_carlo_product_uncertainty,
                                  ratio_with_uncertainty, reports_csv)
from biphoton_epr.fit import FitResult

# measured products per waist (um): value, uncertainty (hbar)
SHORT = [(60, 0.18, 0.02), (80, 0.17, 0.01), (140, 0.11, 0.01), (160, 0.09, 0.01)]
LONG = [(60, 0.33, 0.03), (80, 0.27, 0.02), (140, 0.16, 0.01), (160, 0.16, 0.01)]


def test_row_one_product():
    rep = epr_certify((7.5, 0.6), (24.6, 0.4))
    assert rep.product == pytest.approx(0.1845, rel=1e-12)
    # first-order: hypot(24.6 * 0.6, 7.5 * 0.4) * 1e-3
    assert rep.product_uncertainty == pytest.approx(0.015061792721983661, rel=1e-12)
    assert rep.violated
    assert rep.significance == pytest.approx((0.5 - 0.1845) / 0.015061792721983661)
    assert round(rep.product, 2) == 0.18 and round(rep.product_uncertainty, 2) == 0.02


def test_long_crystal_row():
    rep = epr_certify((14.3, 0.4), (11.3, 0.4))
    assert rep.product == pytest.approx(0.16159, rel=1e-4)
    assert rep.product_uncertainty == pytest.approx(0.007290322352269481, rel=1e-9)
    assert round(rep.product, 2) == 0.16 and rep.violated


def test_verdict_needs_significance():
    assert not epr_certify((20.0, 1.0), (30.0, 1.0)).violated       # above the bound
    marginal = epr_certify((10.0, 2.0), (45.0, 5.0))                 # 0.45 +- 0.1
    assert marginal.product < EPR_BOUND and not marginal.violated
    assert epr_certify((10.0, 2.0), (45.0, 5.0), threshold_sigma=0.1).violated


def test_zero_uncertainty():
    rep = epr_certify((7.5, 0.0), (24.6, 0.0))
    assert rep.product_uncertainty == 0.0
    assert math.isinf(rep.significance) and rep.violated


def test_accepts_fit_results():
    fr = FitResult(width=7.5, amplitude=1, center=(0, 0), offset=0, width_uncertainty=0.6, goodness=0)
    fp = FitResult(width=24.6, amplitude=1, center=(0, 0), offset=0, width_uncertainty=0.4,
                   goodness=0, units="hbar/mm")
    assert epr_certify(fr, fp).product == epr_certify((7.5, 0.6), (24.6, 0.4)).product


def test_monte_carlo_row_one():
    mc = monte_carlo_product_uncertainty((7.5, 0.6), (24.6, 0.4), n=200_000, seed=0)
    first = epr_certify((7.5, 0.6), (24.6, 0.4)).product_uncertainty
    assert mc == pytest.approx(first, rel=0.05)


@given(r=st.floats(2.0, 30.0), p=st.floats(5.0, 60.0), fr=st.floats(0.001, 0.08),
       fp=st.floats(0.001, 0.08), seed=st.integers(0, 1000))
def test_monte_carlo_matches_first_order(r, p, fr, fp, seed):
    first = epr_certify((r, fr * r), (p, fp * p)).product_uncertainty
    mc = monte_carlo_product_uncertainty((r, fr * r), (p, fp * p), n=100_000, seed=seed)
    assert mc == pytest.approx(first, rel=0.05)


def test_scaling_law_exact_data():
    pts = [(w, 12.0 / w, 0.01) for w in (60, 80, 140, 160)]
    fit = fit_scaling_law(pts)
    assert fit.a == pytest.approx(12.0, rel=1e-12)
    assert fit.chi2 == pytest.approx(0.0, abs=1e-18)
    assert fit.weighted and fit.n_points == 4


def test_scaling_law_measured_columns():
    # independent reference: scipy curve_fit with absolute sigma
    short, long_ = fit_scaling_law(SHORT), fit_scaling_law(LONG)
    assert short.a == pytest.approx(13.374025235307549, rel=1e-6)
    assert short.a_uncertainty == pytest.approx(0.5627422343642273, rel=1e-6)
    assert long_.a == pytest.approx(22.484389221347605, rel=1e-6)
    assert 11.0 <= short.a <= 14.0
    ratio, err = ratio_with_uncertainty(short, long_)
    # the longer crystal carries the larger coefficient
    assert 0.55 < ratio < 0.7
    assert err == pytest.approx(ratio * math.hypot(0.5627 / 13.374, 0.7905 / 22.484), rel=1e-3)


def test_scaling_law_unweighted():
    fit = fit_scaling_law([(w, y) for w, y, _ in SHORT])
    assert not fit.weighted
    assert fit.a == pytest.approx(12.35085345801658, rel=1e-6)
    assert fit.a_uncertainty == pytest.approx(0.9929623435986048, rel=1e-6)


def test_scaling_law_errors():
    with pytest.raises(ValueError):
        fit_scaling_law([(60, 0.2, 0.01)])
    with pytest.raises(ValueError):
        fit_scaling_law([(60, 0.2, 0.01), (60, 0.3, 0.01)])
    with pytest.raises(ValueError):
        fit_scaling_law([(-60, 0.2, 0.01), (60, 0.3, 0.01)])


def test_report_serialization():
    rep = epr_certify((7.5, 0.6), (24.6, 0.4), pump_waist=60, crystal_length=5,
                      provenance={"config_hash": "ab" * 32, "seed": 3, "n_frames": 10})
    text = rep.to_text()
    assert "7.500 +- 0.600 um" in text and "0.1845 +- 0.0151 hbar" in text and "VIOLATED" in text
    rows = list(csv.DictReader(io.StringIO(reports_csv([rep, rep]))))
    assert len(rows) == 2
    assert set(rows[0]) == set(EprReport.CSV_FIELDS)
    assert float(rows[0]["product_hbar"]) == pytest.approx(0.1845)
    assert rows[0]["violated"] == "true" and rows[0]["seed"] == "3"


def test_fit_csv_row():
    fit = FitResult(width=2.0, amplitude=1, center=(0.5, -0.5), offset=0, width_uncertainty=0.1,
                    goodness=0.01)
    row = fit_csv_row(fit, "minus_position")
    assert row["kind"] == "minus_position" and row["center_x"] == -0.5 and "center" not in row


def test_ratio_with_uncertainty():
    r, dr = ratio_with_uncertainty(ScalingFit(2.0, 0.2, 0, 2, True), ScalingFit(1.0, 0.1, 0, 2, True))
    assert r == 2.0 and dr == pytest.approx(2.0 * math.sqrt(0.02))
