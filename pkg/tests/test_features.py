from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecaster.features import FeatureError, FeatureReport, pearson, rank_and_select, select_from_profiles
from forecaster.workload import COUNTER_NAMES


def exact_pearson(x, y):
    """Two-pass formula in rational arithmetic; only the final sqrt is float."""
    fx = [Fraction(v) for v in x]
    fy = [Fraction(v) for v in y]
    mx = sum(fx) / len(fx)
    my = sum(fy) / len(fy)
    sxy = sum((a - mx) * (b - my) for a, b in zip(fx, fy))
    sxx = sum((a - mx) ** 2 for a in fx)
    syy = sum((b - my) ** 2 for b in fy)
    if sxx == 0 or syy == 0:
        return 0.0
    r2 = sxy * sxy / (sxx * syy)
    return float(np.sign(float(sxy))) * float(r2) ** 0.5


def test_perfect_correlations():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)


def test_constant_series_is_zero():
    assert pearson(np.ones(5), np.arange(5.0)) == 0.0


def test_length_checks():
    with pytest.raises(FeatureError):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(FeatureError):
        pearson([1.0], [2.0])


# squares of tiny magnitudes underflow in double precision, so keep |v| away from 0
finite = st.floats(-1e3, 1e3).filter(lambda v: v == 0 or abs(v) > 1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40))
def test_matches_rational_reference(pairs):
    x, y = map(np.array, zip(*pairs))
    assert pearson(x, y) == pytest.approx(exact_pearson(x, y), abs=1e-9)


def test_cutoff_is_strict():
    n = 200
    rng = np.random.default_rng(0)
    y = rng.standard_normal(n)
    m = np.column_stack([y, rng.standard_normal(n)])
    r = rank_and_select(m, y, cutoff=1.0, names=["a", "b"])
    assert r.selected == ()
    r = rank_and_select(m, y, cutoff=0.999, names=["a", "b"])
    assert r.selected == ("a",)


def test_report_roundtrip_and_table():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(100)
    m = np.column_stack([y + 0.1 * rng.standard_normal(100) for _ in range(24)])
    r = rank_and_select(m, y)
    assert len(r.scores) == 24 and r.scores[0].magnitude >= r.scores[-1].magnitude
    assert FeatureReport.from_dict(r.to_dict()) == r
    assert "Correlation Coefficient" in r.table()
    assert r.scores[0].name in COUNTER_NAMES


def test_errors():
    with pytest.raises(FeatureError):
        rank_and_select(np.zeros((0, 3)), [])
    with pytest.raises(FeatureError):
        rank_and_select(np.zeros((3, 2)), [1, 2])
    with pytest.raises(FeatureError):
        select_from_profiles([])


def test_selection_on_profiles(small_profiles):
    r = select_from_profiles([small_profiles])
    assert "noise_0" not in r.selected and "noise_1" not in r.selected
    assert all(s.magnitude > 0.2 for s in r.scores if s.selected)
    assert all(s.magnitude <= 0.2 for s in r.scores if not s.selected)
