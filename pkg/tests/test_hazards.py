import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from delaysurv.exceptions import DimensionMismatch
from delaysurv.hazards import (
    ConstantHazard,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    ScalarEffect,
    cumulative_hazard,
    hazard,
    model_from_dict,
    model_from_json,
    survival,
)
from delaysurv.numeric import RngStream, integrate


def test_constant_hazard_value():
    assert hazard(ConstantHazard(5.0), 0.3) == 5.0


def test_piecewise_lookup(toy_baseline):
    assert toy_baseline.hazard(0.7) == 0.2


def test_right_continuous_at_knots(toy_baseline):
    np.testing.assert_array_equal(toy_baseline.hazard([0.0, 0.5, 1.0]), [0.1, 0.2, 0.3])


def test_scalar_effect_product(toy_baseline):
    assert ProportionalHazard(toy_baseline, ScalarEffect(2.0)).hazard(0.7) == pytest.approx(0.4)


def test_cumulative_hazard_values(toy_baseline):
    assert cumulative_hazard(ConstantHazard(1.0), 2.0) == 2.0
    assert toy_baseline.cumulative_hazard(1.25) == pytest.approx(0.225, abs=1e-15)
    oracle = integrate(toy_baseline.hazard, 0.0, 1.25, breakpoints=[0.5, 1.0])
    assert toy_baseline.cumulative_hazard(1.25) == pytest.approx(oracle, rel=1e-12)


def test_loglinear_at_zero_equals_baseline(toy_baseline):
    ph = ProportionalHazard(toy_baseline, LogLinearEffect((1.0,)))
    t = np.linspace(0, 3, 17)
    np.testing.assert_allclose(ph.cumulative_hazard(t, np.zeros((1, 1))), toy_baseline.cumulative_hazard(t))


def test_survival_examples(toy_baseline):
    assert survival(ConstantHazard(2.0), 1.0) == pytest.approx(math.exp(-2))
    assert toy_baseline.survival(0.0) == 1.0
    ph = ProportionalHazard(toy_baseline, LogLinearEffect((1.0,)))
    x = np.array([[0.4]])
    assert float(np.ravel(ph.survival(1.25, x))[0]) == pytest.approx(math.exp(-0.225 * math.exp(0.4)))
    tail = integrate(lambda t: ph.density(t, x), 1.25, 60.0, breakpoints=[])
    assert tail == pytest.approx(math.exp(-0.225 * math.exp(0.4)), rel=1e-8)


def test_inverse_transform_forced_uniform():
    assert ConstantHazard(1.0).sample_from_uniform(math.exp(-2)) == pytest.approx(2.0)


def test_constant_sample_mean():
    t = ConstantHazard(5.0).sample(None, RngStream(1), size=100_000)
    assert np.mean(t) == pytest.approx(0.2, abs=0.01)


def test_piecewise_sample_survival(toy_baseline):
    ph = ProportionalHazard(toy_baseline, LogLinearEffect((1.0,)))
    x = np.full((100_000, 1), 0.5)
    t = ph.sample(x, RngStream(2), size=100_000)
    p = math.exp(-0.05 * math.exp(0.5))
    se = math.sqrt(p * (1 - p) / t.size)
    assert abs(np.mean(t > 0.5) - p) < 3 * se


@pytest.mark.parametrize("model", [
    ConstantHazard(3.0),
    PiecewiseConstantHazard((0.0, 0.5, 1.0), (0.1, 0.2, 0.3)),
    ProportionalHazard(PiecewiseConstantHazard((0.0, 0.3), (1.5, 0.4)), ScalarEffect(2.0)),
])
def test_ks_against_analytic_cdf(model):
    t = model.sample(None, RngStream(3), size=100_000)
    res = stats.kstest(t, lambda s: 1 - model.survival(s))
    assert res.pvalue > 0.01


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=4), st.floats(0.0, 6.0), st.floats(-1, 1), st.floats(-2, 2))
def test_identities(rates, t, x, beta):
    knots = np.concatenate([[0.0], np.cumsum(np.full(len(rates) - 1, 0.7))])
    ph = ProportionalHazard(PiecewiseConstantHazard(knots, rates), LogLinearEffect((beta,)))
    xx = np.array([[x]])
    h, H, S, f = (float(np.ravel(g(t, xx))[0]) for g in (ph.hazard, ph.cumulative_hazard, ph.survival, ph.density))
    assert f == pytest.approx(h * S, rel=1e-14)
    assert H + math.log(S) == pytest.approx(0.0, abs=1e-12)
    quad = integrate(lambda s: ph.hazard(s, xx).ravel() if np.ndim(s) == 0 else ph.hazard(s, np.repeat(xx, np.size(s), 0)),
                     0.0, t, breakpoints=[k for k in knots if 0 < k < t]) if t > 0 else 0.0
    assert H == pytest.approx(quad, rel=1e-10, abs=1e-12)
    assert float(np.ravel(ph.survival(t + 0.1, xx))[0]) <= S


def test_scalar_and_loglinear_identity(toy_baseline):
    t = np.linspace(0, 3, 11)
    a = ProportionalHazard(toy_baseline, ScalarEffect(1.0)).hazard(t)
    b = ProportionalHazard(toy_baseline, LogLinearEffect((0.7,))).hazard(t, np.zeros((11, 1)))
    np.testing.assert_allclose(a, np.ravel(b))


def test_dimension_mismatch(toy_baseline):
    ph = ProportionalHazard(toy_baseline, LogLinearEffect((1.0, 2.0)))
    with pytest.raises(DimensionMismatch):
        ph.hazard(0.3, np.zeros((1, 3)))


@pytest.mark.parametrize("bad", [dict(knots=(0.1, 1.0), rates=(1, 1)), dict(knots=(0.0, 0.0), rates=(1, 1)),
                                 dict(knots=(0.0,), rates=(-1.0,))])
def test_invalid_piecewise(bad):
    with pytest.raises(ValueError):
        PiecewiseConstantHazard(**bad)


def test_json_roundtrip(toy_baseline):
    for model in (ConstantHazard(5.0), toy_baseline,
                  ProportionalHazard(toy_baseline, LogLinearEffect((1.0, -0.5))),
                  ProportionalHazard(toy_baseline, ScalarEffect(2.0))):
        d = json.loads(model.to_json())
        assert d["family"] in ("constant", "piecewise_ph")
        assert model_from_json(model.to_json()) == model
        assert model_from_dict(d).to_dict() == d
