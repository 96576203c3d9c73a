import json

import numpy as np
import pytest

from delaysurv.em import EmConfig
from delaysurv.exceptions import NoReports, TauPresent, ZeroExposure
from delaysurv.hazards import (
    ConstantHazard,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    ScalarEffect,
)
from delaysurv.joint import Dataset, ModelPair
from delaysurv.numeric import RngStream
from delaysurv.simulate import SimulationConfig, simulate
from delaysurv.two_stage import (
    GammaEstimates,
    epsilon_function,
    estimate_gamma,
    fit_source,
    gamma_check,
    gamma_check0,
    gamma_hat,
    gamma_score,
    ratio_diagnostic,
    weighted_exposure,
)

UNIT = PiecewiseConstantHazard((0.0,), (1.0,))


def _target(baseline, lam, n=1000, seed=0, gamma=2.0, tau=0.75):
    cfg = SimulationConfig(n, ProportionalHazard(baseline, ScalarEffect(gamma)), ConstantHazard(lam),
                           ConstantHazard(1.0), tau, 0, seed=RngStream(seed))
    return simulate(cfg)


def test_check0_arithmetic():
    ds = Dataset(np.zeros((2, 0)), [1.0, 0.7], [0, 1], [np.nan, 0.5])
    assert gamma_check0(ds, UNIT) == pytest.approx(1 / 1.5)


def test_fully_reported_all_estimators_agree(toy_baseline):
    z = np.array([0.2, 0.6, 1.3])
    ds = Dataset(np.zeros((3, 0)), z + 0.1, [1, 1, 1], z)
    mle = 3 / np.sum(toy_baseline.cumulative_hazard(z))
    assert gamma_check0(ds, toy_baseline) == pytest.approx(mle)
    assert gamma_check(ds, toy_baseline, ConstantHazard(2.0)) == gamma_check0(ds, toy_baseline)
    assert gamma_hat(ds, toy_baseline, ConstantHazard(2.0)) == pytest.approx(mle)


def test_instant_report_limit(toy_baseline):
    ds, _ = _target(toy_baseline, 5.0)
    assert gamma_check(ds, toy_baseline, ConstantHazard(1e9)) == pytest.approx(gamma_check0(ds, toy_baseline), rel=1e-6)


def test_no_reports():
    ds = Dataset(np.zeros((2, 0)), [0.75, 0.75], [0, 0], [np.nan, np.nan], tau=0.75)
    for fn in (lambda: gamma_check0(ds, UNIT), lambda: gamma_check(ds, UNIT, ConstantHazard(1.0)),
               lambda: gamma_hat(ds, UNIT, ConstantHazard(1.0))):
        with pytest.raises(NoReports):
            fn()


def test_zero_exposure():
    ds = Dataset(np.zeros((1, 0)), [0.3], [1], [0.0])
    with pytest.raises(ZeroExposure):
        gamma_check0(ds, UNIT)


def test_closed_and_quadrature_exposure(toy_baseline):
    ds, _ = _target(toy_baseline, 5.0, n=200, seed=3)
    a = weighted_exposure(ds, toy_baseline, ConstantHazard(5.0), "closed")
    b = weighted_exposure(ds, toy_baseline, ConstantHazard(5.0), "quadrature")
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-14)


def test_nonconstant_delay_uses_quadrature(toy_baseline):
    ds, _ = _target(toy_baseline, 5.0, n=200, seed=4)
    flat = PiecewiseConstantHazard((0.0, 0.3), (5.0, 5.0))
    assert gamma_check(ds, toy_baseline, flat) == pytest.approx(gamma_check(ds, toy_baseline, ConstantHazard(5.0)), rel=1e-9)


def test_ordering_and_score(toy_baseline):
    for seed in range(5):
        ds, _ = _target(toy_baseline, 5.0, n=400, seed=seed)
        delay = ConstantHazard(5.0)
        g0, g1, gh = gamma_check0(ds, toy_baseline), gamma_check(ds, toy_baseline, delay), gamma_hat(ds, toy_baseline, delay)
        assert g0 <= g1 and g0 < gh
        assert abs(gamma_score(ds, toy_baseline, delay, gh)) <= 1e-6


def test_gamma_hat_duplication_invariant(toy_baseline):
    ds, _ = _target(toy_baseline, 5.0, n=300, seed=8)
    both = ds.subset(np.concatenate([np.arange(ds.n), np.arange(ds.n)]))
    delay = ConstantHazard(5.0)
    assert gamma_hat(both, toy_baseline, delay) == pytest.approx(gamma_hat(ds, toy_baseline, delay), rel=1e-8)


def test_gamma_hat_maximizes(toy_baseline):
    from delaysurv.two_stage import target_loglik
    ds, _ = _target(toy_baseline, 5.0, n=300, seed=9)
    delay = ConstantHazard(5.0)
    g = gamma_hat(ds, toy_baseline, delay)
    best = target_loglik(ds, toy_baseline, delay, g)
    for f in (0.99, 1.01, 0.9, 1.1):
        assert target_loglik(ds, toy_baseline, delay, g * f) < best


class TestDiagnostic:
    def test_zero_time_row(self):
        ds = Dataset(np.zeros((2, 0)), [0.0, 0.5], [0, 1], [np.nan, 0.2])
        _, delta, _, _ = ratio_diagnostic(ds, UNIT, ConstantHazard(5.0), 1.0)
        assert delta[0] == 0.0

    def test_grid_oracle(self):
        y, nu = 0.6, 0.8
        eps = epsilon_function(ConstantHazard(5.0), None, y, nu, "closed")
        grid = np.arange(0.0, y, 1e-6)
        vals = np.array([g - eps(g) for g in grid[::1000]])
        coarse = grid[::1000][np.argmax(vals >= 0)]
        fine = np.arange(max(coarse - 1e-3, 0.0), coarse + 1e-6, 1e-6)
        scan = fine[np.argmax(np.array([g - eps(g) for g in fine]) >= 0)]
        ds = Dataset(np.zeros((2, 0)), [y, 0.5], [0, 1], [np.nan, 0.2])
        _, delta, _, _ = ratio_diagnostic(ds, UNIT, ConstantHazard(5.0), nu)
        assert delta[0] == pytest.approx(scan, abs=2e-6)

    def test_epsilon_shape_and_paths(self):
        y = 0.7
        closed = epsilon_function(ConstantHazard(4.0), None, y, 1.3, "closed")
        quad = epsilon_function(ConstantHazard(4.0), None, y, 1.3, "quadrature")
        grid = np.linspace(0, y, 50)
        vals = np.array([closed(g) for g in grid])
        assert np.all(np.diff(vals) <= 0) and closed(y) == 0.0
        np.testing.assert_allclose(vals, [quad(g) for g in grid], rtol=1e-9, atol=1e-14)

    def test_estimates_serialization(self, toy_baseline):
        ds, _ = _target(toy_baseline, 50.0, n=300, seed=1)
        est = estimate_gamma(ds, toy_baseline, ConstantHazard(50.0), diagnostics=True)
        d = json.loads(est.to_json())
        assert set(d) >= {"gamma_check0", "gamma_check", "gamma_hat", "diagnostic", "rows"}
        assert len(d["rows"]) == ds.m
        assert GammaEstimates.CSV_HEADER == "gamma_check0,gamma_check,gamma_hat,diag"
        assert len(est.csv_row().split(",")) == 4
        assert abs(est.ratio - 1) <= est.diagnostic

    def test_csv_row_without_exact(self, toy_baseline):
        ds, _ = _target(toy_baseline, 5.0, n=100, seed=2)
        row = estimate_gamma(ds, toy_baseline, ConstantHazard(5.0)).csv_row()
        assert row.endswith(",,")


class TestFitSource:
    def test_tau_present(self, toy_baseline):
        ds, _ = _target(toy_baseline, 5.0, n=50)
        fam = ModelPair(ProportionalHazard(toy_baseline, LogLinearEffect((0.0,))), ConstantHazard(1.0))
        with pytest.raises(TauPresent):
            fit_source(ds, fam)

    def test_single_knot_reduces_to_constants(self):
        cfg = SimulationConfig(500, ConstantHazard(0.8), ConstantHazard(4.0), ConstantHazard(1.0), None, 1,
                               covariate_law=np.zeros((500, 1)), seed=RngStream(3))
        ds, _ = simulate(cfg)
        fam = ModelPair(ProportionalHazard(PiecewiseConstantHazard((0.0,), (1.0,)), LogLinearEffect((0.0,))),
                        ConstantHazard(1.0))
        res = fit_source(ds, fam, EmConfig(iterations=5, seed=RngStream(1)))
        from delaysurv.em import run_em
        plain = run_em(ds, ModelPair(ConstantHazard(1.0), ConstantHazard(1.0)), EmConfig(iterations=5, seed=RngStream(1)))
        assert res.baseline.rates[0] == pytest.approx(plain.fitted.accident.rate, rel=1e-6)
        assert res.delay.rate == pytest.approx(plain.fitted.delay.rate, rel=1e-6)

    def test_wrong_family(self, toy_baseline):
        ds, _ = _target(toy_baseline, 5.0, n=50, tau=None)
        with pytest.raises(TypeError):
            fit_source(ds, ModelPair(ConstantHazard(1.0), ConstantHazard(1.0)))
