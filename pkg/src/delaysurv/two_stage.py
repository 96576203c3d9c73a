"""Two-stage transfer estimation of a homogeneous cohort effect.

Stage one fits the baseline hazard, covariate effect and delay on a source
domain without administrative censoring (:func:`fit_source`). Stage two
freezes the baseline and delay and estimates the cohort multiplier ``gamma``
on an administratively censored target domain, either in closed form
(:func:`gamma_check0`, :func:`gamma_check`) or by exact one-dimensional
maximization of the marginal likelihood (:func:`gamma_hat`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import exprel

from .em import EmConfig, EstimationResult, run_em
from .exceptions import NonUnimodal, NoReports, TauPresent, ZeroExposure
from .hazards import (
    HazardModel,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    ScalarEffect,
    is_constant_in_time,
)
from .joint import Dataset, ModelPair, marginal_loglik, marginal_loglik_gradient
from .numeric import QuadratureSpec, find_root_increasing, integrate


@dataclass(frozen=True)
class StageOneResult:
    baseline: PiecewiseConstantHazard
    effect: LogLinearEffect
    delay: HazardModel
    provenance: Optional[EstimationResult] = None

    def to_dict(self) -> dict:
        return {"baseline": self.baseline.to_dict(), "effect": self.effect.to_dict(),
                "delay": self.delay.to_dict()}


def fit_source(source: Dataset, families: ModelPair, em_config: EmConfig = EmConfig()) -> StageOneResult:
    """Stage one: joint EM fit of a log-linear PH accident model and the delay."""
    if source.tau is not None:
        raise TauPresent("the source domain must not be administratively censored")
    acc = families.accident
    if not (isinstance(acc, ProportionalHazard) and isinstance(acc.effect, LogLinearEffect)):
        raise TypeError("stage one needs a log-linear proportional-hazards accident family")
    result = run_em(source, families, em_config)
    fitted = result.fitted.accident
    return StageOneResult(fitted.baseline, fitted.effect, result.fitted.delay, result)


def _baseline_of(model) -> PiecewiseConstantHazard:
    return model.baseline if isinstance(model, ProportionalHazard) else model


def _target_x(target: Dataset):
    return target.x if target.dim else None


def _row_x(target: Dataset, i):
    return target.x[i] if target.dim else None


def _n_reports(target: Dataset) -> int:
    k = target.n - target.m
    if k == 0:
        raise NoReports("the target domain has no reported events")
    return k


def _ratio(numerator, denominator):
    if not denominator > 0:
        raise ZeroExposure("baseline exposure is zero")
    return float(numerator / denominator)


def gamma_check0(target: Dataset, baseline) -> float:
    """Closed-form estimate that ignores unreported accidents (biased low)."""
    base = _baseline_of(baseline)
    k = _n_reports(target)
    return _ratio(k, np.sum(base.cumulative_hazard(target.y_dagger)))


def _weighted_exposure_closed(base, delay, y, x):
    """int_0^y h_b(t) (1 - S2(y - t)) dt for a time-constant delay, per row."""
    knots, _ = base.segment_structure()
    rates = np.array(base.rates)
    _, m = delay.segment_structure(x)
    mu = np.broadcast_to(m[:, 0], y.shape)[:, None]
    left = knots[:-1]
    L = np.clip(y[:, None] - left, 0.0, np.diff(knots))
    right = left + L
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.where(L > 0, np.exp(-mu * (y[:, None] - right)) * L * exprel(-mu * L), 0.0)
    return (rates * (L - decay)).sum(axis=1)


def _weighted_exposure_quad(base, delay, y, x, spec):
    pts = [b for b in base.breakpoints() if 0 < b < y]
    pts += [y - b for b in delay.breakpoints() if 0 < y - b < y]
    return integrate(lambda t: base.hazard(t) * -np.expm1(-delay.cumulative_hazard(y - t, x)),
                     0.0, y, spec, pts)


def weighted_exposure(target: Dataset, baseline, delay: HazardModel, method: str = "auto",
                      spec: QuadratureSpec | None = None) -> np.ndarray:
    """Per-row denominator terms of the delay-weighted estimator."""
    base = _baseline_of(baseline)
    out = np.asarray(base.cumulative_hazard(target.y_dagger), dtype=float).copy()
    un = np.flatnonzero(target.v == 0)
    if un.size == 0:
        return out
    if method == "auto":
        method = "closed" if is_constant_in_time(delay) else "quadrature"
    if method == "closed":
        x = target.x[un] if target.dim else None
        out[un] = _weighted_exposure_closed(base, delay, target.y[un], x)
    else:
        out[un] = [_weighted_exposure_quad(base, delay, float(target.y[i]), _row_x(target, i), spec) for i in un]
    return out


def gamma_check(target: Dataset, baseline, delay: HazardModel, method: str = "auto",
                spec: QuadratureSpec | None = None) -> float:
    """Closed-form estimate weighting unreported exposure by the report probability."""
    k = _n_reports(target)
    return _ratio(k, np.sum(weighted_exposure(target, baseline, delay, method, spec)))


def _target_pair(base, delay, gamma):
    return ModelPair(ProportionalHazard(base, ScalarEffect(gamma)), delay)


def target_loglik(target: Dataset, baseline, delay: HazardModel, gamma: float) -> float:
    return marginal_loglik(_target_pair(_baseline_of(baseline), delay, gamma), target)


def gamma_score(target: Dataset, baseline, delay: HazardModel, gamma: float) -> float:
    """d E_t / d gamma with baseline and delay frozen."""
    base = _baseline_of(baseline)
    pair = _target_pair(base, delay, gamma)
    free = np.zeros(pair.n_params, dtype=bool)
    free[base.n_params] = True
    return float(marginal_loglik_gradient(pair, target, free=free)[0])


def gamma_hat(target: Dataset, baseline, delay: HazardModel, rtol: float = 1e-8,
              score_tol: float = 1e-6, max_iter: int = 100) -> float:
    """Exact maximizer of the target marginal likelihood over gamma > 0.

    The search starts at the naive closed form, which lies below the maximizer,
    brackets the score sign change, narrows the bracket by golden-section on
    the likelihood and finishes with safeguarded Newton steps on the analytic
    score.
    """
    base = _baseline_of(baseline)
    g0 = gamma_check0(target, base)
    if target.m == 0:
        return g0

    def loglik(g):
        return target_loglik(target, base, delay, g)

    def score(g):
        return gamma_score(target, base, delay, g)

    lo, hi = g0, 2.0 * g0
    s_lo = score(lo)
    if s_lo <= 0:
        # the naive estimate is a lower bound; a nonpositive score means a flat likelihood
        lo = 0.5 * g0
    for _ in range(200):
        if score(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NonUnimodal("could not bracket the maximizer of the target likelihood")

    # golden-section in log gamma down to a coarse bracket
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(lo), math.log(hi)
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = loglik(math.exp(c)), loglik(math.exp(d))
    while b - a > 1e-4:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = loglik(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = loglik(math.exp(d))
    lo, hi = math.exp(a), math.exp(b)
    g = 0.5 * (lo + hi)

    s = score(g)
    for _ in range(max_iter):
        if s > 0:
            lo = max(lo, g)
        else:
            hi = min(hi, g)
        h = 1e-6 * g
        curvature = (score(g + h) - score(g - h)) / (2.0 * h)
        step = -s / curvature if curvature < 0 else None
        g_new = g + step if step is not None else 0.5 * (lo + hi)
        if not lo <= g_new <= hi:
            g_new = 0.5 * (lo + hi)
        done = abs(g_new - g) <= rtol * g
        g = g_new
        s = score(g)
        if done and abs(s) <= score_tol:
            return g
        if abs(s) <= score_tol * 1e-3:
            return g
    return g


def _epsilon_closed(delay, x, y, nu):
    """eps(delta) = int_delta^y S2(u) exp(nu u) du for a time-constant delay."""
    _, m = delay.segment_structure(None if x is None else np.atleast_2d(x))
    c = nu - float(m[0, 0])

    def eps(delta):
        span = y - delta
        if span <= 0:
            return 0.0
        return math.exp(c * delta) * span * float(exprel(c * span))

    return eps


def _epsilon_quad(delay, x, y, nu, spec):
    pts = [b for b in delay.breakpoints() if 0 < b < y]

    def eps(delta):
        if delta >= y:
            return 0.0
        return integrate(lambda u: delay.survival(u, x) * np.exp(nu * u), delta, y, spec,
                         [p for p in pts if p > delta])

    return eps


def epsilon_function(delay: HazardModel, x, y: float, nu: float, method: str = "auto", spec=None):
    if method == "auto":
        method = "closed" if is_constant_in_time(delay) else "quadrature"
    if method == "closed":
        return _epsilon_closed(delay, x, y, nu)
    return _epsilon_quad(delay, x, y, nu, spec)


@dataclass
class GammaEstimates:
    gamma_check0: float
    gamma_check: float
    gamma_hat: Optional[float] = None
    nu: np.ndarray = field(default_factory=lambda: np.empty(0))
    delta_star: np.ndarray = field(default_factory=lambda: np.empty(0))
    y: np.ndarray = field(default_factory=lambda: np.empty(0))
    diagnostic: Optional[float] = None

    @property
    def ratio(self) -> Optional[float]:
        return None if self.gamma_hat is None else self.gamma_hat / self.gamma_check

    def to_dict(self) -> dict:
        return {
            "gamma_check0": self.gamma_check0,
            "gamma_check": self.gamma_check,
            "gamma_hat": self.gamma_hat,
            "diagnostic": self.diagnostic,
            "rows": [{"nu": float(a), "delta_star": float(b), "y": float(c)}
                     for a, b, c in zip(self.nu, self.delta_star, self.y)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return ",".join(fmt(v) for v in (self.gamma_check0, self.gamma_check, self.gamma_hat, self.diagnostic))

    CSV_HEADER = "gamma_check0,gamma_check,gamma_hat,diag"


def ratio_diagnostic(target: Dataset, baseline, delay: HazardModel, gamma_hat_value: float,
                     method: str = "auto", spec=None, tol: float = 1e-12):
    """Per unreported row: ``nu``, the fixed point ``delta*`` of ``eps`` and the aggregate
    ``sum delta* y nu^2 / (n - m)`` bounding the relative gap between the exact and
    delay-weighted estimates."""
    base = _baseline_of(baseline)
    k = _n_reports(target)
    un = np.flatnonzero(target.v == 0)
    nu = np.empty(un.size)
    delta = np.empty(un.size)
    ys = target.y[un].astype(float)
    for j, i in enumerate(un):
        y = float(target.y[i])
        nu[j] = gamma_hat_value * base.max_hazard(y)
        if y == 0.0:
            delta[j] = 0.0
            continue
        eps = epsilon_function(delay, _row_x(target, i), y, nu[j], method, spec)
        delta[j] = find_root_increasing(lambda dl: dl - eps(dl), 0.0, y, tol)
    aggregate = float(np.sum(delta * ys * nu**2) / k)
    return nu, delta, ys, aggregate


def estimate_gamma(target: Dataset, baseline, delay: HazardModel, exact: bool = False,
                   diagnostics: bool = False) -> GammaEstimates:
    """All stage-two estimates; the exact maximizer and diagnostics are optional."""
    est = GammaEstimates(gamma_check0(target, baseline), gamma_check(target, baseline, delay))
    if exact or diagnostics:
        est.gamma_hat = gamma_hat(target, baseline, delay)
    if diagnostics:
        est.nu, est.delta_star, est.y, est.diagnostic = ratio_diagnostic(target, baseline, delay, est.gamma_hat)
    return est
