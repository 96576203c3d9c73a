"""scikit-learn style estimators for survival data with reporting delays.

The outcome ``y`` is a structured array built by :func:`make_outcome` with
fields ``time`` (report time or censoring time), ``reported`` (report
observed) and ``accident_time`` (NaN when unreported)::

    y = make_outcome(time, reported, accident_time)
    model = DelayedReportSurvival(knots=(0, 0.5, 1)).fit(X, y)
    cohort = CohortEffectEstimator(stage_one=model).fit(None, y_target)
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .em import EmConfig, naive_init, run_em
from .hazards import ConstantHazard, LogLinearEffect, PiecewiseConstantHazard, ProportionalHazard
from .joint import Dataset, ModelPair, marginal_loglik
from .numeric import RngStream
from .two_stage import StageOneResult, estimate_gamma

OUTCOME_DTYPE = np.dtype([("time", "f8"), ("reported", "?"), ("accident_time", "f8")])


def make_outcome(time, reported, accident_time=None) -> np.ndarray:
    """Pack observed times into a structured outcome array.

    Parameters
    ----------
    time : array-like of shape (n,)
        Report time when ``reported``, otherwise the (administrative) censoring time.
    reported : array-like of bool, shape (n,)
    accident_time : array-like of shape (n,), optional
        Accident time of reported rows; ignored (stored as NaN) for unreported rows.
    """
    time = np.asarray(time, dtype=float).ravel()
    reported = np.asarray(reported).astype(bool).ravel()
    if accident_time is None:
        if reported.any():
            raise ValueError("accident_time is required when some rows are reported")
        accident_time = np.full(time.shape, np.nan)
    accident_time = np.asarray(accident_time, dtype=float).ravel()
    if not time.shape == reported.shape == accident_time.shape:
        raise ValueError("time, reported and accident_time must have the same length")
    out = np.empty(time.size, dtype=OUTCOME_DTYPE)
    out["time"] = time
    out["reported"] = reported
    out["accident_time"] = np.where(reported, accident_time, np.nan)
    return out


def check_outcome(y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate a structured outcome and return ``(y, v, z)`` arrays."""
    y = np.asarray(y)
    if y.dtype.names is None or not {"time", "reported", "accident_time"} <= set(y.dtype.names):
        raise ValueError("y must be a structured array from make_outcome")
    t = y["time"].astype(float)
    v = y["reported"].astype(np.int8)
    z = y["accident_time"].astype(float)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ValueError("times must be finite and nonnegative")
    rep = v == 1
    if np.any(~np.isfinite(z[rep])) or np.any((z[rep] < 0) | (z[rep] > t[rep])):
        raise ValueError("reported rows need 0 <= accident_time <= time")
    return t, v, np.where(rep, z, np.nan)


def to_dataset(X, y, tau: Optional[float] = None) -> Dataset:
    t, v, z = check_outcome(y)
    if X is None:
        X = np.empty((t.size, 0))
    else:
        X = check_array(X, ensure_min_features=0, dtype=float)
        if X.shape[0] != t.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {t.size}")
    return Dataset(X, t, v, z, tau=tau)


def _as_stream(random_state) -> RngStream:
    if isinstance(random_state, RngStream):
        return random_state
    if random_state is None:
        return RngStream(int(np.random.SeedSequence().entropy % 2**63))
    return RngStream(int(random_state))


class DelayedReportSurvival(BaseEstimator):
    """Piecewise-constant proportional-hazards accident model with a constant-rate
    reporting delay, fitted from report-censored data.

    Parameters
    ----------
    knots : sequence of float
        Left endpoints of the baseline segments, starting at 0.
    method : {"em", "naive"}
        ``"em"`` integrates over the unobserved accident status by Monte-Carlo EM;
        ``"naive"`` treats unreported rows as accident-free.
    n_iter, n_replicates : int
        EM iterations and imputations per unreported row.
    random_state : int, RngStream or None
    """

    def __init__(self, knots=(0.0, 0.5, 1.0), method="em", n_iter=30, n_replicates=10,
                 random_state=0, gtol=1e-8):
        self.knots = knots
        self.method = method
        self.n_iter = n_iter
        self.n_replicates = n_replicates
        self.random_state = random_state
        self.gtol = gtol

    def _families(self, d: int) -> ModelPair:
        base = PiecewiseConstantHazard(self.knots, np.ones(len(self.knots)))
        return ModelPair(ProportionalHazard(base, LogLinearEffect(np.zeros(d))), ConstantHazard(1.0))

    def fit(self, X, y):
        if self.method not in ("em", "naive"):
            raise ValueError(f"method must be 'em' or 'naive', got {self.method!r}")
        ds = to_dataset(X, y)
        self.n_features_in_ = ds.dim
        families = self._families(ds.dim)
        if self.method == "em":
            cfg = EmConfig(iterations=self.n_iter, replicates=self.n_replicates,
                           seed=_as_stream(self.random_state), gtol=self.gtol)
            self.result_ = run_em(ds, families, cfg)
            self.model_ = self.result_.fitted
        else:
            self.result_ = None
            self.model_ = naive_init(ds, families, self.gtol)
        acc = self.model_.accident
        self.baseline_rates_ = np.array(acc.baseline.rates)
        self.coef_ = np.array(acc.effect.coefficients)
        self.delay_rate_ = float(self.model_.delay.rate)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, ensure_min_features=0, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """Relative risk ``exp(X @ coef_)``."""
        X = self._check_X(X)
        return np.exp(X @ self.coef_)

    def predict_cumulative_hazard(self, X, times):
        """Accident cumulative hazard, shape ``(n_samples, n_times)``."""
        X = self._check_X(X)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        base = self.model_.accident.baseline.cumulative_hazard(times)
        return np.outer(np.exp(X @ self.coef_), base)

    def predict_survival_function(self, X, times):
        return np.exp(-self.predict_cumulative_hazard(X, times))

    def score(self, X, y):
        """Mean marginal log-likelihood per row."""
        check_is_fitted(self, "model_")
        ds = to_dataset(X, y)
        return marginal_loglik(self.model_, ds) / ds.n

    def stage_one(self) -> StageOneResult:
        check_is_fitted(self, "model_")
        acc = self.model_.accident
        return StageOneResult(acc.baseline, acc.effect, self.model_.delay, self.result_)


class CohortEffectEstimator(BaseEstimator):
    """Homogeneous cohort multiplier ``gamma`` on an administratively censored target.

    The baseline hazard and delay come from ``stage_one`` (a fitted
    :class:`DelayedReportSurvival` or a :class:`StageOneResult`) or from
    explicit ``baseline_rates``/``knots``/``delay_rate``.

    Parameters
    ----------
    estimator : {"check", "check0", "hat"}
        Delay-weighted closed form, naive closed form, or exact likelihood maximizer.
    tau : float, optional
        Administrative censoring time of the target cohort.
    diagnostics : bool
        Also compute the exact maximizer and the ratio diagnostic.
    """

    def __init__(self, stage_one=None, baseline_rates=None, knots=(0.0, 0.5, 1.0), delay_rate=None,
                 estimator="check", tau=None, diagnostics=False):
        self.stage_one = stage_one
        self.baseline_rates = baseline_rates
        self.knots = knots
        self.delay_rate = delay_rate
        self.estimator = estimator
        self.tau = tau
        self.diagnostics = diagnostics

    def _frozen(self):
        src = self.stage_one
        if isinstance(src, DelayedReportSurvival):
            src = src.stage_one()
        if isinstance(src, StageOneResult):
            return src.baseline, src.delay
        if self.baseline_rates is None or self.delay_rate is None:
            raise ValueError("provide stage_one or both baseline_rates and delay_rate")
        return PiecewiseConstantHazard(self.knots, self.baseline_rates), ConstantHazard(float(self.delay_rate))

    def fit(self, X, y):
        if self.estimator not in ("check", "check0", "hat"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        t, _, _ = check_outcome(y)
        ds = to_dataset(np.empty((t.size, 0)), y, self.tau)
        base, delay = self._frozen()
        est = estimate_gamma(ds, base, delay, exact=self.estimator == "hat", diagnostics=self.diagnostics)
        self.estimates_ = est
        self.baseline_ = base
        self.delay_ = delay
        self.gamma_ = {"check": est.gamma_check, "check0": est.gamma_check0, "hat": est.gamma_hat}[self.estimator]
        return self

    def predict_cumulative_hazard(self, times):
        check_is_fitted(self, "gamma_")
        return self.gamma_ * self.baseline_.cumulative_hazard(np.asarray(times, dtype=float))

    def predict_survival_function(self, times):
        return np.exp(-self.predict_cumulative_hazard(times))

    def premium(self, exposure):
        """Expected number of accidents over each exposure window ``[0, exposure]``."""
        return self.predict_cumulative_hazard(exposure)
