"""Monte-Carlo EM for the accident/report model.

Each iteration refreshes the posterior of the latent accident status from the
current parameters, imputes it ``s`` times per unreported row by rejection
sampling, and refits the accident and delay hazards by ordinary weighted
right-censored maximum likelihood on the pseudo-complete data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import IterationCap, NoEvents
from .hazards import (
    ConstantHazard,
    HazardModel,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    ScalarEffect,
)
from .joint import Dataset, ModelPair, Observation, marginal_loglik, posterior_q
from .numeric import QuadratureSpec, RngStream, as_generator, integrate, maximize_concave

LOG_RATE_BOUNDS = (-30.0, 30.0)
COEF_BOUNDS = (-50.0, 50.0)


# -- rejection sampler ---------------------------------------------------------

def _draw(model, x, gen, k):
    u = gen.random(k)
    return model.sample_from_uniform(u, x)


def reject_sample_rows(pair: ModelPair, y, x, rng, cap: int = 10**6):
    """Vectorized rejection sampler for many unreported rows at once.

    Draw ``t ~ f1``; if ``t > y`` return ``(y, 0)``; otherwise accept ``(t, 1)``
    with probability ``S2(y - t)`` and redraw on rejection.
    """
    gen = as_generator(rng)
    y = np.asarray(y, dtype=float)
    n = y.size
    has_x = x is not None and np.ndim(x) == 2 and np.shape(x)[1] > 0
    z = np.empty(n)
    w = np.empty(n, dtype=np.int8)
    pending = np.arange(n)
    attempts = 0
    while pending.size:
        attempts += 1
        if attempts > cap:
            raise IterationCap(f"{pending.size} rows still pending after {cap} rejection attempts")
        xp = x[pending] if has_x else None
        yp = y[pending]
        t = _draw(pair.accident, xp, gen, pending.size)
        u = gen.random(pending.size)
        over = t > yp
        s2 = pair.delay.survival(np.where(over, 0.0, yp - t), xp)
        accept = ~over & (u <= s2)
        z[pending[over]] = yp[over]
        w[pending[over]] = 0
        z[pending[accept]] = t[accept]
        w[pending[accept]] = 1
        pending = pending[~(over | accept)]
    return z, w


def reject_sample(pair: ModelPair, obs: Observation, rng, cap: int = 10**6) -> tuple[float, int]:
    """One draw of ``(z, w)`` from the posterior of an unreported observation."""
    if obs.v != 0:
        raise ValueError("only unreported observations have a latent accident status")
    x = obs.x[None, :] if obs.x.size else None
    z, w = reject_sample_rows(pair, np.array([obs.y]), x, rng, cap)
    return float(z[0]), int(w[0])


# -- pseudo-complete data ----------------------------------------------------------

@dataclass(frozen=True)
class WeightedSample:
    """Weighted right-censored sample ``(x, time, event, weight)``."""

    x: np.ndarray
    time: np.ndarray
    event: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return self.time.size


@dataclass(frozen=True)
class PseudoCompleteDatasets:
    """Imputed accident-process rows ``p1`` and delay-process rows ``p2``.

    Reported rows appear once with weight ``s``; each unreported row appears
    ``s`` times with weight 1, one per imputation.
    """

    p1: WeightedSample
    p2: WeightedSample
    replicate_count: int
    source_index: np.ndarray  # dataset row behind each pseudo row


def e_step(pair: ModelPair, dataset: Dataset, s: int, rng, cap: int = 10**6) -> PseudoCompleteDatasets:
    rep = np.flatnonzero(dataset.v == 1)
    un = np.flatnonzero(dataset.v == 0)
    idx_un = np.repeat(un, s)
    x_un = dataset.x[idx_un] if dataset.dim else None
    if idx_un.size:
        z_imp, w_imp = reject_sample_rows(pair, dataset.y[idx_un], x_un, rng, cap)
    else:
        z_imp, w_imp = np.empty(0), np.empty(0, dtype=np.int8)
    index = np.concatenate([rep, idx_un])
    z = np.concatenate([dataset.z[rep], z_imp])
    w = np.concatenate([np.ones(rep.size, dtype=np.int8), w_imp])
    v = np.concatenate([np.ones(rep.size, dtype=np.int8), np.zeros(idx_un.size, dtype=np.int8)])
    weight = np.concatenate([np.full(rep.size, float(s)), np.ones(idx_un.size)])
    x = dataset.x[index]
    p1 = WeightedSample(x, z, w, weight)
    p2 = WeightedSample(x, dataset.y[index] - z, v, weight)
    return PseudoCompleteDatasets(p1, p2, s, index)


# -- weighted right-censored MLE ---------------------------------------------------

def _check_events(sample: WeightedSample):
    if not np.sum(sample.weight * sample.event) > 0:
        raise NoEvents("no events in the sample")


def _fit_constant(sample: WeightedSample) -> ConstantHazard:
    _check_events(sample)
    exposure = np.sum(sample.weight * sample.time)
    return ConstantHazard(float(np.sum(sample.weight * sample.event) / exposure))


def _fit_piecewise(template: PiecewiseConstantHazard, sample: WeightedSample) -> PiecewiseConstantHazard:
    _check_events(sample)
    overlaps = template.overlaps(sample.time)
    exposure = sample.weight @ overlaps
    seg = template.segment_index(sample.time)
    events = np.bincount(seg, weights=sample.weight * sample.event, minlength=template.n_segments)
    floor = np.exp(LOG_RATE_BOUNDS[0])
    rates = np.where(exposure > 0, events / np.where(exposure > 0, exposure, 1.0), floor)
    return template.with_params(np.maximum(rates, floor))


def _fit_loglinear_ph(template: ProportionalHazard, sample: WeightedSample, gtol: float):
    """Newton fit of log-rates and coefficients; the log likelihood is concave in both."""
    _check_events(sample)
    base = template.baseline
    K = base.n_segments
    x = np.asarray(sample.x, dtype=float)
    d = x.shape[1]
    if d != template.effect.dim:
        raise ValueError("covariate dimension does not match the effect")
    wt = sample.weight
    total = wt.sum()
    overlaps = base.overlaps(sample.time)
    seg = base.segment_index(sample.time)
    ev = wt * sample.event
    events = np.bincount(seg, weights=ev, minlength=K)
    ev_x = ev @ x

    def unpack(theta):
        return theta[:K], theta[K:]

    def pieces(theta):
        loga, beta = unpack(theta)
        risk = wt * np.exp(x @ beta)
        per_seg = (risk[:, None] * overlaps) * np.exp(loga)[None, :]
        return loga, beta, per_seg

    def objective(theta):
        loga, beta, per_seg = pieces(theta)
        return float((events @ loga + ev_x @ beta - per_seg.sum()) / total)

    def gradient(theta):
        _, _, per_seg = pieces(theta)
        cum = per_seg.sum(axis=1)
        return np.concatenate([events - per_seg.sum(axis=0), ev_x - cum @ x]) / total

    def hessian(theta):
        _, _, per_seg = pieces(theta)
        cum = per_seg.sum(axis=1)
        h = np.zeros((K + d, K + d))
        h[:K, :K] = -np.diag(per_seg.sum(axis=0))
        h[:K, K:] = -(per_seg.T @ x)
        h[K:, :K] = h[:K, K:].T
        h[K:, K:] = -(x.T * cum) @ x
        return h / total

    init = np.concatenate([np.log(base.params()), template.effect.params()])
    init = np.clip(init, LOG_RATE_BOUNDS[0] + 1e-9, LOG_RATE_BOUNDS[1] - 1e-9)
    bounds = [LOG_RATE_BOUNDS] * K + [COEF_BOUNDS] * d
    report = maximize_concave(objective, gradient, init, bounds, hessian, gtol=gtol)
    loga, beta = unpack(report.argmax)
    return ProportionalHazard(base.with_params(np.exp(loga)), LogLinearEffect(tuple(beta))), report


def _fit_scalar_ph(template: ProportionalHazard, sample: WeightedSample) -> ProportionalHazard:
    # baseline held fixed: gamma = events / baseline exposure
    _check_events(sample)
    exposure = np.sum(sample.weight * template.baseline.cumulative_hazard(sample.time))
    gamma = float(np.sum(sample.weight * sample.event) / exposure)
    return template.with_effect(ScalarEffect(gamma))


def fit_right_censored(template: HazardModel, sample: WeightedSample, gtol: float = 1e-8) -> HazardModel:
    """Weighted full-likelihood MLE within the family of ``template``.

    Constant and plain piecewise hazards have closed forms. A log-linear
    proportional hazard is fitted by projected Newton starting from the
    template's parameters. A scalar-effect proportional hazard keeps its
    baseline and only refits ``gamma`` (the pair is not identifiable jointly).
    """
    if isinstance(template, ConstantHazard):
        return _fit_constant(sample)
    if isinstance(template, PiecewiseConstantHazard):
        return _fit_piecewise(template, sample)
    if isinstance(template, ProportionalHazard):
        if isinstance(template.effect, ScalarEffect):
            return _fit_scalar_ph(template, sample)
        return _fit_loglinear_ph(template, sample, gtol)[0]
    raise TypeError(f"unsupported hazard family {type(template).__name__}")


def m_step_accident(p1: WeightedSample, template: HazardModel, gtol: float = 1e-8) -> HazardModel:
    return fit_right_censored(template, p1, gtol)


def m_step_delay(p2: WeightedSample, template: HazardModel, gtol: float = 1e-8) -> HazardModel:
    return fit_right_censored(template, p2, gtol)


def naive_samples(dataset: Dataset) -> tuple[WeightedSample, WeightedSample]:
    """Replace the unobserved accident status by ``(z, w) = (y, 0)``."""
    rep = dataset.v == 1
    z = np.where(rep, dataset.z, dataset.y)
    w = rep.astype(np.int8)
    ones = np.ones(dataset.n)
    return (WeightedSample(dataset.x, z, w, ones),
            WeightedSample(dataset.x, dataset.y - z, dataset.v.astype(np.int8), ones))


def naive_init(dataset: Dataset, families: ModelPair, gtol: float = 1e-8) -> ModelPair:
    """Naive estimator: fit both processes as if unreported rows had no accident."""
    d1, d2 = naive_samples(dataset)
    return ModelPair(fit_right_censored(families.accident, d1, gtol),
                     fit_right_censored(families.delay, d2, gtol))


def complete_fit(dataset: Dataset, z, w, families: ModelPair, gtol: float = 1e-8) -> ModelPair:
    """Complete-data estimator given the true accident status of every row."""
    z = np.asarray(z, dtype=float)
    w = np.asarray(w).astype(np.int8)
    ones = np.ones(dataset.n)
    d1 = WeightedSample(dataset.x, z, w, ones)
    d2 = WeightedSample(dataset.x, dataset.y - z, dataset.v.astype(np.int8), ones)
    return ModelPair(fit_right_censored(families.accident, d1, gtol),
                     fit_right_censored(families.delay, d2, gtol))


# -- EM driver ---------------------------------------------------------------------

@dataclass(frozen=True)
class EmConfig:
    iterations: int = 30
    replicates: int = 10
    seed: RngStream = RngStream(0)
    gtol: float = 1e-8
    init: Optional[ModelPair] = None  # None means naive initialization
    fit_accident: bool = True
    fit_delay: bool = True
    rejection_cap: int = 10**6

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


@dataclass
class EstimationResult:
    fitted: ModelPair
    trace_params: list = field(default_factory=list)
    trace_loglik: list = field(default_factory=list)
    seed: Optional[RngStream] = None
    drift: list = field(default_factory=list)  # max |relative parameter change| per iteration

    @property
    def converged(self) -> bool:
        return bool(self.drift) and self.drift[-1] < 1e-2

    def to_dict(self) -> dict:
        return {
            "fitted": self.fitted.to_dict(),
            "params": list(map(float, self.fitted.params())),
            "trace": [
                {"iter": i, "loglik": float(ll), "params": list(map(float, p))}
                for i, (ll, p) in enumerate(zip(self.trace_loglik, self.trace_params))
            ],
            "drift": list(map(float, self.drift)),
            "seed": None if self.seed is None else {
                "master_seed": self.seed.master_seed,
                "stream_index": self.seed.stream_index,
                "path": list(self.seed.path),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def trace_csv(self) -> str:
        k = len(self.trace_params[0]) if self.trace_params else 0
        lines = ["iter,loglik," + ",".join(f"param_{j + 1}" for j in range(k))]
        for i, (ll, p) in enumerate(zip(self.trace_loglik, self.trace_params)):
            lines.append(f"{i},{ll!r}," + ",".join(repr(float(v)) for v in p))
        return "\n".join(lines) + "\n"


def run_em(dataset: Dataset, families: ModelPair, config: EmConfig = EmConfig()) -> EstimationResult:
    """Lower-bound maximization with a Monte-Carlo E-step.

    ``families`` supplies the hazard families (and starting values when
    ``config.init`` is an explicit pair); iteration ``k`` draws its
    imputations from ``config.seed.substream(k)``. There is no early stop:
    exactly ``config.iterations`` iterations run.
    """
    dataset.check_fitting_valid()
    pair = config.init if config.init is not None else naive_init(dataset, families, config.gtol)
    result = EstimationResult(pair, [pair.params()], [marginal_loglik(pair, dataset)], config.seed)
    for it in range(config.iterations):
        pseudo = e_step(pair, dataset, config.replicates, config.seed.substream(it), config.rejection_cap)
        accident = m_step_accident(pseudo.p1, pair.accident, config.gtol) if config.fit_accident else pair.accident
        delay = m_step_delay(pseudo.p2, pair.delay, config.gtol) if config.fit_delay else pair.delay
        new = ModelPair(accident, delay)
        old_p, new_p = pair.params(), new.params()
        result.drift.append(float(np.max(np.abs(new_p - old_p) / np.maximum(np.abs(old_p), 1e-12))))
        pair = new
        result.trace_params.append(new_p)
        result.trace_loglik.append(marginal_loglik(pair, dataset))
    result.fitted = pair
    return result


# -- lower bound -------------------------------------------------------------------

def lower_bound_value(pair: ModelPair, dataset: Dataset, q_source: ModelPair,
                      spec: QuadratureSpec | None = None) -> float:
    """Jensen lower bound on E(pair) with the posterior formed from ``q_source``.

    Expected complete-data log likelihood under q plus the entropy of q, with
    the continuous part integrated by quadrature. Equals E(pair) when
    ``q_source == pair``.
    """
    from .joint import _log_f_circ

    total = 0.0
    rep = dataset.v == 1
    if np.any(rep):
        total += float(np.sum(_log_f_circ(pair, dataset.z[rep], dataset.y[rep], dataset.x[rep])))
    for i in np.flatnonzero(~rep):
        obs = dataset.observation(int(i))
        x = obs.x if obs.x.size else None
        q = posterior_q(q_source, obs, spec)
        y = obs.y
        atom = q.atom_mass
        contrib = 0.0
        if atom > 0:
            contrib += atom * (-float(pair.accident.cumulative_hazard(y, x)) - np.log(atom))
        if y > 0:
            def integrand(z, q=q, y=y, x=x):
                log_q = q.log_density(z)
                complete = pair.accident.log_density(z, x) - pair.delay.cumulative_hazard(y - z, x)
                return np.exp(log_q) * (complete - log_q)

            contrib += integrate(integrand, 0.0, y, spec, q.breakpoints)
        total += contrib
    return float(total)
