"""Two-event (accident then report) probability structure.

An accident happens at ``T1`` and is reported after a delay ``T2``; both are
right-censored by ``C``. Before a report arrives the accident itself is
invisible, so unreported rows only carry the mixture survival

    S_o(y) = S1(y) + int_0^y f1(t) S2(y - t) dt,

while reported rows carry the joint density ``f1(z) f2(y - z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.special import exprel

from .exceptions import MissingLatent, MissingTau, OrderViolation
from .hazards import HazardModel, is_constant_in_time, model_from_dict
from .numeric import QuadratureSpec, integrate


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float
    v: int
    z: Optional[float] = None
    w: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if self.y < 0:
            raise ValueError("y must be nonnegative")
        if self.v not in (0, 1):
            raise ValueError("v must be 0 or 1")
        if self.v == 1:
            if self.z is None:
                raise MissingLatent("reported observation needs an accident time z")
            if self.w is None:
                object.__setattr__(self, "w", 1)
            if self.w != 1:
                raise ValueError("a reported observation must have w=1")
            if not 0 <= self.z <= self.y:
                raise OrderViolation(f"need 0 <= z <= y, got z={self.z}, y={self.y}")
        elif self.z is not None or self.w is not None:
            raise ValueError("accident status of an unreported observation is unobservable")

    @property
    def y_dagger(self) -> float:
        return self.z if self.v == 1 else self.y

    def v_dagger(self, tau: float) -> int:
        return int(self.y >= tau * (1 - self.v))


@dataclass(frozen=True)
class Dataset:
    """Observed rows ``(x, y, v)`` plus ``z`` for reported rows (NaN otherwise)."""

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    z: np.ndarray
    tau: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        v = np.asarray(self.v).astype(np.int8).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        if x.shape[0] != n or v.size != n or z.size != n:
            raise ValueError("x, y, v, z must have the same number of rows")
        if np.any(y < 0):
            raise ValueError("y must be nonnegative")
        if not np.all((v == 0) | (v == 1)):
            raise ValueError("v must be binary")
        rep = v == 1
        if np.any(np.isnan(z[rep])):
            raise MissingLatent("reported rows must carry z")
        if np.any(~np.isnan(z[~rep])):
            raise ValueError("unreported rows must not carry z")
        if np.any((z[rep] < 0) | (z[rep] > y[rep])):
            raise OrderViolation("reported rows need 0 <= z <= y")
        if self.tau is not None and np.any(y > self.tau):
            raise ValueError("administratively censored data must satisfy y <= tau")
        for name, arr in (("x", x), ("y", y), ("v", v), ("z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], tau=None, label="") -> "Dataset":
        obs = list(observations)
        d = obs[0].x.size if obs else 0
        x = np.array([o.x for o in obs]).reshape(len(obs), d)
        return cls(
            x=x,
            y=np.array([o.y for o in obs], dtype=float),
            v=np.array([o.v for o in obs]),
            z=np.array([np.nan if o.z is None else o.z for o in obs], dtype=float),
            tau=tau,
            label=label,
        )

    def __len__(self) -> int:
        return self.y.size

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self.observation(i)

    def observation(self, i: int) -> Observation:
        if self.v[i]:
            return Observation(self.x[i], float(self.y[i]), 1, float(self.z[i]), 1)
        return Observation(self.x[i], float(self.y[i]), 0)

    @property
    def n(self) -> int:
        return len(self)

    @property
    def m(self) -> int:
        return int(np.sum(self.v == 0))

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def w(self) -> np.ndarray:
        return np.where(self.v == 1, 1.0, np.nan)

    @property
    def y_dagger(self) -> np.ndarray:
        return np.where(self.v == 1, self.z, self.y)

    def v_dagger(self, tau: float | None = None) -> np.ndarray:
        tau = self.tau if tau is None else tau
        if tau is None:
            raise MissingTau("v_dagger needs an administrative censoring time")
        return (self.y >= tau * (1 - self.v)).astype(np.int8)

    def subset(self, index) -> "Dataset":
        return Dataset(self.x[index], self.y[index], self.v[index], self.z[index], self.tau, self.label)

    def check_fitting_valid(self):
        if self.n == 0:
            raise ValueError("empty dataset")
        if not np.any((self.v == 1) & (self.z > 0)):
            raise ValueError("fitting requires at least one reported row with z > 0")


@dataclass(frozen=True)
class ModelPair:
    accident: HazardModel
    delay: HazardModel

    @property
    def n_params(self) -> int:
        return self.accident.n_params + self.delay.n_params

    def params(self) -> np.ndarray:
        return np.concatenate([self.accident.params(), self.delay.params()])

    def with_params(self, params) -> "ModelPair":
        params = np.asarray(params, dtype=float)
        k = self.accident.n_params
        return ModelPair(self.accident.with_params(params[:k]), self.delay.with_params(params[k:]))

    def to_dict(self) -> dict:
        return {"accident": self.accident.to_dict(), "delay": self.delay.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelPair":
        return cls(model_from_dict(d["accident"]), model_from_dict(d["delay"]))


# -- closed-form convolution -------------------------------------------------

def _lin_moment(c):
    """int_0^1 s exp(-c s) ds for c >= 0, stable near 0."""
    c = np.asarray(c, dtype=float)
    out = np.empty_like(c)
    small = c < 0.5
    cs = c[small]
    term = np.full_like(cs, 0.5)
    total = term.copy()
    fact = 1.0
    for k in range(1, 16):
        fact *= k
        total = total + (-cs) ** k / (fact * (k + 2))
    out[small] = total
    cb = c[~small]
    out[~small] = -np.expm1(-cb) / cb**2 - np.exp(-cb) / cb
    return out


# test hook: multiplicative perturbation of the closed-form convolution term
_CLOSED_FORM_FAULT = 0.0


def has_closed_form(pair: ModelPair) -> bool:
    return is_constant_in_time(pair.delay)


def _rows(y, x):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = np.broadcast_to(x, (y.size, x.size))
    return y, x


def _closed_parts(pair: ModelPair, y, x):
    """Per-segment pieces of S_o for a piecewise accident and a constant delay.

    On segment k with clipped span ``[l, r]`` and accident rate ``a``
    the convolution contributes ``T = a int_l^r S1(t) exp(-mu (y - t)) dt``;
    the form is chosen by the sign of ``mu - a`` so no exponential overflows.
    ``M`` is the companion integral with an extra linear weight, needed for
    derivatives in ``a`` and ``mu``.
    """
    y, x = _rows(y, x)
    n = y.size
    knots, a = pair.accident.segment_structure(x)
    a = np.broadcast_to(a, (n, a.shape[1]))
    _, m = pair.delay.segment_structure(x)
    mu = np.broadcast_to(m[:, 0], (n,))[:, None]
    left = knots[:-1]
    L = np.clip(y[:, None] - left, 0.0, np.diff(knots))
    aL = a * L
    h_right = np.cumsum(aL, axis=1)
    h_left = h_right - aL
    right = left + L
    d = mu - a
    c = np.abs(d)
    cl = c * L
    e0 = L * exprel(-cl)
    e1 = L**2 * _lin_moment(cl)
    pos = d > 0
    active = L > 0
    with np.errstate(over="ignore", invalid="ignore"):
        expo = np.where(pos, -h_right - mu * (y[:, None] - right), -h_left - mu * (y[:, None] - left))
    base = np.where(active, a * np.exp(np.where(active, expo, 0.0)), 0.0)
    T = base * e0 * (1.0 + _CLOSED_FORM_FAULT)
    M = base * np.where(pos, L * e0 - e1, e1)
    s1 = np.exp(-h_right[:, -1])
    return {"y": y, "x": x, "a": a, "mu": mu[:, 0], "L": L, "left": left,
            "T": T, "M": M, "s1": s1}


def _s_circ_closed(pair, y, x):
    parts = _closed_parts(pair, y, x)
    return parts["s1"] + parts["T"].sum(axis=1)


def _conv_breakpoints(pair, y):
    pts = [b for b in pair.accident.breakpoints() if 0 < b < y]
    pts += [y - b for b in pair.delay.breakpoints() if 0 < y - b < y]
    return pts


def _s_circ_quad_row(pair, y, x, spec):
    conv = integrate(
        lambda t: pair.accident.density(t, x) * pair.delay.survival(y - t, x),
        0.0, y, spec, _conv_breakpoints(pair, y),
    )
    return float(pair.accident.survival(y, x)) + conv


def s_circ(pair: ModelPair, y, x=None, method: str = "auto", spec: QuadratureSpec | None = None):
    """Mixture survival ``S_o(y | x)``: no report has arrived by ``y``.

    ``method`` is ``"closed"`` (piecewise accident with time-constant delay),
    ``"quadrature"`` or ``"auto"`` (closed form whenever available).
    """
    scalar = np.ndim(y) == 0
    yy, xx = _rows(y, x)
    if method == "auto":
        method = "closed" if has_closed_form(pair) else "quadrature"
    if method == "closed":
        out = _s_circ_closed(pair, yy, xx)
    elif method == "quadrature":
        out = np.array([_s_circ_quad_row(pair, yy[i], None if xx is None else xx[i], spec)
                        for i in range(yy.size)])
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out[0]) if scalar else out


def f_circ(pair: ModelPair, z, y, x=None):
    """Joint density ``f1(z) f2(y - z)`` of accident at z and report at y."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(z > y):
        raise OrderViolation("accident time exceeds report time")
    out = pair.accident.density(z, x) * pair.delay.density(y - z, x)
    return float(out) if out.ndim == 0 else out


def _log_f_circ(pair, z, y, x):
    return pair.accident.log_density(z, x) + pair.delay.log_density(y - z, x)


def _check_latent(dataset):
    if np.any(np.isnan(dataset.z[dataset.v == 1])):
        raise MissingLatent("reported rows must carry z")


def marginal_loglik_terms(pair: ModelPair, dataset: Dataset, method: str = "auto") -> np.ndarray:
    _check_latent(dataset)
    out = np.empty(dataset.n)
    un = dataset.v == 0
    rep = ~un
    if np.any(un):
        out[un] = np.log(s_circ(pair, dataset.y[un], dataset.x[un], method=method))
    if np.any(rep):
        out[rep] = _log_f_circ(pair, dataset.z[rep], dataset.y[rep], dataset.x[rep])
    return out


def marginal_loglik(pair: ModelPair, dataset: Dataset, method: str = "auto") -> float:
    """Observed-data log likelihood E with the latent accident status integrated out.

    Censoring terms are excluded.
    """
    return float(np.sum(marginal_loglik_terms(pair, dataset, method)))


def _grad_log_f(model, t, x):
    return model.grad_log_hazard(t, x) - model.grad_cumulative_hazard(t, x)


def _grad_s_circ_closed(pair, y, x):
    """Gradient of S_o w.r.t. (accident params, delay params), rows x p."""
    parts = _closed_parts(pair, y, x)
    a, L, T, M, s1 = parts["a"], parts["L"], parts["T"], parts["M"], parts["s1"]
    y, x = parts["y"], parts["x"]
    n = y.size
    tail = np.cumsum(T[:, ::-1], axis=1)[:, ::-1] - T
    d_a = -L * s1[:, None] + T / a - M - L * tail
    d_mu = np.sum(-(y[:, None] - parts["left"]) * T + M, axis=1)
    d_mu = np.where(np.isfinite(d_mu), d_mu, 0.0)
    j1 = pair.accident.rate_jacobian(x)
    j1 = np.broadcast_to(j1, (n,) + j1.shape[1:])
    j2 = pair.delay.rate_jacobian(x)
    j2 = np.broadcast_to(j2, (n,) + j2.shape[1:])
    g1 = np.einsum("nk,nkp->np", d_a, j1)
    g2 = d_mu[:, None] * j2[:, 0, :]
    return np.concatenate([g1, g2], axis=1)


def _grad_s_circ_quad_row(pair, y, x, spec):
    acc, dly = pair.accident, pair.delay

    def integrand(t):
        weight = acc.density(t, x) * dly.survival(y - t, x)
        g1 = _grad_log_f(acc, t, x)
        g2 = -dly.grad_cumulative_hazard(y - t, x)
        return weight[:, None] * np.concatenate([g1, g2], axis=1)

    conv = integrate(integrand, 0.0, y, spec, _conv_breakpoints(pair, y))
    s1 = float(acc.survival(y, x))
    d_s1 = -s1 * np.atleast_1d(acc.grad_cumulative_hazard(y, x)).ravel()
    return np.concatenate([d_s1, np.zeros(dly.n_params)]) + conv


def grad_s_circ(pair: ModelPair, y, x=None, method: str = "auto", spec=None) -> np.ndarray:
    yy, xx = _rows(y, x)
    if method == "auto":
        method = "closed" if has_closed_form(pair) else "quadrature"
    if method == "closed":
        return _grad_s_circ_closed(pair, yy, xx)
    return np.array([_grad_s_circ_quad_row(pair, yy[i], None if xx is None else xx[i], spec)
                     for i in range(yy.size)])


def marginal_loglik_gradient(pair: ModelPair, dataset: Dataset, free=None, method: str = "auto") -> np.ndarray:
    """Analytic gradient of E in natural-scale parameters.

    Coordinates follow ``pair.params()``: accident rates, accident effect,
    delay rates, delay effect. ``free`` is an optional boolean mask selecting
    the coordinates to return (fixed parameters are dropped).
    """
    _check_latent(dataset)
    p1 = pair.accident.n_params
    grad = np.zeros(pair.n_params)
    un = dataset.v == 0
    rep = ~un
    if np.any(un):
        y, x = dataset.y[un], dataset.x[un]
        ds = grad_s_circ(pair, y, x, method=method)
        s = s_circ(pair, y, x, method=method)
        grad += np.sum(ds / s[:, None], axis=0)
    if np.any(rep):
        z, y, x = dataset.z[rep], dataset.y[rep], dataset.x[rep]
        g1 = np.broadcast_to(_grad_log_f(pair.accident, z, x), (z.size, p1))
        g2 = np.broadcast_to(_grad_log_f(pair.delay, y - z, x), (z.size, pair.delay.n_params))
        grad[:p1] += g1.sum(axis=0)
        grad[p1:] += g2.sum(axis=0)
    if free is not None:
        grad = grad[np.asarray(free, dtype=bool)]
    return grad


@dataclass(frozen=True)
class PosteriorQ:
    """Posterior of the latent accident status of an unreported row.

    An atom at ``(z=y, w=0)`` with mass ``S1(y)/S_o(y)`` and a density
    ``f1(z) S2(y - z) / S_o(y)`` on ``(0, y)`` with ``w=1``.
    """

    pair: ModelPair
    y: float
    x: Optional[np.ndarray] = None
    spec: Optional[QuadratureSpec] = None
    normalizer: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "normalizer", s_circ(self.pair, self.y, self.x))

    @property
    def atom_mass(self) -> float:
        return float(self.pair.accident.survival(self.y, self.x)) / self.normalizer

    def density(self, z):
        z = np.asarray(z, dtype=float)
        return (self.pair.accident.density(z, self.x)
                * self.pair.delay.survival(self.y - z, self.x) / self.normalizer)

    def log_density(self, z):
        z = np.asarray(z, dtype=float)
        return (self.pair.accident.log_density(z, self.x)
                - self.pair.delay.cumulative_hazard(self.y - z, self.x) - np.log(self.normalizer))

    @property
    def breakpoints(self):
        return _conv_breakpoints(self.pair, self.y)

    def continuous_mass(self, upper: float | None = None) -> float:
        upper = self.y if upper is None else min(upper, self.y)
        return integrate(self.density, 0.0, upper, self.spec,
                         [b for b in self.breakpoints if b < upper])

    def total_mass(self) -> float:
        return self.atom_mass + self.continuous_mass()

    def conditional_cdf(self, grid) -> np.ndarray:
        """CDF of z given w=1 on an increasing grid in [0, y], by cumulative quadrature."""
        grid = np.asarray(grid, dtype=float)
        edges = np.unique(np.concatenate([[0.0], grid, self.breakpoints, [self.y]]))
        pieces = [integrate(self.density, lo, hi, self.spec) for lo, hi in zip(edges[:-1], edges[1:])]
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        cum /= cum[-1] if cum[-1] > 0 else 1.0
        return np.interp(grid, edges, cum)

    def conditional_mean(self) -> float:
        num = integrate(lambda z: z * self.density(z), 0.0, self.y, self.spec, self.breakpoints)
        return num / self.continuous_mass()


def posterior_q(pair: ModelPair, obs: Observation, spec: QuadratureSpec | None = None) -> PosteriorQ:
    if obs.v != 0:
        raise ValueError("posterior over the accident status is only defined for unreported rows")
    return PosteriorQ(pair, obs.y, obs.x if obs.x.size else None, spec)


def censoring_loglik(censor_model: HazardModel, dataset: Dataset, admin: bool = False, tau=None) -> float:
    """Censoring-model log likelihood; with ``admin`` rows at tau count as survivors."""
    if admin:
        tau = dataset.tau if tau is None else tau
        if tau is None:
            raise MissingTau("administrative censoring likelihood needs tau")
        ind = dataset.v_dagger(tau)
    else:
        ind = dataset.v
    x = dataset.x if dataset.dim else None
    log_s = -censor_model.cumulative_hazard(dataset.y, x)
    log_f = np.log(censor_model.hazard(dataset.y, x)) + log_s
    return float(np.sum(np.where(ind == 1, log_s, log_f)))


def admin_atom_probability(pair: ModelPair, censor_model: HazardModel, tau: float, x=None) -> float:
    """Probability of the atom ``(y = tau, v = 0)`` under administrative censoring."""
    return s_circ(pair, tau, x) * float(censor_model.survival(tau, x))
