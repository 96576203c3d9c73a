"""Parametric hazard families: constant, piecewise-constant baseline and
proportional hazards with a log-linear or scalar covariate effect.

All evaluation methods broadcast over time arrays and covariate matrices:
``t`` of shape ``(n,)`` pairs with ``x`` of shape ``(n, d)`` (or a single
``(d,)`` row). Parameter vectors are in natural scale and ordered as in the
JSON serialization: baseline rates first, then effect values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import DimensionMismatch
from .numeric import as_generator


def _as_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    return t


class _HazardBase:
    """Shared survival/density/sampling logic on top of hazard + cumulative hazard."""

    def survival(self, t, x=None):
        return np.exp(-self.cumulative_hazard(t, x))

    def density(self, t, x=None):
        return self.hazard(t, x) * self.survival(t, x)

    def log_density(self, t, x=None):
        return np.log(self.hazard(t, x)) - self.cumulative_hazard(t, x)

    def sample(self, x=None, rng=None, size=None):
        """Exact inverse-transform draws ``H^{-1}(-log U | x)``."""
        gen = as_generator(rng)
        if size is None:
            size = () if x is None or np.ndim(x) <= 1 else np.shape(x)[0]
        u = gen.random(size)
        return self.sample_from_uniform(u, x)

    def sample_from_uniform(self, u, x=None):
        return self.inverse_cumulative_hazard(-np.log(np.asarray(u, dtype=float)), x)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ConstantHazard(_HazardBase):
    rate: float

    def __post_init__(self):
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"rate must be positive and finite, got {self.rate}")

    @property
    def n_params(self) -> int:
        return 1

    def params(self) -> np.ndarray:
        return np.array([self.rate])

    def with_params(self, params) -> "ConstantHazard":
        return ConstantHazard(float(np.asarray(params).ravel()[0]))

    def hazard(self, t, x=None):
        return np.full(np.shape(_as_time(t)), self.rate)

    def cumulative_hazard(self, t, x=None):
        return self.rate * _as_time(t)

    def inverse_cumulative_hazard(self, mass, x=None):
        return np.asarray(mass, dtype=float) / self.rate

    def segment_structure(self, x=None):
        """Knots and per-row piecewise rates (one infinite segment)."""
        return np.array([0.0, np.inf]), np.array([[self.rate]])

    def rate_jacobian(self, x=None):
        # d(segment rate)/d(params), shape (rows, K, p)
        return np.ones((1, 1, 1))

    def grad_log_hazard(self, t, x=None):
        t = _as_time(t)
        return np.full(t.shape + (1,), 1.0 / self.rate)

    def grad_cumulative_hazard(self, t, x=None):
        return _as_time(t)[..., None]

    def breakpoints(self):
        return ()

    def max_hazard(self, upper, x=None):
        return self.rate

    def to_dict(self) -> dict:
        return {"family": "constant", "rates": [self.rate]}


@dataclass(frozen=True)
class PiecewiseConstantHazard(_HazardBase):
    """Right-continuous step hazard: rate ``rates[k]`` on ``[knots[k], knots[k+1])``.

    ``knots`` runs from 0 to ``inf``; a finite last knot gets ``inf`` appended.
    """

    knots: tuple
    rates: tuple

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        if knots[-1] != np.inf:
            knots = knots + (np.inf,)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "rates", rates)
        if knots[0] != 0.0:
            raise ValueError("knots must start at 0")
        if any(b <= a for a, b in zip(knots[:-1], knots[1:])):
            raise ValueError("knots must be strictly increasing")
        if len(rates) != len(knots) - 1 or not rates:
            raise ValueError(f"expected {len(knots) - 1} rates, got {len(rates)}")
        if not all(np.isfinite(r) and r > 0 for r in rates):
            raise ValueError("rates must be positive and finite")

    @property
    def n_segments(self) -> int:
        return len(self.rates)

    @property
    def n_params(self) -> int:
        return self.n_segments

    def params(self) -> np.ndarray:
        return np.array(self.rates)

    def with_params(self, params) -> "PiecewiseConstantHazard":
        return PiecewiseConstantHazard(self.knots, tuple(np.asarray(params, dtype=float)))

    @property
    def _knot_array(self):
        return np.array(self.knots)

    def segment_index(self, t):
        idx = np.searchsorted(self._knot_array, _as_time(t), side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def overlaps(self, t):
        """Length of ``[0, t]`` falling in each segment, shape ``t.shape + (K,)``."""
        knots = self._knot_array
        widths = np.diff(knots)
        return np.clip(_as_time(t)[..., None] - knots[:-1], 0.0, widths)

    def hazard(self, t, x=None):
        return np.array(self.rates)[self.segment_index(t)]

    def cumulative_hazard(self, t, x=None):
        return self.overlaps(t) @ np.array(self.rates)

    def inverse_cumulative_hazard(self, mass, x=None):
        mass = np.asarray(mass, dtype=float)
        knots = self._knot_array
        rates = np.array(self.rates)
        at_knots = np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(knots)[:-1])])
        k = np.searchsorted(at_knots, mass, side="right") - 1
        return knots[k] + (mass - at_knots[k]) / rates[k]

    def segment_structure(self, x=None):
        return self._knot_array, np.array(self.rates)[None, :]

    def rate_jacobian(self, x=None):
        return np.eye(self.n_segments)[None, :, :]

    def grad_log_hazard(self, t, x=None):
        t = _as_time(t)
        onehot = np.eye(self.n_segments)[self.segment_index(t)]
        return onehot / np.array(self.rates)

    def grad_cumulative_hazard(self, t, x=None):
        return self.overlaps(t)

    def breakpoints(self):
        return self.knots[1:-1]

    def max_hazard(self, upper, x=None):
        """Largest rate attained on ``[0, upper]``."""
        last = int(self.segment_index(upper))
        return max(self.rates[: last + 1])

    def to_dict(self) -> dict:
        return {"family": "piecewise_ph", "rates": list(self.rates),
                "knots": list(self.knots[:-1]), "effect": None}


@dataclass(frozen=True)
class LogLinearEffect:
    """Covariate effect ``exp(beta . x)``."""

    coefficients: tuple

    def __post_init__(self):
        coef = tuple(float(c) for c in np.atleast_1d(self.coefficients))
        if not all(np.isfinite(coef)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coef)

    @property
    def dim(self) -> int:
        return len(self.coefficients)

    @property
    def n_params(self) -> int:
        return self.dim

    def params(self):
        return np.array(self.coefficients)

    def with_params(self, params):
        return LogLinearEffect(tuple(np.asarray(params, dtype=float)))

    def _check(self, x):
        if x is None:
            raise DimensionMismatch(f"covariates of dimension {self.dim} required")
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise DimensionMismatch(f"expected covariate dimension {self.dim}, got shape {x.shape}")
        return x

    def value(self, x):
        x = self._check(x)
        return np.exp(x @ np.array(self.coefficients))

    def grad_log_value(self, x):
        # d log phi / d beta = x
        return self._check(x)

    def to_dict(self):
        return {"type": "loglinear", "values": list(self.coefficients)}


@dataclass(frozen=True)
class ScalarEffect:
    """Homogeneous cohort effect ``gamma``; covariates are ignored."""

    gamma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def n_params(self) -> int:
        return 1

    def params(self):
        return np.array([self.gamma])

    def with_params(self, params):
        return ScalarEffect(float(np.asarray(params).ravel()[0]))

    def value(self, x):
        if x is None:
            return np.float64(self.gamma)
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.gamma)

    def grad_log_value(self, x):
        if x is None:
            return np.array([1.0 / self.gamma])
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1] + (1,), 1.0 / self.gamma)

    def to_dict(self):
        return {"type": "scalar", "values": [self.gamma]}


Effect = Union[LogLinearEffect, ScalarEffect]


@dataclass(frozen=True)
class ProportionalHazard(_HazardBase):
    """``h(t | x) = h_b(t) * phi(x)`` with a piecewise-constant baseline."""

    baseline: PiecewiseConstantHazard
    effect: Effect

    @property
    def n_params(self) -> int:
        return self.baseline.n_params + self.effect.n_params

    def params(self) -> np.ndarray:
        return np.concatenate([self.baseline.params(), self.effect.params()])

    def with_params(self, params) -> "ProportionalHazard":
        params = np.asarray(params, dtype=float)
        k = self.baseline.n_params
        return ProportionalHazard(self.baseline.with_params(params[:k]), self.effect.with_params(params[k:]))

    def with_effect(self, effect: Effect) -> "ProportionalHazard":
        return ProportionalHazard(self.baseline, effect)

    def hazard(self, t, x=None):
        return self.baseline.hazard(t) * self.effect.value(x)

    def cumulative_hazard(self, t, x=None):
        return self.baseline.cumulative_hazard(t) * self.effect.value(x)

    def inverse_cumulative_hazard(self, mass, x=None):
        return self.baseline.inverse_cumulative_hazard(np.asarray(mass, dtype=float) / self.effect.value(x))

    def segment_structure(self, x=None):
        phi = np.atleast_1d(self.effect.value(x))
        return self.baseline._knot_array, phi[:, None] * np.array(self.baseline.rates)[None, :]

    def rate_jacobian(self, x=None):
        phi = np.atleast_1d(self.effect.value(x))
        rates = np.array(self.baseline.rates)
        k = rates.size
        jac_base = phi[:, None, None] * np.eye(k)[None, :, :]
        seg = phi[:, None] * rates[None, :]
        glog = np.atleast_2d(self.effect.grad_log_value(x))
        if glog.shape[0] != phi.shape[0]:
            glog = np.broadcast_to(glog, (phi.shape[0], glog.shape[-1]))
        jac_eff = seg[:, :, None] * glog[:, None, :]
        return np.concatenate([jac_base, jac_eff], axis=2)

    def grad_log_hazard(self, t, x=None):
        gb = self.baseline.grad_log_hazard(t)
        ge = self.effect.grad_log_value(x)
        shape = np.broadcast_shapes(gb.shape[:-1], ge.shape[:-1])
        return np.concatenate([np.broadcast_to(gb, shape + gb.shape[-1:]),
                               np.broadcast_to(ge, shape + ge.shape[-1:])], axis=-1)

    def grad_cumulative_hazard(self, t, x=None):
        phi = np.asarray(self.effect.value(x))
        overlaps = self.baseline.overlaps(t)
        cum = overlaps @ np.array(self.baseline.rates)
        gb = overlaps * phi[..., None]
        ge = (cum * phi)[..., None] * self.effect.grad_log_value(x)
        shape = np.broadcast_shapes(gb.shape[:-1], ge.shape[:-1])
        return np.concatenate([np.broadcast_to(gb, shape + gb.shape[-1:]),
                               np.broadcast_to(ge, shape + ge.shape[-1:])], axis=-1)

    def breakpoints(self):
        return self.baseline.breakpoints()

    def max_hazard(self, upper, x=None):
        return self.baseline.max_hazard(upper) * float(np.max(self.effect.value(x)))

    def to_dict(self) -> dict:
        d = self.baseline.to_dict()
        d["effect"] = self.effect.to_dict()
        return d


HazardModel = Union[ConstantHazard, PiecewiseConstantHazard, ProportionalHazard]


def hazard(model, t, x=None):
    return model.hazard(t, x)


def cumulative_hazard(model, t, x=None):
    return model.cumulative_hazard(t, x)


def survival(model, t, x=None):
    return model.survival(t, x)


def density(model, t, x=None):
    return model.density(t, x)


def sample(model, x=None, rng=None, size=None):
    return model.sample(x, rng, size)


def is_piecewise_in_time(model) -> bool:
    return isinstance(model, (ConstantHazard, PiecewiseConstantHazard, ProportionalHazard))


def is_constant_in_time(model) -> bool:
    """True when the hazard is constant in t for every covariate row."""
    if isinstance(model, ConstantHazard):
        return True
    if isinstance(model, PiecewiseConstantHazard):
        return model.n_segments == 1
    if isinstance(model, ProportionalHazard):
        return model.baseline.n_segments == 1
    return False


def model_from_dict(d: dict) -> HazardModel:
    family = d.get("family")
    if family == "constant":
        return ConstantHazard(float(d["rates"][0]))
    if family == "piecewise_ph":
        baseline = PiecewiseConstantHazard(tuple(d["knots"]), tuple(d["rates"]))
        effect = d.get("effect")
        if effect is None:
            return baseline
        if effect["type"] == "loglinear":
            return ProportionalHazard(baseline, LogLinearEffect(tuple(effect["values"])))
        if effect["type"] == "scalar":
            return ProportionalHazard(baseline, ScalarEffect(float(effect["values"][0])))
        raise ValueError(f"unknown effect type {effect['type']!r}")
    raise ValueError(f"unknown hazard family {family!r}")


def model_from_json(text: str) -> HazardModel:
    return model_from_dict(json.loads(text))
