"""Survival estimation when accidents are only observed once reported.

Core pieces: hazard models (:mod:`delaysurv.hazards`), the observed-data
likelihood (:mod:`delaysurv.joint`), Monte-Carlo EM (:mod:`delaysurv.em`),
transfer estimation of a cohort effect (:mod:`delaysurv.two_stage`), a
simulator (:mod:`delaysurv.simulate`) and scikit-learn style wrappers
(:mod:`delaysurv.estimators`).
"""

from .em import EmConfig, EstimationResult, complete_fit, e_step, naive_init, reject_sample, run_em
from .estimators import CohortEffectEstimator, DelayedReportSurvival, check_outcome, make_outcome
from .exceptions import DelaySurvError
from .hazards import (
    ConstantHazard,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    ScalarEffect,
    model_from_dict,
    model_from_json,
)
from .joint import Dataset, ModelPair, Observation, f_circ, marginal_loglik, posterior_q, s_circ
from .numeric import QuadratureSpec, RngStream
from .simulate import SimulationConfig, semi_synthetic, simulate
from .two_stage import GammaEstimates, gamma_check, gamma_check0, gamma_hat, ratio_diagnostic

__version__ = "0.1.0"

__all__ = [
    "CohortEffectEstimator", "ConstantHazard", "Dataset", "DelaySurvError", "DelayedReportSurvival",
    "EmConfig", "EstimationResult", "GammaEstimates", "LogLinearEffect", "ModelPair", "Observation",
    "PiecewiseConstantHazard", "ProportionalHazard", "QuadratureSpec", "RngStream", "ScalarEffect",
    "SimulationConfig", "check_outcome", "complete_fit", "e_step", "f_circ", "gamma_check",
    "gamma_check0", "gamma_hat", "make_outcome", "marginal_loglik", "model_from_dict",
    "model_from_json", "naive_init", "posterior_q", "ratio_diagnostic", "reject_sample", "run_em",
    "s_circ", "semi_synthetic", "simulate",
]
