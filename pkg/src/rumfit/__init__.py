"""Fitting random utility models to ranking data.

A ranking is modeled as the descending order of independent latent
utilities, one per alternative, each drawn from a location family
(normal or Gumbel) centered at that alternative's quality parameter.
The package parses ballot data, fits the quality parameters by
Monte-Carlo EM over Gibbs-sampled utilities, fits the Plackett-Luce
baseline in closed form, and compares fitted models by likelihood,
AIC and BIC on train/holdout splits.  ``rumfit.cli`` wraps all of it
in a deterministic command-line front end.
"""

__version__ = "0.1.0"

from .distributions import (
    LocationFamily,
    NoiseModel,
    ZeroMassIntervalError,
    sample_ranking,
    sample_utilities,
    truncated_sample,
)
from .evaluate import (
    FittedModel,
    ModelReport,
    ModelSpec,
    concavity_probe,
    fit_model,
    log_likelihood,
    model_compare,
    rank_prob_closed_form,
    rank_prob_quadrature,
    rank_prob_sis,
    recovery_experiment,
    robustness_experiment,
)
from .gibbs import GibbsConfig, estimate_suff_stats
from .mcem import FitConfig, FitResult, fit, variance_bound
from .plackett_luce import PLParams, pl_fit, pl_log_prob
from .prefdata import (
    ConditionViolationError,
    ParseError,
    Profile,
    Ranking,
    check_condition1,
    kendall_tau,
    parse_election_file,
    parse_profile,
    serialize_profile,
)

__all__ = [
    "ConditionViolationError",
    "FitConfig",
    "FitResult",
    "FittedModel",
    "GibbsConfig",
    "LocationFamily",
    "ModelReport",
    "ModelSpec",
    "NoiseModel",
    "PLParams",
    "ParseError",
    "Profile",
    "Ranking",
    "ZeroMassIntervalError",
    "check_condition1",
    "concavity_probe",
    "estimate_suff_stats",
    "fit",
    "fit_model",
    "kendall_tau",
    "log_likelihood",
    "model_compare",
    "parse_election_file",
    "parse_profile",
    "pl_fit",
    "pl_log_prob",
    "rank_prob_closed_form",
    "rank_prob_quadrature",
    "rank_prob_sis",
    "recovery_experiment",
    "robustness_experiment",
    "sample_ranking",
    "sample_utilities",
    "serialize_profile",
    "truncated_sample",
    "variance_bound",
]
