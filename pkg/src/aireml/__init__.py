"""REML variance-component estimation for linear mixed models.

Fits y = X tau + Z u + eps by maximizing the restricted log-likelihood
with one of three interchangeable Newton-type schemes (observed-
information Newton, Fisher scoring, average-information splitting) and
returns variance estimates, BLUEs/BLUPs and uncertainty.  The oracle
module carries brute-force reference implementations of every matrix
identity the fast paths rely on.
"""

from . import errors, information, likelihood, mme, oracle, predict, simulate, solver
from .errors import AiremlError
from .information import InfoMatrix, average, fisher, observed, splitting_residual
from .likelihood import ScoreVector, log_likelihood, score
from .mme import MMESystem, apply_P, assemble, cxx_block, h_inverse_dense, solve_effects
from .model import (
    Dataset,
    Model,
    RandomGroup,
    ResidualStructure,
    Theta,
    VarianceSpec,
    build_H,
    d2H,
    dH,
    validate,
)
from .predict import EffectEstimates, FitReport, effects_with_uncertainty
from .simulate import SimConfig, simulate_y
from .solver import IterationTrace, SolveOptions, fit, initial_theta

__version__ = "0.1.0"

__all__ = [
    "AiremlError",
    "Dataset",
    "EffectEstimates",
    "FitReport",
    "InfoMatrix",
    "IterationTrace",
    "MMESystem",
    "Model",
    "RandomGroup",
    "ResidualStructure",
    "ScoreVector",
    "SimConfig",
    "SolveOptions",
    "Theta",
    "VarianceSpec",
    "apply_P",
    "assemble",
    "average",
    "build_H",
    "cxx_block",
    "d2H",
    "dH",
    "effects_with_uncertainty",
    "errors",
    "fisher",
    "fit",
    "h_inverse_dense",
    "information",
    "initial_theta",
    "likelihood",
    "log_likelihood",
    "mme",
    "observed",
    "oracle",
    "predict",
    "score",
    "simulate",
    "simulate_y",
    "solve_effects",
    "solver",
    "splitting_residual",
    "validate",
]
