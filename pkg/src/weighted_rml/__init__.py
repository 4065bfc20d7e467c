"""Weighted randomized-maximum-likelihood sampling for Gaussian-prior inverse problems."""

from .config import ExperimentConfig, load_config
from .darcy import DarcyModel, DarcyProblem, PermTransform
from .experiments import Ensemble, build_problem, run_experiment
from .forward import ObservationSpec, banana_model, linear_model, quadratic_model
from .perturb import StochasticObjective, draw_pairs
from .prior import GaussianPrior, MaternSpec, build_dense_prior, build_matern_prior
from .reports import emit_reports, load_ensemble
from .solve import CriticalPoint, SolverConfig, all_critical_points_cubic, minimize
from .weights import normalize_and_ess

__version__ = "0.1.0"
