"""Solver for coupled HJB / Fokker-Planck mean-field-game systems.

Two networks approximate the population density and the value function;
they are trained alternately on Monte-Carlo residual losses of the two
equations (or jointly, for the summed-loss baseline).  See README.md for
the command-line interface and the estimator API.
"""

import os

# The matrices here are small; threaded BLAS loses badly to a single core
# and makes run-to-run timings erratic.  Honour any explicit user setting.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .errors import (
    CheckpointError,
    ConfigError,
    DomainError,
    MFDGMError,
    NumericError,
    ShapeError,
    UsageError,
)
from .jets import Jet, JetBatch, JetTape, ParamGradient, eval_jet, eval_jet_batch, finite_diff_probe, loss_param_gradient
from .networks import NetworkParams, NetworkSpec, activation_values, forward, forward_batch, init_network, parameter_count
from .fields import AnalyticField, NetworkField
from .problems import MFGProblem, check_problem_consistency, make_analytic_gaussian, make_traffic_lwr
from .residuals import LossParts, ResidualSample, fp_loss, fp_residual, hjb_loss, hjb_residual
from .sampling import SampleBatch, make_rng, sample_interior, sample_spatial
from .training import (
    MetricsRecord,
    OptimizerSettings,
    OptimizerState,
    TrainConfig,
    TrainResult,
    adam_step,
    sgd_step,
    train,
    train_dgm_mfg,
    train_mfdgm,
)
from .evaluation import (
    GridEval,
    evaluate_network_grid,
    fundamental_diagram,
    relative_error,
    rolling_average,
    speed_field,
)
from .solver import MFDGMSolver

__version__ = "0.1.0"

__all__ = [
    "AnalyticField",
    "CheckpointError",
    "ConfigError",
    "DomainError",
    "GridEval",
    "Jet",
    "JetBatch",
    "JetTape",
    "LossParts",
    "MFDGMError",
    "MFDGMSolver",
    "MFGProblem",
    "MetricsRecord",
    "NetworkField",
    "NetworkParams",
    "NetworkSpec",
    "NumericError",
    "OptimizerSettings",
    "OptimizerState",
    "ParamGradient",
    "ResidualSample",
    "SampleBatch",
    "ShapeError",
    "TrainConfig",
    "TrainResult",
    "UsageError",
    "activation_values",
    "adam_step",
    "check_problem_consistency",
    "eval_jet",
    "eval_jet_batch",
    "evaluate_network_grid",
    "finite_diff_probe",
    "forward",
    "forward_batch",
    "fp_loss",
    "fp_residual",
    "fundamental_diagram",
    "hjb_loss",
    "hjb_residual",
    "init_network",
    "loss_param_gradient",
    "make_analytic_gaussian",
    "make_rng",
    "make_traffic_lwr",
    "parameter_count",
    "relative_error",
    "rolling_average",
    "sample_interior",
    "sample_spatial",
    "sgd_step",
    "speed_field",
    "train",
    "train_dgm_mfg",
    "train_mfdgm",
]
