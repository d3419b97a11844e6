"""Estimator-style front end around the training loops.

``MFDGMSolver`` follows the scikit-learn convention: constructor arguments
are stored verbatim (so ``get_params`` / ``set_params`` / ``clone`` work),
``fit`` trains the two networks on the configured problem, and fitted
state lives in trailing-underscore attributes.  ``fit`` takes no data:
the solver draws its own collocation points.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import UsageError
from .networks import NetworkSpec, forward_batch
from .problems import MFGProblem, make_analytic_gaussian, make_traffic_lwr
from .training import OptimizerSettings, TrainConfig, train

PROBLEM_NAMES = ("analytic-gaussian", "traffic-lwr")


class MFDGMSolver(BaseEstimator):
    """Solves one mean-field-game system with two networks.

    Parameters mirror the experiment configuration: the problem selector
    and its knobs, the shared network architecture (activations may differ
    between the value and density networks), and the optimizer settings.
    After ``fit``, ``predict(X)`` evaluates both fields at rows
    ``(t, x_1, .., x_d)`` and returns columns ``[rho, phi]``.
    """

    def __init__(self, problem="analytic-gaussian", d=1, nu=1.0, beta=1.0,
                 gamma=0.0, rho0_amplitude=-0.6, rho0_offset=0.2,
                 mode="mfdgm", iterations=1000, batch_interior=256,
                 batch_condition=256, hidden_width=100, hidden_layers=3,
                 phi_activation="softplus", rho_activation="tanh",
                 skip_weight=0.5, optimizer="adam", phi_lr=1e-4, rho_lr=1e-4,
                 weight_decay=1e-3, record_every=100, seed=0):
        self.problem = problem
        self.d = d
        self.nu = nu
        self.beta = beta
        self.gamma = gamma
        self.rho0_amplitude = rho0_amplitude
        self.rho0_offset = rho0_offset
        self.mode = mode
        self.iterations = iterations
        self.batch_interior = batch_interior
        self.batch_condition = batch_condition
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.phi_activation = phi_activation
        self.rho_activation = rho_activation
        self.skip_weight = skip_weight
        self.optimizer = optimizer
        self.phi_lr = phi_lr
        self.rho_lr = rho_lr
        self.weight_decay = weight_decay
        self.record_every = record_every
        self.seed = seed

    # -- assembly -------------------------------------------------------------

    def build_problem(self) -> MFGProblem:
        if isinstance(self.problem, MFGProblem):
            return self.problem
        if self.problem == "analytic-gaussian":
            return make_analytic_gaussian(self.d, self.nu, self.beta, self.gamma)
        if self.problem == "traffic-lwr":
            return make_traffic_lwr(self.nu, self.rho0_amplitude, self.rho0_offset)
        raise UsageError(
            f"problem must be an MFGProblem or one of {PROBLEM_NAMES}, got {self.problem!r}")

    def build_config(self, problem: MFGProblem) -> TrainConfig:
        opt = lambda lr: OptimizerSettings(kind=self.optimizer, lr=lr,
                                           weight_decay=self.weight_decay)
        spec = lambda act: NetworkSpec(
            input_dim=1 + problem.d, hidden_width=self.hidden_width,
            hidden_layers=self.hidden_layers, activation=act,
            skip_weight=self.skip_weight)
        return TrainConfig(
            mode=self.mode, iterations=self.iterations,
            batch_interior=self.batch_interior,
            batch_condition=self.batch_condition, seed=self.seed,
            phi_network=spec(self.phi_activation),
            rho_network=spec(self.rho_activation),
            phi_opt=opt(self.phi_lr), rho_opt=opt(self.rho_lr),
            record_every=self.record_every)

    # -- estimator API ----------------------------------------------------------

    def fit(self, X=None, y=None):
        """Train both networks; X and y are ignored (collocation points are
        sampled internally from the problem domain)."""
        problem = self.build_problem()
        config = self.build_config(problem)
        result = train(problem, config)
        self.problem_ = problem
        self.config_ = config
        self.result_ = result
        self.phi_params_ = result.phi_params
        self.rho_params_ = result.rho_params
        self.metrics_ = result.metrics
        self.n_iter_ = result.iterations_done
        return self

    def _check_fitted(self):
        if not hasattr(self, "phi_params_"):
            raise UsageError("this solver is not fitted yet; call fit() first")

    def _validate_points(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 1 + self.problem_.d:
            raise UsageError(
                f"expected points of shape (n, {1 + self.problem_.d}) as rows "
                f"(t, x_1, .., x_d), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise UsageError("evaluation points must be finite")
        return X[:, 0], X[:, 1:]

    def predict_phi(self, X) -> np.ndarray:
        self._check_fitted()
        t, x = self._validate_points(X)
        return forward_batch(self.phi_params_, self.config_.phi_network, t, x)

    def predict_rho(self, X) -> np.ndarray:
        self._check_fitted()
        t, x = self._validate_points(X)
        return forward_batch(self.rho_params_, self.config_.rho_network, t, x)

    def predict(self, X) -> np.ndarray:
        """Both fields at the given points, as columns [rho, phi]."""
        return np.column_stack([self.predict_rho(X), self.predict_phi(X)])

    def score(self, X=None, y=None) -> float:
        """Negative mean relative L2 error against the exact solution on a
        uniform sample of the domain (problems without an exact solution
        cannot be scored)."""
        self._check_fitted()
        problem = self.problem_
        if problem.exact is None:
            raise UsageError(f"problem {problem.name!r} has no exact solution to score against")
        if X is None:
            rng = np.random.Generator(np.random.Philox(self.seed + 1))
            tt = rng.uniform(0.0, problem.T, size=2048)
            xx = rng.uniform(problem.omega_lo, problem.omega_hi, size=(2048, problem.d))
        else:
            tt, xx = self._validate_points(X)
        phi_exact, rho_exact = problem.exact
        pred_phi = forward_batch(self.phi_params_, self.config_.phi_network, tt, xx)
        pred_rho = forward_batch(self.rho_params_, self.config_.rho_network, tt, xx)
        err_phi = np.linalg.norm(pred_phi - phi_exact(tt, xx)) / np.linalg.norm(phi_exact(tt, xx))
        err_rho = np.linalg.norm(pred_rho - rho_exact(tt, xx)) / np.linalg.norm(rho_exact(tt, xx))
        return -0.5 * (err_phi + err_rho)
