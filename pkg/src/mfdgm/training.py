"""Optimizers and the two training loops.

The alternating loop performs, per iteration, a backward-equation step
(sample, evaluate the HJB loss, update both networks from its gradients)
followed by a forward-equation step on fresh samples with the already
updated weights.  The summed-loss baseline adds both losses on one sample
pair and takes a single optimizer step per network per iteration.

Everything is deterministic given the configuration seed: network
initialization, the sampling stream, and the evaluation points all derive
from it.  A non-finite loss or gradient aborts the run, preserving the
metrics recorded so far.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericError, UsageError
from .jets import JetTape
from .networks import NetworkParams, NetworkSpec, forward_batch, init_network, parameter_count
from .problems import MFGProblem
from .residuals import (
    LossParts,
    fp_interior_cotangents,
    fp_residual_batch,
    hjb_interior_cotangents,
    hjb_residual_batch,
)
from .sampling import make_rng, rng_state, sample_interior, sample_spatial
from . import evaluation

OPTIMIZER_KINDS = ("adam", "sgd")
TRAIN_MODES = ("mfdgm", "dgm_mfg")


@dataclass(frozen=True)
class OptimizerSettings:
    kind: str = "adam"
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise UsageError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise UsageError("need lr > 0 and weight_decay >= 0")


@dataclass
class OptimizerState:
    settings: OptimizerSettings
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, settings: OptimizerSettings, n_params: int) -> "OptimizerState":
        return cls(settings=settings, m=np.zeros(n_params), v=np.zeros(n_params))


def _grad_values(grads):
    return grads.values if hasattr(grads, "values") else np.asarray(grads, dtype=np.float64)


def adam_step(state: OptimizerState, params: NetworkParams, grads):
    """One Adam update with weight decay added to the gradient before the
    moment updates; returns the new (state, params)."""
    g = _grad_values(grads)
    s = state.settings
    if g.shape != params.flat.shape or state.m.shape != g.shape:
        raise UsageError("gradient / parameter / moment shapes do not match")
    if s.weight_decay != 0.0:
        g = g + s.weight_decay * params.flat
    step = state.step_count + 1
    m = s.beta1 * state.m + (1.0 - s.beta1) * g
    v = s.beta2 * state.v + (1.0 - s.beta2) * g * g
    m_hat = m / (1.0 - s.beta1 ** step)
    v_hat = v / (1.0 - s.beta2 ** step)
    new_flat = params.flat - s.lr * m_hat / (np.sqrt(v_hat) + s.epsilon)
    new_state = OptimizerState(settings=s, m=m, v=v, step_count=step)
    return new_state, NetworkParams(flat=new_flat, count=params.count)


def sgd_step(state: OptimizerState, params: NetworkParams, grads):
    """Plain gradient descent with weight decay folded into the gradient."""
    g = _grad_values(grads)
    s = state.settings
    if g.shape != params.flat.shape:
        raise UsageError("gradient / parameter shapes do not match")
    new_flat = params.flat - s.lr * (g + s.weight_decay * params.flat)
    new_state = OptimizerState(settings=s, m=state.m, v=state.v,
                               step_count=state.step_count + 1)
    return new_state, NetworkParams(flat=new_flat, count=params.count)


def optimizer_step(state: OptimizerState, params: NetworkParams, grads):
    if state.settings.kind == "adam":
        return adam_step(state, params, grads)
    return sgd_step(state, params, grads)


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    iterations: int
    batch_interior: int
    batch_condition: int
    seed: int
    phi_network: NetworkSpec
    rho_network: NetworkSpec
    phi_opt: OptimizerSettings
    rho_opt: OptimizerSettings
    record_every: int = 100
    eval_grid_nt: int = 100
    eval_grid_nx: int = 100
    eval_mc_points: int = 10000

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise UsageError(f"unknown training mode {self.mode!r}")
        if self.iterations < 1 or self.batch_interior < 1 or self.batch_condition < 1:
            raise UsageError("iterations and batch sizes must be >= 1")
        if self.record_every < 1:
            raise UsageError("record_every must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    hjb_total: float
    hjb_residual: float
    hjb_condition: float
    fp_total: float
    fp_residual: float
    fp_condition: float
    rel_err_rho: float
    rel_err_phi: float
    wall_time: float


@dataclass
class TrainResult:
    phi_params: NetworkParams
    rho_params: NetworkParams
    metrics: list
    status: str  # "completed" | "aborted"
    abort_iteration: Optional[int]
    phi_opt: OptimizerState
    rho_opt: OptimizerState
    rng_snapshot: dict
    iterations_done: int


def derive_seeds(seed: int):
    """Child seeds for (phi init, rho init, sampling, evaluation points)."""
    words = np.random.SeedSequence(seed).generate_state(4)
    return tuple(int(w) for w in words)


# --- loss + gradient assembly -------------------------------------------------


def hjb_loss_and_grads(problem, phi_params, phi_spec, rho_params, rho_spec,
                       interior, condition):
    b = len(interior)
    s = len(condition)
    phi_tape = JetTape.forward(phi_params, phi_spec, interior.times, interior.points)
    # one value-only tape covers the density at both the interior points and
    # the terminal-condition points
    t_all = np.concatenate([interior.times, np.full(s, problem.T)])
    x_all = np.concatenate([interior.points, condition.points])
    rho_tape = JetTape.forward(rho_params, rho_spec, t_all, x_all,
                               want_dt=False, want_grad=False, want_hess=False)
    rho_all = rho_tape.jets.value
    rho_value, rho_term = rho_all[:b], rho_all[b:]

    phi_jets = phi_tape.jets
    r = hjb_residual_batch(problem, phi_jets, rho_value, interior.times, interior.points)
    residual = float(np.mean(r * r))
    r_bar = (2.0 / b) * r
    phi_cots, rho_value_bar = hjb_interior_cotangents(
        problem, interior.points, phi_jets, rho_value, r_bar)
    g_phi = phi_tape.backward(**phi_cots)

    t_term = np.full(s, problem.T)
    phi_t_tape = JetTape.forward(phi_params, phi_spec, t_term, condition.points,
                                 want_dt=False, want_grad=False, want_hess=False)
    mismatch = phi_t_tape.jets.value - problem.g(condition.points, rho_term)
    cond = float(np.mean(mismatch * mismatch))
    m_bar = (2.0 / s) * mismatch
    g_phi += phi_t_tape.backward(value_bar=m_bar)
    g_rho = rho_tape.backward(value_bar=np.concatenate([
        rho_value_bar, -m_bar * problem.g_rho(condition.points, rho_term)]))
    return LossParts(residual + cond, residual, cond), g_phi, g_rho


def fp_loss_and_grads(problem, phi_params, phi_spec, rho_params, rho_spec,
                      interior, condition):
    b = len(interior)
    s = len(condition)
    phi_tape = JetTape.forward(phi_params, phi_spec, interior.times, interior.points,
                               want_dt=False, want_mixed=problem.pp_mixed)
    rho_tape = JetTape.forward(rho_params, rho_spec, interior.times, interior.points)
    phi_jets = phi_tape.jets
    rho_jets = rho_tape.jets
    r = fp_residual_batch(problem, rho_jets, phi_jets, interior.times, interior.points)
    residual = float(np.mean(r * r))
    r_bar = (2.0 / b) * r
    rho_cots, phi_cots = fp_interior_cotangents(
        problem, interior.points, rho_jets, phi_jets, r_bar)
    g_rho = rho_tape.backward(**rho_cots)
    g_phi = phi_tape.backward(**phi_cots)

    t_init = np.zeros(s)
    rho_0_tape = JetTape.forward(rho_params, rho_spec, t_init, condition.points,
                                 want_dt=False, want_grad=False, want_hess=False)
    mismatch = rho_0_tape.jets.value - problem.rho0(condition.points)
    cond = float(np.mean(mismatch * mismatch))
    g_rho += rho_0_tape.backward(value_bar=(2.0 / s) * mismatch)
    return LossParts(residual + cond, residual, cond), g_phi, g_rho


# --- relative-error evaluators -------------------------------------------------


def make_error_evaluator(problem: MFGProblem, config: TrainConfig):
    """Returns a callable (phi_params, rho_params) -> (rel_rho, rel_phi),
    or None when the problem has no exact solution.  One spatial dimension
    uses the uniform evaluation grid; higher dimensions use a fixed set of
    Monte-Carlo points drawn once from the evaluation stream."""
    if problem.exact is None:
        return None
    phi_exact, rho_exact = problem.exact
    _, _, _, eval_seed = derive_seeds(config.seed)
    if problem.d == 1:
        t_axis = np.linspace(0.0, problem.T, config.eval_grid_nt)
        x_axis = np.linspace(problem.omega_lo[0], problem.omega_hi[0], config.eval_grid_nx)
        exact_phi = evaluation.exact_on_grid(phi_exact, t_axis, x_axis)
        exact_rho = evaluation.exact_on_grid(rho_exact, t_axis, x_axis)

        def evaluate(phi_params, rho_params):
            pred_phi = evaluation.evaluate_network_grid(
                phi_params, config.phi_network, t_axis, x_axis)
            pred_rho = evaluation.evaluate_network_grid(
                rho_params, config.rho_network, t_axis, x_axis)
            return (evaluation.relative_error(pred_rho, exact_rho),
                    evaluation.relative_error(pred_phi, exact_phi))

        return evaluate

    rng = make_rng(eval_seed)
    tt = rng.uniform(0.0, problem.T, size=config.eval_mc_points)
    xx = rng.uniform(problem.omega_lo, problem.omega_hi,
                     size=(config.eval_mc_points, problem.d))
    exact_phi_vals = np.asarray(phi_exact(tt, xx), dtype=np.float64)
    exact_rho_vals = np.asarray(rho_exact(tt, xx), dtype=np.float64)

    def evaluate(phi_params, rho_params):
        pred_phi = forward_batch(phi_params, config.phi_network, tt, xx)
        pred_rho = forward_batch(rho_params, config.rho_network, tt, xx)
        return (evaluation.relative_error_values(pred_rho, exact_rho_vals),
                evaluation.relative_error_values(pred_phi, exact_phi_vals))

    return evaluate


# --- training loops -------------------------------------------------------------


@dataclass
class TrainerState:
    """Everything needed to continue a run bit-exactly."""

    phi_params: NetworkParams
    rho_params: NetworkParams
    phi_opt: OptimizerState
    rho_opt: OptimizerState
    rng: np.random.Generator
    iteration: int = 0
    metrics: list = field(default_factory=list)


def fresh_state(problem: MFGProblem, config: TrainConfig) -> TrainerState:
    phi_seed, rho_seed, sample_seed, _ = derive_seeds(config.seed)
    return TrainerState(
        phi_params=init_network(config.phi_network, phi_seed),
        rho_params=init_network(config.rho_network, rho_seed),
        phi_opt=OptimizerState.fresh(config.phi_opt, parameter_count(config.phi_network)),
        rho_opt=OptimizerState.fresh(config.rho_opt, parameter_count(config.rho_network)),
        rng=make_rng(sample_seed),
    )


def _record(state: TrainerState, n, hjb_parts, fp_parts, evaluator, t_start):
    rel_rho = rel_phi = float("nan")
    if evaluator is not None:
        rel_rho, rel_phi = evaluator(state.phi_params, state.rho_params)
    state.metrics.append(MetricsRecord(
        iteration=n + 1,
        hjb_total=hjb_parts.total, hjb_residual=hjb_parts.residual,
        hjb_condition=hjb_parts.condition,
        fp_total=fp_parts.total, fp_residual=fp_parts.residual,
        fp_condition=fp_parts.condition,
        rel_err_rho=rel_rho, rel_err_phi=rel_phi,
        wall_time=time.perf_counter() - t_start,
    ))


def _result(state: TrainerState, status, abort_iteration):
    return TrainResult(
        phi_params=state.phi_params, rho_params=state.rho_params,
        metrics=state.metrics, status=status, abort_iteration=abort_iteration,
        phi_opt=state.phi_opt, rho_opt=state.rho_opt,
        rng_snapshot=rng_state(state.rng), iterations_done=state.iteration,
    )


def _should_record(n, config):
    at_cadence = (n + 1) % config.record_every == 0
    at_end = (n + 1) == config.iterations and config.iterations % config.record_every != 0
    return at_cadence or at_end


def _run_loop(problem, config, state, step_fn, on_record=None):
    evaluator = make_error_evaluator(problem, config)
    t_start = time.perf_counter()
    for n in range(state.iteration, config.iterations):
        try:
            hjb_parts, fp_parts = step_fn(n, state)
        except NumericError as err:
            err.iteration = n
            state.iteration = n
            return _result(state, "aborted", n)
        if not (np.isfinite(hjb_parts.total) and np.isfinite(fp_parts.total)):
            state.iteration = n
            return _result(state, "aborted", n)
        state.iteration = n + 1
        if _should_record(n, config):
            _record(state, n, hjb_parts, fp_parts, evaluator, t_start)
            if on_record is not None:
                on_record(state)
    return _result(state, "completed", None)


def train_mfdgm(problem: MFGProblem, config: TrainConfig,
                state: Optional[TrainerState] = None, on_record=None) -> TrainResult:
    """Alternating training: a backward-equation update of both networks,
    then a forward-equation update with the new weights, every iteration."""
    if config.mode != "mfdgm":
        raise UsageError("config.mode must be 'mfdgm' for train_mfdgm")
    if state is None:
        state = fresh_state(problem, config)

    def step(n, st):
        interior = sample_interior(st.rng, problem, config.batch_interior)
        condition = sample_spatial(st.rng, problem, config.batch_condition)
        hjb_parts, g_phi, g_rho = hjb_loss_and_grads(
            problem, st.phi_params, config.phi_network,
            st.rho_params, config.rho_network, interior, condition)
        if not np.isfinite(hjb_parts.total):
            return hjb_parts, LossParts(np.nan, np.nan, np.nan)
        st.phi_opt, st.phi_params = optimizer_step(st.phi_opt, st.phi_params, g_phi)
        st.rho_opt, st.rho_params = optimizer_step(st.rho_opt, st.rho_params, g_rho)

        interior = sample_interior(st.rng, problem, config.batch_interior)
        condition = sample_spatial(st.rng, problem, config.batch_condition)
        fp_parts, g_phi, g_rho = fp_loss_and_grads(
            problem, st.phi_params, config.phi_network,
            st.rho_params, config.rho_network, interior, condition)
        if not np.isfinite(fp_parts.total):
            return hjb_parts, fp_parts
        st.phi_opt, st.phi_params = optimizer_step(st.phi_opt, st.phi_params, g_phi)
        st.rho_opt, st.rho_params = optimizer_step(st.rho_opt, st.rho_params, g_rho)
        return hjb_parts, fp_parts

    return _run_loop(problem, config, state, step, on_record)


def train_dgm_mfg(problem: MFGProblem, config: TrainConfig,
                  state: Optional[TrainerState] = None, on_record=None) -> TrainResult:
    """Summed-loss baseline: one sample pair, one combined loss, one
    optimizer step per network per iteration."""
    if config.mode != "dgm_mfg":
        raise UsageError("config.mode must be 'dgm_mfg' for train_dgm_mfg")
    if state is None:
        state = fresh_state(problem, config)

    def step(n, st):
        interior = sample_interior(st.rng, problem, config.batch_interior)
        condition = sample_spatial(st.rng, problem, config.batch_condition)
        hjb_parts, g_phi_h, g_rho_h = hjb_loss_and_grads(
            problem, st.phi_params, config.phi_network,
            st.rho_params, config.rho_network, interior, condition)
        fp_parts, g_phi_f, g_rho_f = fp_loss_and_grads(
            problem, st.phi_params, config.phi_network,
            st.rho_params, config.rho_network, interior, condition)
        if not (np.isfinite(hjb_parts.total) and np.isfinite(fp_parts.total)):
            return hjb_parts, fp_parts
        st.phi_opt, st.phi_params = optimizer_step(st.phi_opt, st.phi_params, g_phi_h + g_phi_f)
        st.rho_opt, st.rho_params = optimizer_step(st.rho_opt, st.rho_params, g_rho_h + g_rho_f)
        return hjb_parts, fp_parts

    return _run_loop(problem, config, state, step, on_record)


def train(problem: MFGProblem, config: TrainConfig,
          state: Optional[TrainerState] = None, on_record=None) -> TrainResult:
    if config.mode == "mfdgm":
        return train_mfdgm(problem, config, state, on_record)
    return train_dgm_mfg(problem, config, state, on_record)
