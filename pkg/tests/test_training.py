import dataclasses

import numpy as np
import pytest

from conftest import rel_err
from mfdgm.errors import UsageError
from mfdgm.networks import NetworkParams, NetworkSpec, init_network
from mfdgm.problems import MFGProblem, make_analytic_gaussian, make_traffic_lwr
from mfdgm.sampling import make_rng, sample_interior, sample_spatial
from mfdgm.training import (
    OptimizerSettings,
    OptimizerState,
    TrainConfig,
    adam_step,
    fp_loss_and_grads,
    hjb_loss_and_grads,
    optimizer_step,
    sgd_step,
    train,
    train_dgm_mfg,
    train_mfdgm,
)


def scalar_state(kind, lr, wd):
    return OptimizerState.fresh(OptimizerSettings(kind=kind, lr=lr, weight_decay=wd), 1)


def test_adam_first_step_closed_form():
    state = scalar_state("adam", 1e-4, 0.0)
    params = NetworkParams.from_flat([0.0])
    new_state, new_params = adam_step(state, params, np.array([2.0]))
    # m_hat = g, v_hat = g^2: update = -lr * g / (|g| + eps)
    expected = -1e-4 * 2.0 / (2.0 + 1e-8)
    assert new_params.flat[0] == pytest.approx(expected, rel=1e-12)
    assert new_state.step_count == 1


def test_adam_zero_gradient_zero_decay_is_fixed_point():
    state = scalar_state("adam", 1e-3, 0.0)
    params = NetworkParams.from_flat([1.234])
    _, new_params = adam_step(state, params, np.array([0.0]))
    assert new_params.flat[0] == 1.234


def test_adam_weight_decay_acts_like_gradient():
    state = scalar_state("adam", 1e-4, 1e-3)
    params = NetworkParams.from_flat([1.0])
    _, new_params = adam_step(state, params, np.array([0.0]))
    # g' = wd * theta = 1e-3; first-step update = -lr * g'/(|g'| + eps)
    expected = 1.0 - 1e-4 * 1e-3 / (1e-3 + 1e-8)
    assert new_params.flat[0] == pytest.approx(expected, rel=1e-12)


def test_sgd_step_closed_forms():
    state = scalar_state("sgd", 1e-3, 0.0)
    _, p = sgd_step(state, NetworkParams.from_flat([1.0]), np.array([0.5]))
    assert p.flat[0] == pytest.approx(0.9995, abs=1e-15)
    _, p = sgd_step(state, NetworkParams.from_flat([0.25]), np.array([0.0]))
    assert p.flat[0] == 0.25
    state = scalar_state("sgd", 1e-3, 1e-3)
    _, p = sgd_step(state, NetworkParams.from_flat([2.0]), np.array([0.0]))
    assert p.flat[0] == pytest.approx(2.0 - 1e-3 * 2e-3, rel=1e-14)


def test_adam_update_is_elementwise_permutation_equivariant():
    rng = np.random.default_rng(0)
    n = 17
    g = rng.normal(size=n)
    theta = rng.normal(size=n)
    settings = OptimizerSettings(kind="adam", lr=1e-3, weight_decay=1e-3)
    state = OptimizerState.fresh(settings, n)
    _, updated = adam_step(state, NetworkParams.from_flat(theta), g)
    perm = rng.permutation(n)
    _, updated_perm = adam_step(OptimizerState.fresh(settings, n),
                                NetworkParams.from_flat(theta[perm]), g[perm])
    assert np.array_equal(updated.flat[perm], updated_perm.flat)


def test_optimizer_shape_mismatch_rejected():
    state = scalar_state("adam", 1e-3, 0.0)
    with pytest.raises(UsageError):
        adam_step(state, NetworkParams.from_flat([0.0, 1.0]), np.array([1.0, 2.0]))


def tiny_config(mode="mfdgm", iterations=3, seed=0, optimizer="adam", **kw):
    spec = NetworkSpec(input_dim=2, hidden_width=8, hidden_layers=2,
                       activation="softplus", skip_weight=0.5)
    rho_spec = dataclasses.replace(spec, activation="tanh")
    opts = dict(
        mode=mode, iterations=iterations, batch_interior=16, batch_condition=8,
        seed=seed, phi_network=spec, rho_network=rho_spec,
        phi_opt=OptimizerSettings(optimizer, 1e-3, 1e-3),
        rho_opt=OptimizerSettings(optimizer, 1e-3, 1e-3),
        record_every=2, eval_grid_nt=8, eval_grid_nx=8)
    opts.update(kw)
    return TrainConfig(**opts)


def test_mfdgm_single_iteration_performs_two_updates_per_network(analytic_problem):
    result = train_mfdgm(analytic_problem, tiny_config(iterations=1))
    assert result.phi_opt.step_count == 2
    assert result.rho_opt.step_count == 2


def test_dgm_mfg_single_iteration_performs_one_update_per_network(analytic_problem):
    result = train_dgm_mfg(analytic_problem, tiny_config(mode="dgm_mfg",
                                                         iterations=1, optimizer="sgd"))
    assert result.phi_opt.step_count == 1
    assert result.rho_opt.step_count == 1


def test_training_is_bitwise_deterministic(analytic_problem):
    a = train_mfdgm(analytic_problem, tiny_config(iterations=4))
    b = train_mfdgm(analytic_problem, tiny_config(iterations=4))
    assert np.array_equal(a.phi_params.flat, b.phi_params.flat)
    assert np.array_equal(a.rho_params.flat, b.rho_params.flat)
    assert len(a.metrics) == len(b.metrics) == 2
    for ma, mb in zip(a.metrics, b.metrics):
        for field in ("iteration", "hjb_total", "hjb_residual", "hjb_condition",
                      "fp_total", "fp_residual", "fp_condition",
                      "rel_err_rho", "rel_err_phi"):
            assert getattr(ma, field) == getattr(mb, field), field


def test_mfdgm_iteration_replays_by_hand(analytic_problem):
    """The forward-equation step must see the weights already updated by
    the backward-equation step of the same iteration."""
    from mfdgm.training import derive_seeds, fresh_state
    config = tiny_config(iterations=1)
    result = train_mfdgm(analytic_problem, config)

    state = fresh_state(analytic_problem, config)
    rng = state.rng
    interior = sample_interior(rng, analytic_problem, config.batch_interior)
    condition = sample_spatial(rng, analytic_problem, config.batch_condition)
    _, g_phi, g_rho = hjb_loss_and_grads(
        analytic_problem, state.phi_params, config.phi_network,
        state.rho_params, config.rho_network, interior, condition)
    phi_opt, phi_params = optimizer_step(state.phi_opt, state.phi_params, g_phi)
    rho_opt, rho_params = optimizer_step(state.rho_opt, state.rho_params, g_rho)
    interior = sample_interior(rng, analytic_problem, config.batch_interior)
    condition = sample_spatial(rng, analytic_problem, config.batch_condition)
    _, g_phi, g_rho = fp_loss_and_grads(
        analytic_problem, phi_params, config.phi_network,
        rho_params, config.rho_network, interior, condition)
    _, phi_params = optimizer_step(phi_opt, phi_params, g_phi)
    _, rho_params = optimizer_step(rho_opt, rho_params, g_rho)

    assert np.array_equal(result.phi_params.flat, phi_params.flat)
    assert np.array_equal(result.rho_params.flat, rho_params.flat)


def test_metrics_series_length_formula(analytic_problem):
    result = train_mfdgm(analytic_problem, tiny_config(iterations=7, record_every=3))
    # records at 3, 6 and a final one at 7
    assert [m.iteration for m in result.metrics] == [3, 6, 7]
    result = train_mfdgm(analytic_problem, tiny_config(iterations=6, record_every=3))
    assert [m.iteration for m in result.metrics] == [3, 6]


def test_abort_on_non_finite_loss(analytic_problem):
    base = analytic_problem
    poisoned = MFGProblem(
        d=base.d, T=base.T, omega_lo=base.omega_lo, omega_hi=base.omega_hi,
        nu=base.nu,
        H=lambda x, rho, p: np.full(x.shape[0], np.nan),
        dH_dp=base.dH_dp, dH_drho_dp=base.dH_drho_dp, dH_dpp=base.dH_dpp,
        g=base.g, rho0=base.rho0, dH_drho=base.dH_drho, dg_drho=base.dg_drho)
    result = train_mfdgm(poisoned, tiny_config(iterations=5))
    assert result.status == "aborted"
    assert result.abort_iteration == 0
    assert result.metrics == []


def test_mode_mismatch_rejected(analytic_problem):
    with pytest.raises(UsageError):
        train_mfdgm(analytic_problem, tiny_config(mode="dgm_mfg", optimizer="sgd"))
    with pytest.raises(UsageError):
        train_dgm_mfg(analytic_problem, tiny_config(mode="mfdgm"))


def test_dgm_mfg_shares_one_batch_pair_per_iteration(analytic_problem):
    """One iteration of the summed-loss baseline consumes exactly one
    interior + one spatial draw, verified by replaying the stream."""
    from mfdgm.training import fresh_state
    config = tiny_config(mode="dgm_mfg", iterations=1, optimizer="sgd")
    result = train_dgm_mfg(analytic_problem, config)

    state = fresh_state(analytic_problem, config)
    rng = state.rng
    interior = sample_interior(rng, analytic_problem, config.batch_interior)
    condition = sample_spatial(rng, analytic_problem, config.batch_condition)
    _, g_phi_h, g_rho_h = hjb_loss_and_grads(
        analytic_problem, state.phi_params, config.phi_network,
        state.rho_params, config.rho_network, interior, condition)
    _, g_phi_f, g_rho_f = fp_loss_and_grads(
        analytic_problem, state.phi_params, config.phi_network,
        state.rho_params, config.rho_network, interior, condition)
    _, phi_params = optimizer_step(state.phi_opt, state.phi_params, g_phi_h + g_phi_f)
    _, rho_params = optimizer_step(state.rho_opt, state.rho_params, g_rho_h + g_rho_f)
    assert np.array_equal(result.phi_params.flat, phi_params.flat)
    assert np.array_equal(result.rho_params.flat, rho_params.flat)


@pytest.mark.parametrize("problem_name,gamma", [("analytic", 0.0), ("analytic", 0.4),
                                                ("traffic", None)])
def test_loss_gradients_match_directional_fd(problem_name, gamma):
    if problem_name == "analytic":
        problem = make_analytic_gaussian(2, 1.0, 1.0, gamma)
        phi_spec = NetworkSpec(input_dim=3, hidden_width=10, hidden_layers=2,
                               activation="softplus", skip_weight=0.5)
        rho_spec = NetworkSpec(input_dim=3, hidden_width=9, hidden_layers=1,
                               activation="tanh")
    else:
        problem = make_traffic_lwr(0.5)
        phi_spec = NetworkSpec(input_dim=2, hidden_width=10, hidden_layers=1,
                               activation="softmax")
        rho_spec = NetworkSpec(input_dim=2, hidden_width=9, hidden_layers=1,
                               activation="relu")
    phi = init_network(phi_spec, 1)
    rho_flat = init_network(rho_spec, 2).flat.copy()
    rho_flat[-1] = 1.0  # keep the density positive for the log coupling
    rho = NetworkParams.from_flat(rho_flat)
    srng = make_rng(9)
    interior = sample_interior(srng, problem, 12)
    condition = sample_spatial(srng, problem, 6)
    rng = np.random.default_rng(10)
    h = 1e-5
    for fn in (hjb_loss_and_grads, fp_loss_and_grads):
        _, g_phi, g_rho = fn(problem, phi, phi_spec, rho, rho_spec, interior, condition)
        for which, params, grad in (("phi", phi, g_phi), ("rho", rho, g_rho)):
            for _ in range(5):
                v = rng.normal(size=params.count)
                v /= np.linalg.norm(v)

                def total(flat):
                    p2 = NetworkParams.from_flat(flat)
                    args = ((p2, phi_spec, rho, rho_spec) if which == "phi"
                            else (phi, phi_spec, p2, rho_spec))
                    return fn(problem, *args, interior, condition)[0].total

                fd = (total(params.flat + h * v) - total(params.flat - h * v)) / (2 * h)
                assert rel_err(fd, grad @ v) <= 1e-5


def test_mixed_pp_loss_gradients_match_fd():
    # non-diagonal dH_dpp engages the mixed-Hessian backward route
    a_mat = np.array([[1.0, 0.4], [0.4, 1.2]])
    problem = MFGProblem(
        d=2, T=1.0, omega_lo=[-1.0, -1.0], omega_hi=[1.0, 1.0], nu=0.1,
        H=lambda x, rho, p: 0.5 * np.einsum("bi,ij,bj->b", p, a_mat, p) + rho * p[:, 0],
        dH_dp=lambda x, rho, p: p @ a_mat + np.column_stack([rho, np.zeros_like(rho)]),
        dH_drho_dp=lambda x, rho, p: np.column_stack([np.ones_like(rho), np.zeros_like(rho)]),
        dH_dpp=lambda x, rho, p: np.broadcast_to(a_mat, (p.shape[0], 2, 2)),
        g=lambda x, rho_t: np.zeros(x.shape[0]),
        rho0=lambda x: np.ones(x.shape[0]),
        dH_drho=lambda x, rho, p: p[:, 0].copy(),
        dg_drho=lambda x, rho: np.zeros(x.shape[0]),
        pp_mixed=True,
    )
    phi_spec = NetworkSpec(input_dim=3, hidden_width=8, hidden_layers=2,
                           activation="tanh", skip_weight=0.5)
    rho_spec = NetworkSpec(input_dim=3, hidden_width=7, hidden_layers=1,
                           activation="softplus")
    phi = init_network(phi_spec, 3)
    rho = init_network(rho_spec, 4)
    srng = make_rng(11)
    interior = sample_interior(srng, problem, 10)
    condition = sample_spatial(srng, problem, 5)
    rng = np.random.default_rng(12)
    h = 1e-5
    _, g_phi, g_rho = fp_loss_and_grads(problem, phi, phi_spec, rho, rho_spec,
                                        interior, condition)
    for which, params, grad in (("phi", phi, g_phi), ("rho", rho, g_rho)):
        for _ in range(6):
            v = rng.normal(size=params.count)
            v /= np.linalg.norm(v)

            def total(flat):
                p2 = NetworkParams.from_flat(flat)
                args = ((p2, phi_spec, rho, rho_spec) if which == "phi"
                        else (phi, phi_spec, p2, rho_spec))
                return fp_loss_and_grads(problem, *args, interior, condition)[0].total

            fd = (total(params.flat + h * v) - total(params.flat - h * v)) / (2 * h)
            assert rel_err(fd, grad @ v) <= 1e-5


def test_train_dispatcher(analytic_problem):
    result = train(analytic_problem, tiny_config(iterations=2))
    assert result.status == "completed"
    assert result.iterations_done == 2
