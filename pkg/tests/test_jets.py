import math

import numpy as np
import pytest

from conftest import rel_err
from mfdgm.errors import DomainError, ShapeError, UsageError
from mfdgm.jets import (
    JetCotangents,
    JetTape,
    eval_jet,
    eval_jet_batch,
    finite_diff_probe,
    loss_param_gradient,
)
from mfdgm.networks import NetworkParams, NetworkSpec, forward_batch, init_network

ONE_UNIT_TANH = NetworkSpec(input_dim=2, hidden_width=1, hidden_layers=1, activation="tanh")
# layout: [w_t, w_x, hidden bias, output weight, output bias]
ONE_UNIT_PARAMS = NetworkParams.from_flat([0.0, 1.0, 0.0, 1.0, 0.0])


def test_single_tanh_unit_jet_at_origin():
    jet = eval_jet(ONE_UNIT_PARAMS, ONE_UNIT_TANH, 0.0, [0.0])
    assert jet.value == 0.0
    assert jet.dt == 0.0
    assert np.allclose(jet.grad_x, [1.0], atol=1e-15)
    assert np.allclose(jet.diag_hess, [0.0], atol=1e-15)  # tanh''(0) = 0


def test_constant_network_jet_is_flat():
    spec = NetworkSpec(input_dim=3, hidden_width=4, hidden_layers=2, skip_weight=0.5)
    from mfdgm.networks import param_layout
    flat = init_network(spec, 0).flat.copy()
    _, w_sl, b_idx = param_layout(spec)
    flat[w_sl] = 0.0
    flat[b_idx] = -2.5
    params = NetworkParams.from_flat(flat)
    jet = eval_jet(params, spec, 0.4, [1.0, -1.0], want_mixed=True)
    assert jet.value == -2.5
    assert jet.dt == 0.0
    assert np.all(jet.grad_x == 0.0)
    assert np.all(jet.diag_hess == 0.0)
    assert np.all(jet.mixed_hess == 0.0)


def _staged_fd_check(spec, params, t, x, h=1e-5, want_mixed=False):
    """First derivatives against value differences, second derivatives
    against differences of exact first derivatives."""
    jets = eval_jet_batch(params, spec, t, x, want_mixed=want_mixed)
    value = lambda tt, xx: forward_batch(params, spec, tt, xx)
    grad = lambda tt, xx: eval_jet_batch(params, spec, tt, xx).grad_x
    worst = rel_err(jets.dt, (value(t + h, x) - value(t - h, x)) / (2 * h))
    for i in range(spec.spatial_dim):
        xp, xm = x.copy(), x.copy()
        xp[:, i] += h
        xm[:, i] -= h
        worst = max(worst, rel_err(jets.grad_x[:, i], (value(t, xp) - value(t, xm)) / (2 * h)))
        gp, gm = grad(t, xp), grad(t, xm)
        worst = max(worst, rel_err(jets.diag_hess[:, i], (gp[:, i] - gm[:, i]) / (2 * h)))
        if want_mixed:
            worst = max(worst, rel_err(jets.mixed_hess[:, :, i], (gp - gm) / (2 * h)))
    return worst


def test_random_tanh_net_matches_finite_differences_d2():
    spec = NetworkSpec(input_dim=3, hidden_width=50, hidden_layers=1, activation="tanh")
    params = init_network(spec, 11)
    rng = np.random.default_rng(2)
    t = rng.uniform(0, 1, 30)
    x = rng.uniform(-2, 2, (30, 2))
    assert _staged_fd_check(spec, params, t, x, want_mixed=True) <= 1e-6


@pytest.mark.parametrize("activation", ["tanh", "softplus", "relu", "softmax"])
@pytest.mark.parametrize("d,layers", [(1, 2), (2, 1), (10, 3)])
def test_jets_match_finite_differences(activation, d, layers):
    spec = NetworkSpec(input_dim=1 + d, hidden_width=12, hidden_layers=layers,
                       activation=activation, skip_weight=0.5)
    params = init_network(spec, 3)
    rng = np.random.default_rng(4)
    t = rng.uniform(0, 1, 20)
    x = rng.uniform(-2, 2, (20, d))
    assert _staged_fd_check(spec, params, t, x, want_mixed=(d <= 2)) <= 1e-6


def test_jet_evaluation_is_pure():
    spec = NetworkSpec(input_dim=3, hidden_width=9, hidden_layers=2,
                       activation="softplus", skip_weight=0.5)
    params = init_network(spec, 8)
    rng = np.random.default_rng(5)
    t = rng.uniform(0, 1, 7)
    x = rng.uniform(-2, 2, (7, 2))
    a = eval_jet_batch(params, spec, t, x, want_mixed=True)
    b = eval_jet_batch(params, spec, t, x, want_mixed=True)
    for name in ("value", "dt", "grad_x", "diag_hess", "mixed_hess"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


@pytest.mark.parametrize("activation", ["tanh", "softmax"])
def test_laplacian_equals_trace_of_mixed_hessian(activation):
    spec = NetworkSpec(input_dim=4, hidden_width=10, hidden_layers=2,
                       activation=activation, skip_weight=0.5)
    params = init_network(spec, 9)
    rng = np.random.default_rng(6)
    t = rng.uniform(0, 1, 12)
    x = rng.uniform(-2, 2, (12, 3))
    jets = eval_jet_batch(params, spec, t, x, want_mixed=True)
    trace = np.trace(jets.mixed_hess, axis1=1, axis2=2)
    assert np.max(np.abs(jets.laplacian() - trace)) <= 1e-12
    # the diagonal of the mixed Hessian is the diagonal-second-derivative
    # array itself
    diag = np.einsum("bii->bi", jets.mixed_hess)
    assert np.array_equal(diag, jets.diag_hess)


def test_loss_gradient_output_weight_is_tanh_of_preactivation():
    t = np.array([0.0])
    x = np.array([[0.3]])
    grad = loss_param_gradient(ONE_UNIT_PARAMS, ONE_UNIT_TANH, t, x,
                               lambda jets: float(jets.value[0]))
    assert grad.values[3] == pytest.approx(math.tanh(0.3), abs=1e-9)
    assert grad.values[3] == pytest.approx(0.2913126, abs=1e-7)


def test_loss_gradient_zero_at_stationary_point():
    # params already satisfy value == target, so d mean((value-target)^2) = 0
    spec = NetworkSpec(input_dim=2, hidden_width=3, hidden_layers=1, activation="tanh")
    params = init_network(spec, 1)
    t = np.array([0.2, 0.8])
    x = np.array([[0.5], [-0.5]])
    target = forward_batch(params, spec, t, x)

    def loss(jets):
        return float(np.mean((jets.value - target) ** 2))

    def cots(jets):
        return JetCotangents(value=2.0 * (jets.value - target) / len(target))

    grad = loss_param_gradient(params, spec, t, x, loss, cotangent_fn=cots)
    assert np.all(grad.values == 0.0)


def test_loss_gradient_matches_directional_fd_for_squared_laplacian():
    spec = NetworkSpec(input_dim=3, hidden_width=14, hidden_layers=2,
                       activation="softplus", skip_weight=0.5)
    params = init_network(spec, 13)
    rng = np.random.default_rng(14)
    t = rng.uniform(0, 1, 8)
    x = rng.uniform(-2, 2, (8, 2))

    def loss_of(flat):
        jets = eval_jet_batch(NetworkParams.from_flat(flat), spec, t, x)
        return float(np.mean(jets.laplacian() ** 2))

    grad = loss_param_gradient(params, spec, t, x,
                               lambda jets: float(np.mean(jets.laplacian() ** 2)))
    h = 1e-4
    for k in range(10):
        v = rng.normal(size=params.count)
        v /= np.linalg.norm(v)
        fd = (loss_of(params.flat + h * v) - loss_of(params.flat - h * v)) / (2 * h)
        assert rel_err(fd, grad.values @ v) <= 1e-5


def test_loss_gradient_rejects_empty_batch():
    with pytest.raises(UsageError):
        loss_param_gradient(ONE_UNIT_PARAMS, ONE_UNIT_TANH, np.empty(0),
                            np.empty((0, 1)), lambda jets: 0.0)


def test_eval_jet_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        eval_jet(ONE_UNIT_PARAMS, ONE_UNIT_TANH, 0.0, [0.0, 1.0])
    with pytest.raises(DomainError):
        eval_jet(ONE_UNIT_PARAMS, ONE_UNIT_TANH, float("nan"), [0.0])
    bad = NetworkParams.from_flat(np.zeros(7))
    with pytest.raises(ShapeError):
        eval_jet(bad, ONE_UNIT_TANH, 0.0, [0.0])


def test_finite_diff_probe_quadratic():
    out = finite_diff_probe(lambda p: float(p[0] ** 2), np.array([3.0]), 1e-5)
    assert out[0] == pytest.approx(6.0, abs=1e-9)


def test_finite_diff_probe_constant_and_softplus():
    out = finite_diff_probe(lambda p: 4.2, np.array([0.3, -0.7]), 1e-5)
    assert np.array_equal(out, [0.0, 0.0])
    sp = finite_diff_probe(lambda p: float(np.logaddexp(0.0, p[0])), np.array([0.0]), 1e-5)
    assert sp[0] == pytest.approx(0.5, abs=1e-10)


def test_finite_diff_probe_rejects_nonpositive_step():
    with pytest.raises(UsageError):
        finite_diff_probe(lambda p: 0.0, np.array([0.0]), 0.0)


def test_tape_backward_can_run_twice():
    spec = NetworkSpec(input_dim=2, hidden_width=5, hidden_layers=2,
                       activation="tanh", skip_weight=0.5)
    params = init_network(spec, 21)
    t = np.array([0.1, 0.9])
    x = np.array([[0.2], [-0.4]])
    tape = JetTape.forward(params, spec, t, x)
    vb = np.array([1.0, -2.0])
    g1 = tape.backward(value_bar=vb)
    g2 = tape.backward(value_bar=vb)
    assert np.array_equal(g1, g2)
