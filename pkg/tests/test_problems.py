import numpy as np
import pytest

from mfdgm.errors import DomainError, UsageError
from mfdgm.problems import (
    check_problem_consistency,
    make_analytic_gaussian,
    make_traffic_lwr,
)
from mfdgm.residuals import fp_residual_batch, hjb_residual_batch


def test_alpha_is_one_for_reference_parameters():
    prob = make_analytic_gaussian(1, nu=1.0, beta=1.0, gamma=0.0)
    # alpha enters the terminal cost: g(x) = alpha ||x||^2 / 2 - nu d alpha
    x = np.array([[2.0]])
    assert prob.g(x, np.array([0.0]))[0] == pytest.approx(0.5 * 4.0 - 1.0, abs=1e-14)


def test_exact_value_function_at_reference_point():
    prob = make_analytic_gaussian(1, 1.0, 1.0, 0.0)
    phi_exact, _ = prob.exact
    val = phi_exact(np.array([0.5]), np.array([[1.0]]))
    assert val[0] == pytest.approx(0.0, abs=1e-15)


def test_exact_density_at_origin_d2():
    prob = make_analytic_gaussian(2, 1.0, 1.0, 0.0)
    _, rho_exact = prob.exact
    val = rho_exact(np.array([0.37]), np.zeros((1, 2)))
    assert val[0] == pytest.approx(1.0 / (2.0 * np.pi), abs=1e-12)
    assert val[0] == pytest.approx(0.1591549, abs=1e-7)


def test_traffic_hamiltonian_hand_values():
    prob = make_traffic_lwr(0.0)
    x = np.zeros((1, 1))
    assert prob.H(x, np.array([0.5]), np.array([[1.0]]))[0] == pytest.approx(0.0, abs=1e-15)
    assert prob.H(x, np.array([0.123]), np.array([[0.0]]))[0] == 0.0
    assert prob.dH_dp(x, np.array([1.0]), np.array([[1.0]]))[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_traffic_initial_density_default_follows_config_literally():
    prob = make_traffic_lwr(0.0)
    x = np.array([[0.5]])
    # offset 0.2 with amplitude -0.6 dips to -0.4 at the bump centre
    assert prob.rho0(x)[0] == pytest.approx(-0.4, abs=1e-12)
    flipped = make_traffic_lwr(0.0, rho0_amplitude=0.6)
    assert flipped.rho0(x)[0] == pytest.approx(0.8, abs=1e-12)


def test_consistency_check_passes_for_builtins():
    for prob in (make_traffic_lwr(0.5), make_analytic_gaussian(2, 1.0, 1.0, 0.0),
                 make_analytic_gaussian(1, 1.0, 1.0, 0.5)):
        report = check_problem_consistency(prob, n_probes=100, seed=0)
        assert report.passed, report.checks
        assert max(report.checks.values()) <= 1e-6


def test_consistency_check_catches_corrupted_callback():
    prob = make_traffic_lwr(0.0)
    good_dh_dp = prob.dH_dp
    prob.dH_dp = lambda x, rho, p: good_dh_dp(x, rho, p) + 1.0
    report = check_problem_consistency(prob, n_probes=50, seed=1)
    assert not report.passed
    name, err = report.worst()
    assert err > 1e-5


def test_exact_pair_annihilates_both_residuals():
    for d in (1, 2):
        prob = make_analytic_gaussian(d, 1.0, 1.0, 0.0)
        phi_f, rho_f = prob.exact_fields
        rng = np.random.Generator(np.random.Philox(3))
        t = rng.uniform(0, 1, 2000)
        x = rng.uniform(-2, 2, (2000, d))
        phi = phi_f.jet_batch(t, x)
        rho = rho_f.jet_batch(t, x)
        assert np.max(np.abs(hjb_residual_batch(prob, phi, rho.value, t, x))) <= 1e-9
        assert np.max(np.abs(fp_residual_batch(prob, rho, phi, t, x))) <= 1e-9


def test_initial_density_mass_on_box_d1():
    # Monte-Carlo integral of rho0 over [-2, 2] vs the Gaussian mass of the
    # box, within 3 standard errors
    prob = make_analytic_gaussian(1, 1.0, 1.0, 0.0)
    rng = np.random.Generator(np.random.Philox(4))
    n = 200000
    x = rng.uniform(-2, 2, (n, 1))
    vals = prob.rho0(x) * 4.0  # box volume
    estimate = float(np.mean(vals))
    stderr = float(np.std(vals) / np.sqrt(n))
    assert abs(estimate - 0.9545) <= 3 * stderr + 1e-4


def test_pp_hessian_constant_in_p():
    for prob in (make_analytic_gaussian(3, 1.0, 1.0, 0.0), make_traffic_lwr(0.3)):
        rng = np.random.default_rng(5)
        x = rng.uniform(prob.omega_lo, prob.omega_hi, (10, prob.d))
        rho = rng.uniform(0.2, 1.0, 10)
        a = prob.dH_dpp(x, rho, rng.normal(size=(10, prob.d)))
        b = prob.dH_dpp(x, rho, rng.normal(size=(10, prob.d)))
        assert np.array_equal(np.asarray(a), np.asarray(b))


def test_log_coupling_rejects_nonpositive_density():
    prob = make_analytic_gaussian(1, 1.0, 1.0, 0.5)
    x = np.zeros((2, 1))
    p = np.zeros((2, 1))
    with pytest.raises(DomainError) as err:
        prob.H(x, np.array([0.5, -0.1]), p)
    assert err.value.sample_index == 1


def test_constructor_validation():
    with pytest.raises(UsageError):
        make_analytic_gaussian(1, nu=0.0, beta=1.0, gamma=0.0)
    with pytest.raises(UsageError):
        make_traffic_lwr(-0.1)
    with pytest.raises(UsageError):
        check_problem_consistency(make_traffic_lwr(0.0), n_probes=0)


def test_finite_difference_fallbacks_match_analytic_couplings():
    # drop the analytic couplings and let the fallbacks reproduce them
    prob = make_traffic_lwr(0.5)
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (20, 1))
    rho = rng.uniform(0.2, 1.0, 20)
    p = rng.normal(size=(20, 1))
    exact = prob.H_rho(x, rho, p)
    prob.dH_drho = None
    fd = prob.H_rho(x, rho, p)
    assert np.max(np.abs(exact - fd)) <= 1e-8
    exact_rrp = prob.H_rrp(x, rho, p)
    prob.dH_drho_drho_dp = None
    assert np.max(np.abs(prob.H_rrp(x, rho, p) - exact_rrp)) <= 1e-8
    exact_rpp = prob.H_rpp(x, rho, p)
    prob.dH_drho_dpp = None
    assert np.max(np.abs(prob.H_rpp(x, rho, p) - exact_rpp)) <= 1e-8
    hess = rng.normal(size=(20, 1))
    exact_ppp = prob.H_ppp_contract(x, rho, p, hess, mixed=False)
    prob.dH_dppp_contract = None
    assert np.max(np.abs(prob.H_ppp_contract(x, rho, p, hess, mixed=False) - exact_ppp)) <= 1e-8
