"""Self-verification of the derivative engine and the problem callbacks.

Jets are checked against staged central differences: first derivatives
against differences of network values, second derivatives against
differences of (exact) first derivatives.  Parameter gradients are checked
along random directions.  Everything returns a report; nothing here
raises on a tolerance breach, so the command-line wrapper can exit with a
status code and the worst offender listed.
"""

from __future__ import annotations

import numpy as np

from .jets import JetTape, eval_jet_batch
from .networks import NetworkParams, NetworkSpec, forward_batch, init_network
from .problems import check_problem_consistency, make_analytic_gaussian, make_traffic_lwr

JET_TOLERANCE = 1e-6
GRAD_TOLERANCE = 1e-5
PROBLEM_TOLERANCE = 1e-5

# (spatial dim, hidden layers) pairs light enough to run in seconds while
# covering the single-layer fast path and the deep residual path
_CASES = ((1, 1), (2, 3), (5, 2))


def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def check_jets(activation: str, d: int, layers: int, seed: int = 0,
               n_points: int = 20, h: float = 1e-5) -> float:
    """Worst relative mismatch of any jet field against finite differences."""
    spec = NetworkSpec(input_dim=1 + d, hidden_width=16, hidden_layers=layers,
                       activation=activation, skip_weight=0.5)
    params = init_network(spec, seed)
    rng = np.random.Generator(np.random.Philox(seed + 1))
    t = rng.uniform(0.0, 1.0, n_points)
    x = rng.uniform(-2.0, 2.0, (n_points, d))
    want_mixed = d <= 3
    jets = eval_jet_batch(params, spec, t, x, want_mixed=want_mixed)

    value = lambda tt, xx: forward_batch(params, spec, tt, xx)
    grad = lambda tt, xx: eval_jet_batch(params, spec, tt, xx).grad_x
    worst = _rel(jets.dt, (value(t + h, x) - value(t - h, x)) / (2 * h))
    for i in range(d):
        xp, xm = x.copy(), x.copy()
        xp[:, i] += h
        xm[:, i] -= h
        worst = max(worst, _rel(jets.grad_x[:, i], (value(t, xp) - value(t, xm)) / (2 * h)))
        gp, gm = grad(t, xp), grad(t, xm)
        worst = max(worst, _rel(jets.diag_hess[:, i], (gp[:, i] - gm[:, i]) / (2 * h)))
        if want_mixed:
            worst = max(worst, _rel(jets.mixed_hess[:, :, i], (gp - gm) / (2 * h)))
    return worst


def check_param_gradient(activation: str, d: int, layers: int, seed: int = 0,
                         n_points: int = 8, n_dirs: int = 10, h: float = 1e-4) -> float:
    """Worst directional-derivative mismatch of the tape's backward pass
    for a loss touching value, time derivative, gradient and Laplacian."""
    spec = NetworkSpec(input_dim=1 + d, hidden_width=12, hidden_layers=layers,
                       activation=activation, skip_weight=0.5)
    params = init_network(spec, seed)
    rng = np.random.Generator(np.random.Philox(seed + 2))
    t = rng.uniform(0.0, 1.0, n_points)
    x = rng.uniform(-2.0, 2.0, (n_points, d))
    vb = rng.normal(size=n_points)
    tb = rng.normal(size=n_points)
    gb = rng.normal(size=(n_points, d))
    hb = rng.normal(size=(n_points, d))

    def loss_and_tape(flat):
        tape = JetTape.forward(NetworkParams.from_flat(flat), spec, t, x)
        j = tape.jets
        loss = (np.sum(vb * j.value) + np.sum(tb * j.dt)
                + np.sum(gb * j.grad_x) + np.sum(hb * j.diag_hess))
        return loss, tape

    _, tape = loss_and_tape(params.flat)
    g = tape.backward(value_bar=vb, dt_bar=tb, grad_bar=gb, hess_bar=hb)
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.normal(size=params.count)
        v /= np.linalg.norm(v)
        fd = (loss_and_tape(params.flat + h * v)[0]
              - loss_and_tape(params.flat - h * v)[0]) / (2 * h)
        worst = max(worst, float(abs(fd - g @ v) / max(1.0, abs(fd), abs(g @ v))))
    return worst


def run_gradcheck(seed: int = 0) -> dict:
    """Full verification sweep; returns {check name: {max_rel_err,
    tolerance, passed}} plus an overall flag under 'passed'."""
    checks = {}
    for activation in ("tanh", "softplus", "relu", "softmax"):
        worst_jet = max(check_jets(activation, d, layers, seed=seed)
                        for d, layers in _CASES)
        checks[f"jets_{activation}"] = {
            "max_rel_err": worst_jet, "tolerance": JET_TOLERANCE,
            "passed": worst_jet <= JET_TOLERANCE}
        worst_grad = max(check_param_gradient(activation, d, layers, seed=seed)
                         for d, layers in _CASES)
        checks[f"param_gradient_{activation}"] = {
            "max_rel_err": worst_grad, "tolerance": GRAD_TOLERANCE,
            "passed": worst_grad <= GRAD_TOLERANCE}
    for problem in (make_analytic_gaussian(2, 1.0, 1.0, 0.0), make_traffic_lwr(0.5)):
        report = check_problem_consistency(problem, n_probes=100, seed=seed,
                                           tolerance=PROBLEM_TOLERANCE)
        worst_name, worst_err = report.worst()
        checks[f"problem_{problem.name}"] = {
            "max_rel_err": worst_err, "tolerance": PROBLEM_TOLERANCE,
            "passed": report.passed, "worst_callback": worst_name}
    return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}
