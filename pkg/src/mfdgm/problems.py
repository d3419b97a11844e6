"""Mean-field-game problem definitions.

An ``MFGProblem`` bundles the domain, the diffusion coefficient, the
Hamiltonian with its derivative callbacks, the terminal cost and the
initial density.  Callbacks are vectorized over a leading batch axis:
``x`` is (B, d), ``rho`` is (B,), ``p`` is (B, d).

Beyond the derivatives the residuals themselves need, gradient assembly
needs a few couplings (dH/drho, dg/drho and three third-order terms).
They may be supplied analytically; when absent they are produced by
central differences of the supplied callbacks, which is exact for the
built-in problems since their second derivatives are constant in
(rho, p).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DomainError, UsageError
from .fields import AnalyticField

_FD_SCALE = 1e-6


@dataclass
class MFGProblem:
    d: int
    T: float
    omega_lo: np.ndarray
    omega_hi: np.ndarray
    nu: float
    H: Callable
    dH_dp: Callable
    dH_drho_dp: Callable
    dH_dpp: Callable
    g: Callable
    rho0: Callable
    exact: Optional[Tuple[Callable, Callable]] = None
    # optional analytic couplings used by gradient assembly (FD fallback)
    dH_drho: Optional[Callable] = None
    dg_drho: Optional[Callable] = None
    dH_drho_drho_dp: Optional[Callable] = None
    dH_drho_dpp: Optional[Callable] = None
    dH_dppp_contract: Optional[Callable] = None
    # whether the FP flux needs mixed second derivatives of the value
    # function (a dH_dpp with off-diagonal entries); both built-ins do not
    pp_mixed: bool = False
    exact_fields: Optional[Tuple[AnalyticField, AnalyticField]] = None
    name: str = "custom"

    def __post_init__(self):
        self.omega_lo = np.asarray(self.omega_lo, dtype=np.float64).reshape(self.d)
        self.omega_hi = np.asarray(self.omega_hi, dtype=np.float64).reshape(self.d)
        if not np.all(self.omega_lo < self.omega_hi):
            raise UsageError("domain box must satisfy omega_lo < omega_hi componentwise")
        if self.T <= 0:
            raise UsageError(f"time horizon must be positive, got {self.T}")
        if self.nu < 0:
            raise UsageError(f"diffusion coefficient must be >= 0, got {self.nu}")

    # -- couplings with finite-difference fallbacks --------------------------

    def _rho_step(self, rho):
        return _FD_SCALE * np.maximum(1.0, np.abs(rho))

    def H_rho(self, x, rho, p):
        """dH/drho, shape (B,)."""
        if self.dH_drho is not None:
            return np.asarray(self.dH_drho(x, rho, p), dtype=np.float64)
        h = self._rho_step(rho)
        return (self.H(x, rho + h, p) - self.H(x, rho - h, p)) / (2.0 * h)

    def g_rho(self, x, rho):
        """dg/drho at terminal density, shape (B,)."""
        if self.dg_drho is not None:
            return np.asarray(self.dg_drho(x, rho), dtype=np.float64)
        h = self._rho_step(rho)
        return (self.g(x, rho + h) - self.g(x, rho - h)) / (2.0 * h)

    def H_rrp(self, x, rho, p):
        """d3H/drho2 dp_k, shape (B, d)."""
        if self.dH_drho_drho_dp is not None:
            return np.asarray(self.dH_drho_drho_dp(x, rho, p), dtype=np.float64)
        h = self._rho_step(rho)
        return (self.dH_drho_dp(x, rho + h, p) - self.dH_drho_dp(x, rho - h, p)) / (2.0 * h[:, None])

    def H_rpp(self, x, rho, p):
        """d3H/drho dp_i dp_j, shape (B, d, d)."""
        if self.dH_drho_dpp is not None:
            return np.asarray(self.dH_drho_dpp(x, rho, p), dtype=np.float64)
        h = self._rho_step(rho)
        return (self.dH_dpp(x, rho + h, p) - self.dH_dpp(x, rho - h, p)) / (2.0 * h[:, None, None])

    def H_ppp_contract(self, x, rho, p, hess, mixed: bool):
        """sum_ij d3H/dp_i dp_j dp_m * hess_ij, shape (B, d); ``hess`` is the
        (B, d) Hessian diagonal when ``mixed`` is false, else (B, d, d)."""
        if self.dH_dppp_contract is not None:
            return np.asarray(self.dH_dppp_contract(x, rho, p, hess, mixed), dtype=np.float64)
        b = rho.shape[0]
        out = np.zeros((b, self.d))
        for m in range(self.d):
            h = _FD_SCALE * np.maximum(1.0, np.abs(p[:, m]))
            pp = p.copy()
            pm = p.copy()
            pp[:, m] += h
            pm[:, m] -= h
            dpp = (self.dH_dpp(x, rho, pp) - self.dH_dpp(x, rho, pm)) / (2.0 * h[:, None, None])
            if mixed:
                out[:, m] = np.einsum("bij,bij->b", dpp, hess)
            else:
                out[:, m] = np.einsum("bii,bi->b", dpp, hess)
        return out


def _sq_norm(a):
    return np.sum(a * a, axis=-1)


def make_analytic_gaussian(d: int, nu: float, beta: float, gamma: float) -> MFGProblem:
    """Quadratic-Hamiltonian problem on [-2, 2]^d with Gaussian initial
    density and, for the reference parameter choice, a closed-form solution
    (quadratic value function, stationary Gaussian density)."""
    if nu <= 0 or beta <= 0 or gamma < 0:
        raise UsageError("analytic problem needs nu > 0, beta > 0, gamma >= 0")
    alpha = (-gamma + np.sqrt(gamma * gamma + 4.0 * nu * nu * beta)) / (2.0 * nu)
    g_const = -(nu * d * alpha + gamma * (d / 2.0) * np.log(alpha / (2.0 * np.pi * nu)))

    def _check_rho(rho):
        if gamma > 0:
            bad = ~(np.asarray(rho) > 0)
            if np.any(bad):
                idx = int(np.argwhere(bad)[0][0])
                raise DomainError(
                    "log coupling needs a positive density", sample_index=idx)

    def H(x, rho, p):
        _check_rho(rho)
        coupling = gamma * np.log(rho) if gamma > 0 else 0.0
        return 0.5 * _sq_norm(p) - 0.5 * beta * _sq_norm(x) - coupling

    def dH_dp(x, rho, p):
        return np.asarray(p, dtype=np.float64)

    def dH_drho_dp(x, rho, p):
        return np.zeros_like(p)

    def dH_dpp(x, rho, p):
        return np.broadcast_to(np.eye(d), (p.shape[0], d, d))

    def dH_drho(x, rho, p):
        if gamma == 0:
            return np.zeros(np.asarray(rho).shape[0])
        _check_rho(rho)
        return -gamma / rho

    def g(x, rho_t):
        return 0.5 * alpha * _sq_norm(x) + g_const

    def rho0(x):
        return (2.0 * np.pi) ** (-d / 2.0) * np.exp(-0.5 * _sq_norm(x))

    zeros_b = lambda x, rho, *rest: np.zeros(np.asarray(rho).shape[0])
    zeros_bd = lambda x, rho, p, *rest: np.zeros_like(p)
    zeros_bdd = lambda x, rho, p: np.zeros((p.shape[0], d, d))

    exact = None
    exact_fields = None
    # the attached closed form solves the system only when the Gaussian
    # density is stationary, i.e. alpha == nu
    if abs(alpha - nu) <= 1e-12 * max(1.0, nu):
        phi_rate = g_const  # phi(t, x) = alpha ||x||^2 / 2 + phi_rate * t

        def phi_exact(t, x):
            return 0.5 * alpha * _sq_norm(x) + phi_rate * t

        def rho_exact(t, x):
            return rho0(x)

        exact = (phi_exact, rho_exact)
        exact_fields = (
            AnalyticField(
                d,
                value=phi_exact,
                dt=lambda t, x: np.full(t.shape[0], phi_rate),
                grad_x=lambda t, x: alpha * x,
                diag_hess=lambda t, x: np.full((t.shape[0], d), alpha),
                mixed_hess=lambda t, x: np.broadcast_to(alpha * np.eye(d), (t.shape[0], d, d)),
            ),
            AnalyticField(
                d,
                value=rho_exact,
                dt=lambda t, x: np.zeros(t.shape[0]),
                grad_x=lambda t, x: -x * rho_exact(t, x)[:, None],
                diag_hess=lambda t, x: (x * x - 1.0) * rho_exact(t, x)[:, None],
                mixed_hess=lambda t, x: (
                    (x[:, :, None] * x[:, None, :] - np.eye(d)) * rho_exact(t, x)[:, None, None]
                ),
            ),
        )

    return MFGProblem(
        d=d, T=1.0, omega_lo=np.full(d, -2.0), omega_hi=np.full(d, 2.0), nu=nu,
        H=H, dH_dp=dH_dp, dH_drho_dp=dH_drho_dp, dH_dpp=dH_dpp, g=g, rho0=rho0,
        exact=exact, exact_fields=exact_fields,
        dH_drho=dH_drho, dg_drho=lambda x, rho: np.zeros(np.asarray(rho).shape[0]),
        dH_drho_drho_dp=zeros_bd, dH_drho_dpp=zeros_bdd,
        dH_dppp_contract=lambda x, rho, p, hess, mixed: np.zeros_like(p),
        name="analytic-gaussian",
    )


def make_traffic_lwr(nu: float, rho0_amplitude: float = -0.6,
                     rho0_offset: float = 0.2) -> MFGProblem:
    """One-dimensional traffic problem on [0, 1] with the non-separable
    Hamiltonian H = p^2 / 2 - (1 - rho) p and zero terminal cost.

    The default initial density follows the reference configuration
    literally (offset 0.2, amplitude -0.6), which dips below zero near
    x = 0.5; both knobs are exposed so the sign-flipped bump is one
    configuration change away.
    """
    if nu < 0:
        raise UsageError(f"diffusion coefficient must be >= 0, got {nu}")

    def H(x, rho, p):
        q = p[:, 0]
        return 0.5 * q * q - (1.0 - rho) * q

    def dH_dp(x, rho, p):
        return p - (1.0 - rho)[:, None]

    def dH_drho_dp(x, rho, p):
        return np.ones_like(p)

    def dH_dpp(x, rho, p):
        return np.ones((p.shape[0], 1, 1))

    def rho0(x):
        z = (x[:, 0] - 0.5) / 0.1
        return rho0_offset + rho0_amplitude * np.exp(-0.5 * z * z)

    return MFGProblem(
        d=1, T=1.0, omega_lo=np.array([0.0]), omega_hi=np.array([1.0]), nu=nu,
        H=H, dH_dp=dH_dp, dH_drho_dp=dH_drho_dp, dH_dpp=dH_dpp,
        g=lambda x, rho_t: np.zeros(x.shape[0]), rho0=rho0,
        dH_drho=lambda x, rho, p: p[:, 0].copy(),
        dg_drho=lambda x, rho: np.zeros(x.shape[0]),
        dH_drho_drho_dp=lambda x, rho, p: np.zeros_like(p),
        dH_drho_dpp=lambda x, rho, p: np.zeros((p.shape[0], 1, 1)),
        dH_dppp_contract=lambda x, rho, p, hess, mixed: np.zeros_like(p),
        name="traffic-lwr",
    )


@dataclass
class ConsistencyReport:
    """Worst relative finite-difference mismatch per derivative callback."""

    checks: dict
    tolerance: float
    passed: bool

    def worst(self):
        name = max(self.checks, key=self.checks.get)
        return name, self.checks[name]


def check_problem_consistency(problem: MFGProblem, n_probes: int = 100,
                              seed: int = 0, tolerance: float = 1e-5) -> ConsistencyReport:
    """Finite-difference verification that the derivative callbacks agree
    with the Hamiltonian.  Returns a failed report (never raises) when a
    callback is off by more than ``tolerance``."""
    if n_probes < 1:
        raise UsageError("n_probes must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    d = problem.d
    x = rng.uniform(problem.omega_lo, problem.omega_hi, size=(n_probes, d))
    rho = rng.uniform(0.2, 1.2, size=n_probes)
    p = rng.uniform(-1.0, 1.0, size=(n_probes, d))
    h = 1e-6

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))

    checks = {}
    fd = np.empty((n_probes, d))
    for i in range(d):
        pp, pm = p.copy(), p.copy()
        pp[:, i] += h
        pm[:, i] -= h
        fd[:, i] = (problem.H(x, rho, pp) - problem.H(x, rho, pm)) / (2 * h)
    checks["dH_dp"] = rel(problem.dH_dp(x, rho, p), fd)

    fd = (problem.dH_dp(x, rho + h, p) - problem.dH_dp(x, rho - h, p)) / (2 * h)
    checks["dH_drho_dp"] = rel(problem.dH_drho_dp(x, rho, p), fd)

    fd3 = np.empty((n_probes, d, d))
    for j in range(d):
        pp, pm = p.copy(), p.copy()
        pp[:, j] += h
        pm[:, j] -= h
        fd3[:, :, j] = (problem.dH_dp(x, rho, pp) - problem.dH_dp(x, rho, pm)) / (2 * h)
    checks["dH_dpp"] = rel(problem.dH_dpp(x, rho, p), fd3)

    if problem.dH_drho is not None:
        fd = (problem.H(x, rho + h, p) - problem.H(x, rho - h, p)) / (2 * h)
        checks["dH_drho"] = rel(problem.dH_drho(x, rho, p), fd)
    if problem.dg_drho is not None:
        fd = (problem.g(x, rho + h) - problem.g(x, rho - h)) / (2 * h)
        checks["dg_drho"] = rel(problem.dg_drho(x, rho), fd)

    passed = all(v <= tolerance for v in checks.values())
    return ConsistencyReport(checks=checks, tolerance=tolerance, passed=passed)
