"""Pointwise PDE residuals and the four Monte-Carlo loss terms.

The backward equation residual is  dphi/dt + nu * lap(phi) - H(x, rho,
grad phi);  the forward equation residual is  drho/dt - nu * lap(rho) -
div(rho * dH_dp), with the divergence expanded into derivative callbacks
so it can be evaluated (and differentiated against network weights)
exactly from jets:

    div(rho dH_dp) = dH_dp . grad rho
                   + rho * (dH_drho_dp . grad rho)
                   + rho * sum_ij (dH_dpp)_ij d2phi/dx_j dx_i.

Losses are plain means of squared residuals plus squared condition
mismatches (terminal cost for the backward equation at t = T, initial
density at t = 0), with no reweighting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, UsageError
from .jets import JetBatch
from .sampling import SampleBatch


@dataclass(frozen=True)
class ResidualSample:
    t: float
    x: np.ndarray
    hjb: float
    fp: float


class LossParts(NamedTuple):
    total: float
    residual: float
    condition: float


def _attach_coords(err: DomainError, t, x):
    idx = err.sample_index if err.sample_index is not None else 0
    raise DomainError(str(err), t=float(t[idx]), x=np.array(x[idx]),
                      sample_index=idx) from err


def hjb_residual_batch(problem, phi: JetBatch, rho_value: np.ndarray, t, x) -> np.ndarray:
    try:
        ham = problem.H(x, rho_value, phi.grad_x)
    except DomainError as err:
        _attach_coords(err, t, x)
    return phi.dt + problem.nu * phi.laplacian() - ham


def fp_flux_divergence_batch(problem, rho: JetBatch, phi: JetBatch, t, x) -> np.ndarray:
    """The expanded div(rho dH_dp) term."""
    rho_value = rho.value
    p = phi.grad_x
    try:
        h_p = problem.dH_dp(x, rho_value, p)
        h_rp = problem.dH_drho_dp(x, rho_value, p)
        h_pp = problem.dH_dpp(x, rho_value, p)
    except DomainError as err:
        _attach_coords(err, t, x)
    term = np.einsum("bi,bi->b", h_p, rho.grad_x)
    term += rho_value * np.einsum("bi,bi->b", h_rp, rho.grad_x)
    if problem.pp_mixed:
        term += rho_value * np.einsum("bij,bij->b", h_pp, phi.mixed_hess)
    else:
        term += rho_value * np.einsum("bii,bi->b", h_pp, phi.diag_hess)
    return term


def fp_residual_batch(problem, rho: JetBatch, phi: JetBatch, t, x) -> np.ndarray:
    flux_div = fp_flux_divergence_batch(problem, rho, phi, t, x)
    return rho.dt - problem.nu * rho.laplacian() - flux_div


def _point_jets(field, t, x, d, **want):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (d,):
        raise UsageError(f"expected a point of dimension {d}, got shape {x.shape}")
    return field.jet_batch(np.array([float(t)]), x[None, :], **want)


def hjb_residual(problem, phi_field, rho_field, t: float, x) -> float:
    """Backward-equation residual at one point."""
    phi = _point_jets(phi_field, t, x, problem.d, want_mixed=False)
    rho = _point_jets(rho_field, t, x, problem.d,
                      want_dt=False, want_grad=False, want_hess=False)
    r = hjb_residual_batch(problem, phi, rho.value,
                           np.array([float(t)]), np.atleast_2d(x))
    return float(r[0])


def fp_residual(problem, phi_field, rho_field, t: float, x) -> float:
    """Forward-equation residual at one point."""
    phi = _point_jets(phi_field, t, x, problem.d,
                      want_dt=False, want_mixed=problem.pp_mixed)
    rho = _point_jets(rho_field, t, x, problem.d)
    r = fp_residual_batch(problem, rho, phi,
                          np.array([float(t)]), np.atleast_2d(x))
    return float(r[0])


def evaluate_residuals(problem, phi_field, rho_field, batch: SampleBatch):
    """Both residuals at every interior sample, as ResidualSample records."""
    phi = phi_field.jet_batch(batch.times, batch.points, want_mixed=problem.pp_mixed)
    rho = rho_field.jet_batch(batch.times, batch.points)
    hjb = hjb_residual_batch(problem, phi, rho.value, batch.times, batch.points)
    fp = fp_residual_batch(problem, rho, phi, batch.times, batch.points)
    return [
        ResidualSample(t=float(batch.times[i]), x=batch.points[i].copy(),
                       hjb=float(hjb[i]), fp=float(fp[i]))
        for i in range(len(batch))
    ]


def _require_nonempty(*batches):
    for b in batches:
        if b is None or len(b) == 0:
            raise UsageError("loss evaluation needs nonempty batches")


def hjb_loss(problem, phi_field, rho_field, interior: SampleBatch,
             terminal: SampleBatch) -> LossParts:
    """Mean squared backward residual plus mean squared terminal mismatch."""
    _require_nonempty(interior, terminal)
    phi = phi_field.jet_batch(interior.times, interior.points)
    rho_value = rho_field.values(interior.times, interior.points)
    r = hjb_residual_batch(problem, phi, rho_value, interior.times, interior.points)
    residual = float(np.mean(r * r))

    t_term = np.full(len(terminal), problem.T)
    phi_term = phi_field.values(t_term, terminal.points)
    rho_term = rho_field.values(t_term, terminal.points)
    mismatch = phi_term - problem.g(terminal.points, rho_term)
    condition = float(np.mean(mismatch * mismatch))
    return LossParts(residual + condition, residual, condition)


def fp_loss(problem, phi_field, rho_field, interior: SampleBatch,
            initial: SampleBatch) -> LossParts:
    """Mean squared forward residual plus mean squared initial mismatch."""
    _require_nonempty(interior, initial)
    phi = phi_field.jet_batch(interior.times, interior.points,
                              want_dt=False, want_mixed=problem.pp_mixed)
    rho = rho_field.jet_batch(interior.times, interior.points)
    r = fp_residual_batch(problem, rho, phi, interior.times, interior.points)
    residual = float(np.mean(r * r))

    t_init = np.zeros(len(initial))
    rho_init = rho_field.values(t_init, initial.points)
    mismatch = rho_init - problem.rho0(initial.points)
    condition = float(np.mean(mismatch * mismatch))
    return LossParts(residual + condition, residual, condition)


# --- cotangent assembly for training ----------------------------------------
#
# Partial derivatives of the squared-residual means with respect to the jet
# fields of each network, fed to JetTape.backward.  r_bar is d(loss)/d(r_b),
# i.e. 2 r_b / B for a mean of squares.


def hjb_interior_cotangents(problem, x, phi: JetBatch, rho_value, r_bar):
    h_p = problem.dH_dp(x, rho_value, phi.grad_x)
    phi_cots = {
        "dt_bar": r_bar,
        "hess_bar": np.broadcast_to((problem.nu * r_bar)[:, None],
                                    (r_bar.shape[0], problem.d)),
        "grad_bar": -r_bar[:, None] * h_p,
    }
    rho_value_bar = -r_bar * problem.H_rho(x, rho_value, phi.grad_x)
    return phi_cots, rho_value_bar


def fp_interior_cotangents(problem, x, rho: JetBatch, phi: JetBatch, r_bar):
    rho_value = rho.value
    p = phi.grad_x
    h_p = problem.dH_dp(x, rho_value, p)
    h_rp = problem.dH_drho_dp(x, rho_value, p)
    h_pp = problem.dH_dpp(x, rho_value, p)
    h_rrp = problem.H_rrp(x, rho_value, p)
    h_rpp = problem.H_rpp(x, rho_value, p)
    mixed = problem.pp_mixed
    hess = phi.mixed_hess if mixed else phi.diag_hess

    b, d = p.shape
    rho_cots = {
        "dt_bar": r_bar,
        "hess_bar": np.broadcast_to((-problem.nu * r_bar)[:, None], (b, d)),
        "grad_bar": -r_bar[:, None] * (h_p + rho_value[:, None] * h_rp),
    }
    if mixed:
        pp_term = np.einsum("bij,bij->b", h_pp, hess)
        rpp_term = np.einsum("bij,bij->b", h_rpp, hess)
    else:
        pp_term = np.einsum("bii,bi->b", h_pp, hess)
        rpp_term = np.einsum("bii,bi->b", h_rpp, hess)
    rho_cots["value_bar"] = -r_bar * (
        2.0 * np.einsum("bi,bi->b", h_rp, rho.grad_x)
        + rho_value * np.einsum("bi,bi->b", h_rrp, rho.grad_x)
        + pp_term
        + rho_value * rpp_term
    )

    phi_grad_bar = np.einsum("bkm,bk->bm", h_pp, rho.grad_x)
    phi_grad_bar += rho_value[:, None] * np.einsum("bkm,bk->bm", h_rpp, rho.grad_x)
    phi_grad_bar += rho_value[:, None] * problem.H_ppp_contract(x, rho_value, p, hess, mixed)
    phi_cots = {"grad_bar": -r_bar[:, None] * phi_grad_bar}
    scale = -(r_bar * rho_value)
    if mixed:
        phi_cots["mixed_bar"] = scale[:, None, None] * h_pp
    else:
        phi_cots["hess_bar"] = scale[:, None] * np.einsum("bii->bi", h_pp)
    return rho_cots, phi_cots
