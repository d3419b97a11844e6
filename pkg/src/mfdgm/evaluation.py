"""Accuracy metrics against exact solutions and traffic-flow diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError
from .jets import JetTape
from .networks import forward_batch


@dataclass(frozen=True)
class GridEval:
    """A scalar field tabulated on a (time x space) grid, spatial d = 1."""

    t_axis: np.ndarray
    x_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.t_axis) <= 0) or np.any(np.diff(self.x_axis) <= 0):
            raise UsageError("grid axes must be strictly increasing")
        if self.values.shape != (self.t_axis.shape[0], self.x_axis.shape[0]):
            raise ShapeError(
                f"values shape {self.values.shape} does not match axes "
                f"({self.t_axis.shape[0]}, {self.x_axis.shape[0]})"
            )


def _check_same_axes(a: GridEval, b: GridEval):
    if not (np.array_equal(a.t_axis, b.t_axis) and np.array_equal(a.x_axis, b.x_axis)):
        raise UsageError("grid axes do not match")


def relative_error(pred: GridEval, exact: GridEval) -> float:
    """Global relative L2 error over all grid entries."""
    _check_same_axes(pred, exact)
    return relative_error_values(pred.values, exact.values)


def relative_error_values(pred: np.ndarray, exact: np.ndarray) -> float:
    denom = float(np.linalg.norm(exact))
    if denom == 0.0:
        raise UsageError("exact field has zero norm; relative error undefined")
    return float(np.linalg.norm(pred - exact) / denom)


def rolling_average(series, window: int = 5) -> np.ndarray:
    """Trailing moving average; output length is len(series) - window + 1."""
    series = np.asarray(series, dtype=np.float64)
    if window < 1:
        raise UsageError(f"window must be >= 1, got {window}")
    if series.shape[0] < window:
        raise UsageError(f"series of length {series.shape[0]} is shorter than window {window}")
    kernel = np.full(window, 1.0 / window)
    return np.convolve(series, kernel, mode="valid")


def speed_field(rho: GridEval, v_x: GridEval, u_max: float = 1.0,
                rho_jam: float = 1.0) -> GridEval:
    """Traffic speed u = u_max (1 - rho / rho_jam) - V_x, pointwise."""
    _check_same_axes(rho, v_x)
    u = u_max * (1.0 - rho.values / rho_jam) - v_x.values
    return GridEval(t_axis=rho.t_axis, x_axis=rho.x_axis, values=u)


def fundamental_diagram(rho: GridEval, u: GridEval) -> GridEval:
    """Traffic flux q = rho * u, pointwise."""
    _check_same_axes(rho, u)
    return GridEval(t_axis=rho.t_axis, x_axis=rho.x_axis, values=rho.values * u.values)


def evaluate_network_grid(params, spec, t_axis, x_axis, which: str = "value") -> GridEval:
    """Tabulate a network (or its spatial derivative, from jets) on a grid."""
    if spec.spatial_dim != 1:
        raise ShapeError("grid evaluation is defined for one spatial dimension")
    if which not in ("value", "x_derivative"):
        raise UsageError(f"unknown field selector {which!r}")
    t_axis = np.asarray(t_axis, dtype=np.float64)
    x_axis = np.asarray(x_axis, dtype=np.float64)
    tt = np.repeat(t_axis, x_axis.shape[0])
    xx = np.tile(x_axis, t_axis.shape[0])[:, None]
    if which == "value":
        vals = forward_batch(params, spec, tt, xx)
    else:
        tape = JetTape.forward(params, spec, tt, xx, want_dt=False,
                               want_grad=True, want_hess=False)
        vals = tape.jets.grad_x[:, 0]
    return GridEval(t_axis=t_axis, x_axis=x_axis,
                    values=vals.reshape(t_axis.shape[0], x_axis.shape[0]))


def exact_on_grid(fn, t_axis, x_axis) -> GridEval:
    """Tabulate a closed-form (t, x) callable on the same grid layout."""
    t_axis = np.asarray(t_axis, dtype=np.float64)
    x_axis = np.asarray(x_axis, dtype=np.float64)
    tt = np.repeat(t_axis, x_axis.shape[0])
    xx = np.tile(x_axis, t_axis.shape[0])[:, None]
    vals = np.asarray(fn(tt, xx), dtype=np.float64)
    return GridEval(t_axis=t_axis, x_axis=x_axis,
                    values=vals.reshape(t_axis.shape[0], x_axis.shape[0]))
