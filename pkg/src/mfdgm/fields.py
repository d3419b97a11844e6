"""Fields: anything that can produce jets over a batch of (t, x) points.

Residuals and diagnostics are written against this small interface so the
same code evaluates network approximations, closed-form exact solutions,
and synthetic test functions.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .jets import JetBatch, JetTape
from .networks import NetworkParams, NetworkSpec


class NetworkField:
    """A trained (or in-training) network viewed as a scalar field."""

    def __init__(self, params: NetworkParams, spec: NetworkSpec):
        self.params = params
        self.spec = spec
        self.d = spec.spatial_dim

    def jet_batch(self, t, x, *, want_dt=True, want_grad=True, want_hess=True,
                  want_mixed=False) -> JetBatch:
        tape = JetTape.forward(self.params, self.spec, t, x, want_dt=want_dt,
                               want_grad=want_grad, want_hess=want_hess,
                               want_mixed=want_mixed)
        return tape.jets

    def values(self, t, x) -> np.ndarray:
        tape = JetTape.forward(self.params, self.spec, t, x,
                               want_dt=False, want_grad=False, want_hess=False)
        return tape.jets.value


class AnalyticField:
    """A closed-form field given by callables for the value and its
    derivatives; callables take (t of shape (B,), x of shape (B, d))."""

    def __init__(self, d, value, dt=None, grad_x=None, diag_hess=None, mixed_hess=None):
        self.d = d
        self._value = value
        self._dt = dt
        self._grad = grad_x
        self._diag = diag_hess
        self._mixed = mixed_hess

    def jet_batch(self, t, x, *, want_dt=True, want_grad=True, want_hess=True,
                  want_mixed=False) -> JetBatch:
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"expected points of shape (B, {self.d}), got {x.shape}")

        def need(flag, fn, name):
            if not flag:
                return None
            if fn is None:
                raise ShapeError(f"analytic field does not define {name}")
            return np.asarray(fn(t, x), dtype=np.float64)

        return JetBatch(
            value=np.asarray(self._value(t, x), dtype=np.float64),
            dt=need(want_dt, self._dt, "dt"),
            grad_x=need(want_grad, self._grad, "grad_x"),
            diag_hess=need(want_hess, self._diag, "diag_hess"),
            mixed_hess=need(want_mixed, self._mixed, "mixed_hess"),
        )

    def values(self, t, x) -> np.ndarray:
        return np.asarray(self._value(np.asarray(t, dtype=np.float64),
                                      np.asarray(x, dtype=np.float64)), dtype=np.float64)
