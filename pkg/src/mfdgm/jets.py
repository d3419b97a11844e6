"""Exact differential operators of a network and gradients of losses built
from them.

A "jet" of a network N at (t, x) is the tuple (N, dN/dt, grad_x N,
d2N/dx_i2) plus, on request, the mixed second derivatives.  Everything is
computed by forward propagation of second-order directional derivatives
through the layers, one channel per input direction: the time axis, each
spatial axis, and (for mixed derivatives) each axis pair e_i + e_j, from
which the off-diagonal Hessian entries follow by polarization,

    d2N/dx_i dx_j = (D2_{e_i+e_j} - D2_{e_i} - D2_{e_j}) / 2.

Parameter gradients of scalar losses over jet fields are produced by
reverse-mode propagation through that same forward computation
(``JetTape.backward``), so losses containing Laplacians differentiate
exactly, to roundoff, against the weights.  All arithmetic is float64 and
every function here is pure: identical inputs give bitwise-identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, ShapeError, UsageError
from .networks import (
    ELEMENTWISE_ACTIVATIONS,
    NetworkParams,
    NetworkSpec,
    param_layout,
    softmax,
    unpack_params,
)


@dataclass(frozen=True)
class Jet:
    """Network value and PDE-relevant derivatives at a single point."""

    value: float
    dt: float
    grad_x: np.ndarray
    diag_hess: np.ndarray
    mixed_hess: np.ndarray | None = None

    def laplacian(self) -> float:
        return float(self.diag_hess.sum())


@dataclass
class JetBatch:
    """Jets over a batch; fields not requested are None."""

    value: np.ndarray
    dt: np.ndarray | None = None
    grad_x: np.ndarray | None = None
    diag_hess: np.ndarray | None = None
    mixed_hess: np.ndarray | None = None

    def laplacian(self) -> np.ndarray:
        return self.diag_hess.sum(axis=1)


@dataclass(frozen=True)
class ParamGradient:
    """Gradient of a scalar loss with respect to one network's flat vector."""

    values: np.ndarray


def _mm3(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    """(B, C, k) @ (k, n) -> (B, C, n) as a single GEMM."""
    b, c, k = a.shape
    return np.ascontiguousarray(a).reshape(b * c, k).dot(m).reshape(b, c, m.shape[1])


class _Channels:
    """Bookkeeping of derivative channels for one jet evaluation."""

    __slots__ = ("dirs", "t_chan", "x_chans", "second_first", "diag_sec",
                 "pair_sec", "sec_slice")

    def __init__(self, spec, want_dt, want_grad, want_hess, want_mixed):
        d = spec.spatial_dim
        dirs = []
        self.t_chan = None
        if want_dt:
            e = np.zeros(spec.input_dim)
            e[0] = 1.0
            self.t_chan = len(dirs)
            dirs.append(e)
        self.x_chans = None
        if want_grad or want_hess or want_mixed:
            self.x_chans = np.empty(d, dtype=np.intp)
            for i in range(d):
                e = np.zeros(spec.input_dim)
                e[1 + i] = 1.0
                self.x_chans[i] = len(dirs)
                dirs.append(e)
        second_first = []
        self.diag_sec = None
        if want_hess or want_mixed:
            self.diag_sec = np.empty(d, dtype=np.intp)
            for i in range(d):
                self.diag_sec[i] = len(second_first)
                second_first.append(self.x_chans[i])
        self.pair_sec = None
        if want_mixed:
            self.pair_sec = {}
            for i in range(d):
                for j in range(i + 1, d):
                    e = np.zeros(spec.input_dim)
                    e[1 + i] = 1.0
                    e[1 + j] = 1.0
                    chan = len(dirs)
                    dirs.append(e)
                    self.pair_sec[(i, j)] = len(second_first)
                    second_first.append(chan)
        self.dirs = np.asarray(dirs, dtype=np.float64) if dirs else np.zeros((0, spec.input_dim))
        self.second_first = np.asarray(second_first, dtype=np.intp)
        # by construction the curved-along channels form one contiguous run,
        # so tangent blocks can be sliced instead of fancy-indexed
        if len(second_first) > 0:
            start = second_first[0]
            assert np.array_equal(self.second_first,
                                  np.arange(start, start + len(second_first)))
            self.sec_slice = slice(start, start + len(second_first))
        else:
            self.sec_slice = slice(0, 0)

    @property
    def n_first(self):
        return self.dirs.shape[0]

    @property
    def n_second(self):
        return self.second_first.shape[0]


def _softmax_jet_forward(z, d1z, d2z, sec_slice, n_second):
    """d2z may be None, meaning exact zeros (the input layer)."""
    s = softmax(z, axis=1)
    d1a = d2a = None
    m1 = None
    if d1z is not None:
        sm = s[:, None, :]
        m1 = (sm * d1z).sum(axis=2, keepdims=True)
        d1a = sm * (d1z - m1)
    if n_second:
        sm = s[:, None, :]
        g = d1z[:, sec_slice, :]
        mg = m1[:, sec_slice, :]
        q = (sm * g * g).sum(axis=2, keepdims=True)
        d2a = (g - mg) ** 2 - (q - mg * mg)
        if d2z is not None:
            m2 = (sm * d2z).sum(axis=2, keepdims=True)
            d2a += d2z - m2
        d2a *= sm
    return s, d1a, d2a


def _softmax_jet_backward(s, d1z, d2z, sec_slice, a_bar, d1_bar, d2_bar):
    """Cotangents wrt (z, d1z, d2z) of the softmax jet propagation."""
    sm = s[:, None, :]
    s_bar = a_bar.copy()
    d1z_bar = d2z_bar = None
    m1 = None
    if d1_bar is not None:
        m1 = (sm * d1z).sum(axis=2, keepdims=True)
        su = (sm * d1_bar).sum(axis=2, keepdims=True)
        d1z_bar = sm * (d1_bar - su)
        s_bar += (d1_bar * (d1z - m1) - d1z * su).sum(axis=1)
    if d2_bar is not None:
        g = d1z[:, sec_slice, :]
        mg = m1[:, sec_slice, :]
        q = (sm * g * g).sum(axis=2, keepdims=True)
        amt = (sm * d2_bar).sum(axis=2, keepdims=True)
        bmt = (sm * d2_bar * g).sum(axis=2, keepdims=True)
        g_bar = 2.0 * sm * (d2_bar * (g - mg) - (bmt - mg * amt) - (g - mg) * amt)
        d1z_bar[:, sec_slice, :] += g_bar
        acc = (
            d2_bar * ((g - mg) ** 2 - q + mg * mg)
            - 2.0 * g * (bmt - mg * amt)
            - (g * g - 2.0 * mg * g) * amt
        )
        if d2z is not None:
            m2 = (sm * d2z).sum(axis=2, keepdims=True)
            acc += d2_bar * (d2z - m2) - d2z * amt
            d2z_bar = sm * (d2_bar - amt)
        s_bar += acc.sum(axis=1)
    z_bar = s * (s_bar - (s * s_bar).sum(axis=1, keepdims=True))
    return z_bar, d1z_bar, d2z_bar


class JetTape:
    """Forward jet evaluation with stored intermediates for reverse mode.

    ``forward`` runs the network once over a batch, keeping per-layer
    preactivation tangents; ``jets`` exposes the resulting JetBatch and
    ``backward`` turns cotangents on the jet fields into the gradient with
    respect to the flat parameter vector.  A tape can be back-propagated
    any number of times.

    For a single hidden layer with an elementwise activation the input
    tangents are the same for every sample, so tangent propagation reduces
    to products of (batch, width) derivative arrays with constant
    (channel, width) matrices; that path stores no 3-D tensors at all.
    """

    def __init__(self, params, spec, channels, stores, outputs, fast=False):
        self.params = params
        self.spec = spec
        self._ch = channels
        self._stores = stores
        self._outputs = outputs
        self._fast = fast

    @classmethod
    def forward(cls, params: NetworkParams, spec: NetworkSpec, t, x, *,
                want_dt=True, want_grad=True, want_hess=True, want_mixed=False):
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != spec.spatial_dim or t.shape != (x.shape[0],):
            raise ShapeError(
                f"expected t of shape (B,) and x of shape (B, {spec.spatial_dim}), "
                f"got {t.shape} and {x.shape}"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise DomainError("non-finite evaluation point")
        hidden, w_out, b_out = unpack_params(params, spec)
        ch = _Channels(spec, want_dt, want_grad, want_hess, want_mixed)
        c1, c2 = ch.n_first, ch.n_second
        b = t.shape[0]

        if spec.hidden_layers == 1 and spec.activation != "softmax":
            return cls._forward_single_layer(params, spec, ch, t, x, hidden, w_out, b_out)

        h = np.concatenate([t[:, None], x], axis=1)
        d1 = None
        d2 = None  # exact zeros at the input

        post_h = [h]
        post_d1 = [d1]
        post_d2 = [d2]
        layer_pre = []  # (z, d1z, d2z, a, s1, s2) per hidden layer
        for idx, (w, bias) in enumerate(hidden):
            z = h @ w.T + bias
            if c1:
                if idx == 0:
                    # input tangents are the same unit directions for every
                    # sample: one tiny product, broadcast across the batch
                    d1z = np.broadcast_to(ch.dirs @ w.T, (b, c1, w.shape[0]))
                else:
                    d1z = _mm3(d1, w.T)
            else:
                d1z = None
            d2z = _mm3(d2, w.T) if (c2 and d2 is not None) else None
            s1 = s2 = None
            if spec.activation == "softmax":
                a, d1a, d2a = _softmax_jet_forward(z, d1z, d2z, ch.sec_slice, c2)
            else:
                act = ELEMENTWISE_ACTIVATIONS[spec.activation]
                a = act.value(z)
                d1a = d2a = None
                if c1:
                    s1 = act.d1(z, a)
                    d1a = s1[:, None, :] * d1z
                if c2:
                    s2 = act.d2(z, a, s1)
                    g = d1z[:, ch.sec_slice, :]
                    d2a = s2[:, None, :] * (g * g)
                    if d2z is not None:
                        d2a += s1[:, None, :] * d2z
            if idx > 0:
                h = a + spec.skip_weight * h
                d1 = d1a + spec.skip_weight * d1 if c1 else None
                d2 = d2a + spec.skip_weight * d2 if (c2 and d2 is not None) else d2a
            else:
                h, d1, d2 = a, d1a, d2a
            layer_pre.append((z, d1z, d2z, a, s1, s2))
            post_h.append(h)
            post_d1.append(d1)
            post_d2.append(d2)

        value = h @ w_out + b_out
        d1y = d1 @ w_out if c1 else None
        d2y = d2 @ w_out if c2 else None
        stores = (post_h, post_d1, post_d2, layer_pre, hidden, w_out)
        return cls(params, spec, ch, stores, (value, d1y, d2y))

    @classmethod
    def _forward_single_layer(cls, params, spec, ch, t, x, hidden, w_out, b_out):
        (w1, b1), = hidden
        act = ELEMENTWISE_ACTIVATIONS[spec.activation]
        u = np.concatenate([t[:, None], x], axis=1)
        z = u @ w1.T + b1
        a = act.value(z)
        value = a @ w_out + b_out
        c1, c2 = ch.n_first, ch.n_second
        s1 = s2 = d1y = d2y = g_base = gs2 = None
        if c1:
            s1 = act.d1(z, a)
            g_base = ch.dirs @ w1.T                  # (C1, W) constant tangents
            d1y = s1 @ (g_base * w_out).T
        if c2:
            s2 = act.d2(z, a, s1)
            gs2 = g_base[ch.sec_slice] ** 2          # (C2, W)
            d2y = s2 @ (gs2 * w_out).T
        stores = (u, z, a, s1, s2, g_base, gs2, w1, w_out)
        return cls(params, spec, ch, stores, (value, d1y, d2y), fast=True)

    @property
    def jets(self) -> JetBatch:
        value, d1y, d2y = self._outputs
        ch = self._ch
        d = self.spec.spatial_dim
        dt = d1y[:, ch.t_chan].copy() if ch.t_chan is not None else None
        # column gathers come out Fortran-ordered; downstream code wants
        # owned C-contiguous arrays
        grad = np.ascontiguousarray(d1y[:, ch.x_chans]) if ch.x_chans is not None else None
        diag = np.ascontiguousarray(d2y[:, ch.diag_sec]) if ch.diag_sec is not None else None
        mixed = None
        if ch.pair_sec is not None:
            bsz = value.shape[0]
            mixed = np.zeros((bsz, d, d))
            for i in range(d):
                mixed[:, i, i] = diag[:, i]
            for (i, j), sec in ch.pair_sec.items():
                off = 0.5 * (d2y[:, sec] - diag[:, i] - diag[:, j])
                mixed[:, i, j] = off
                mixed[:, j, i] = off
        return JetBatch(value=value, dt=dt, grad_x=grad, diag_hess=diag, mixed_hess=mixed)

    def _channel_cotangents(self, bsz, value_bar, dt_bar, grad_bar, hess_bar, mixed_bar):
        ch = self._ch
        c1, c2 = ch.n_first, ch.n_second
        y_bar = np.zeros(bsz) if value_bar is None else np.asarray(value_bar, dtype=np.float64)
        c1_bar = np.zeros((bsz, c1)) if c1 else None
        c2_bar = np.zeros((bsz, c2)) if c2 else None
        if dt_bar is not None:
            c1_bar[:, ch.t_chan] += dt_bar
        if grad_bar is not None:
            c1_bar[:, ch.x_chans] += grad_bar
        if hess_bar is not None:
            c2_bar[:, ch.diag_sec] += hess_bar
        if mixed_bar is not None:
            mb = np.asarray(mixed_bar, dtype=np.float64)
            d = self.spec.spatial_dim
            for i in range(d):
                c2_bar[:, ch.diag_sec[i]] += mb[:, i, i]
            for (i, j), sec in ch.pair_sec.items():
                m = 0.5 * (mb[:, i, j] + mb[:, j, i])
                c2_bar[:, sec] += m
                c2_bar[:, ch.diag_sec[i]] -= m
                c2_bar[:, ch.diag_sec[j]] -= m
        return y_bar, c1_bar, c2_bar

    def _backward_single_layer(self, y_bar, c1_bar, c2_bar) -> np.ndarray:
        spec = self.spec
        ch = self._ch
        u, z, a, s1, s2, g_base, gs2, w1, w_out = self._stores
        act = ELEMENTWISE_ACTIVATIONS[spec.activation]
        if s1 is None:
            s1 = act.d1(z, a)
        grad_flat = np.zeros(self.params.count)
        layout, out_w_sl, out_b_idx = param_layout(spec)
        (w_sl, _shape, b_sl), = layout

        out_w_bar = y_bar @ a
        z_bar = s1 * (y_bar[:, None] * w_out)
        g_bar = None
        if c1_bar is not None:
            if s2 is None:
                s2 = act.d2(z, a, s1)
            out_w_bar += np.einsum("bw,bw->w", s1, c1_bar @ g_base)
            z_bar += s2 * (c1_bar @ (g_base * w_out))
            g_bar = (c1_bar.T @ s1) * w_out
        if c2_bar is not None:
            s3 = act.d3(z, a, s1, s2)
            out_w_bar += np.einsum("bw,bw->w", s2, c2_bar @ gs2)
            z_bar += s3 * (c2_bar @ (gs2 * w_out))
            g_bar[ch.sec_slice] += 2.0 * g_base[ch.sec_slice] * w_out * (c2_bar.T @ s2)
        grad_flat[out_w_sl] = out_w_bar
        grad_flat[out_b_idx] = y_bar.sum()
        w1_bar = z_bar.T @ u
        if g_bar is not None:
            w1_bar += g_bar.T @ ch.dirs
        grad_flat[w_sl] = w1_bar.reshape(-1)
        grad_flat[b_sl] = z_bar.sum(axis=0)
        if not np.all(np.isfinite(grad_flat)):
            raise NumericError("non-finite parameter gradient")
        return grad_flat

    def backward(self, value_bar=None, dt_bar=None, grad_bar=None,
                 hess_bar=None, mixed_bar=None) -> np.ndarray:
        """Gradient of sum_b <cotangents_b, jet_b> wrt the flat parameters."""
        spec = self.spec
        ch = self._ch
        value, d1y, d2y = self._outputs
        bsz = value.shape[0]
        c1, c2 = ch.n_first, ch.n_second
        y_bar, c1_bar, c2_bar = self._channel_cotangents(
            bsz, value_bar, dt_bar, grad_bar, hess_bar, mixed_bar)
        if self._fast:
            return self._backward_single_layer(y_bar, c1_bar, c2_bar)
        post_h, post_d1, post_d2, layer_pre, hidden, w_out = self._stores

        grad_flat = np.zeros(self.params.count)
        layout, out_w_sl, out_b_idx = param_layout(spec)

        h_l = post_h[-1]
        grad_flat[out_w_sl] += y_bar @ h_l
        grad_flat[out_b_idx] += y_bar.sum()
        h_bar = y_bar[:, None] * w_out
        d1_bar = d2_bar = None
        width = h_l.shape[1]
        if c1:
            grad_flat[out_w_sl] += c1_bar.reshape(-1) @ post_d1[-1].reshape(bsz * c1, width)
            d1_bar = c1_bar[:, :, None] * w_out
        if c2:
            grad_flat[out_w_sl] += c2_bar.reshape(-1) @ post_d2[-1].reshape(bsz * c2, width)
            d2_bar = c2_bar[:, :, None] * w_out

        for idx in range(spec.hidden_layers - 1, -1, -1):
            w, _bias = hidden[idx]
            z, d1z, d2z, a, s1, s2 = layer_pre[idx]
            skip = spec.skip_weight if idx > 0 else 0.0
            if spec.activation == "softmax":
                z_bar, d1z_bar, d2z_bar = _softmax_jet_backward(
                    a, d1z, d2z, ch.sec_slice, h_bar, d1_bar, d2_bar)
            else:
                act = ELEMENTWISE_ACTIVATIONS[spec.activation]
                if s1 is None:
                    s1 = act.d1(z, a)
                z_bar = h_bar * s1
                d1z_bar = d2z_bar = None
                if c1:
                    if s2 is None:
                        s2 = act.d2(z, a, s1)
                    z_bar += np.einsum("bcw,bcw->bw", d1_bar, d1z) * s2
                    d1z_bar = s1[:, None, :] * d1_bar
                if c2:
                    s3 = act.d3(z, a, s1, s2)
                    g = d1z[:, ch.sec_slice, :]
                    z_bar += np.einsum("bcw,bcw,bcw->bw", d2_bar, g, g) * s3
                    if d2z is not None:
                        z_bar += np.einsum("bcw,bcw->bw", d2_bar, d2z) * s2
                        d2z_bar = s1[:, None, :] * d2_bar
                    g_bar = 2.0 * s2[:, None, :] * g * d2_bar
                    # the curved-along channels form one contiguous block
                    d1z_bar[:, ch.sec_slice, :] += g_bar

            w_sl, w_shape, b_sl = layout[idx]
            w_grad = z_bar.T @ post_h[idx]
            if c1:
                if idx == 0:
                    # input tangents are constant across the batch: reduce
                    # over samples first, then one small product
                    w_grad += d1z_bar.sum(axis=0).T @ ch.dirs
                else:
                    prev = post_d1[idx]
                    k = prev.shape[2]
                    w_grad += (
                        d1z_bar.reshape(bsz * c1, -1).T @ prev.reshape(bsz * c1, k)
                    )
            if c2 and idx > 0 and d2z_bar is not None:
                prev = post_d2[idx]
                k = prev.shape[2]
                w_grad += (
                    d2z_bar.reshape(bsz * c2, -1).T @ prev.reshape(bsz * c2, k)
                )
            grad_flat[w_sl] += w_grad.reshape(-1)
            grad_flat[b_sl] += z_bar.sum(axis=0)

            if idx > 0:
                h_bar = z_bar @ w + skip * h_bar
                if c1:
                    d1_bar = _mm3(d1z_bar, w) + skip * d1_bar
                if c2:
                    d2_bar = _mm3(d2z_bar, w) + skip * d2_bar if d2z_bar is not None \
                        else skip * d2_bar

        if not np.all(np.isfinite(grad_flat)):
            raise NumericError("non-finite parameter gradient")
        return grad_flat


def eval_jet_batch(params: NetworkParams, spec: NetworkSpec, t, x,
                   want_mixed: bool = False) -> JetBatch:
    """Full jets (value, dt, grad, diagonal Hessian) over a batch."""
    tape = JetTape.forward(params, spec, t, x, want_mixed=want_mixed)
    return tape.jets


def eval_jet(params: NetworkParams, spec: NetworkSpec, t: float, x,
             want_mixed: bool = False) -> Jet:
    """Jet of the network at a single point (t, x)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    jb = eval_jet_batch(params, spec, np.array([float(t)]), x[None, :], want_mixed=want_mixed)
    return Jet(
        value=float(jb.value[0]),
        dt=float(jb.dt[0]),
        grad_x=jb.grad_x[0].copy(),
        diag_hess=jb.diag_hess[0].copy(),
        mixed_hess=jb.mixed_hess[0].copy() if jb.mixed_hess is not None else None,
    )


@dataclass
class JetCotangents:
    """Partial derivatives of a scalar loss with respect to jet fields."""

    value: np.ndarray | None = None
    dt: np.ndarray | None = None
    grad_x: np.ndarray | None = None
    diag_hess: np.ndarray | None = None


def _numeric_cotangents(loss_fn, jets: JetBatch) -> JetCotangents:
    """Central-difference partials of loss_fn wrt every jet entry."""
    fields = {}
    for name in ("value", "dt", "grad_x", "diag_hess"):
        base = getattr(jets, name)
        if base is None:
            fields[name] = None
            continue
        bar = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            h = 1e-6 * max(1.0, abs(orig))
            base[idx] = orig + h
            up = loss_fn(jets)
            base[idx] = orig - h
            dn = loss_fn(jets)
            base[idx] = orig
            bar[idx] = (up - dn) / (2.0 * h)
        fields[name] = bar
    return JetCotangents(**fields)


def loss_param_gradient(params: NetworkParams, spec: NetworkSpec, t, x, loss_fn,
                        cotangent_fn=None) -> ParamGradient:
    """Gradient of ``loss_fn(jets over the batch)`` wrt the flat parameters.

    ``cotangent_fn`` may supply analytic partials of the loss with respect
    to the jet fields (a JetCotangents); without it they are obtained by
    central differences on ``loss_fn``, which is adequate for smooth losses
    at far better than the 1e-5 gradient-verification tolerance.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise UsageError("loss_param_gradient needs a nonempty batch")
    tape = JetTape.forward(params, spec, t, x)
    jets = tape.jets
    for name in ("value", "dt", "grad_x", "diag_hess"):
        arr = getattr(jets, name)
        if arr is not None and not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr))[0][0])
            raise NumericError(f"non-finite {name} during loss evaluation", sample_index=bad)
    cot = cotangent_fn(jets) if cotangent_fn is not None else _numeric_cotangents(loss_fn, jets)
    grad = tape.backward(value_bar=cot.value, dt_bar=cot.dt,
                         grad_bar=cot.grad_x, hess_bar=cot.diag_hess)
    return ParamGradient(values=grad)


def finite_diff_probe(f, point, h: float) -> np.ndarray:
    """Central-difference estimates (f(p + h e_i) - f(p - h e_i)) / 2h."""
    if h <= 0:
        raise UsageError(f"finite-difference step must be positive, got {h}")
    point = np.asarray(point, dtype=np.float64)
    out = np.empty(point.shape[0])
    for i in range(point.shape[0]):
        up = point.copy()
        dn = point.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (2.0 * h)
    return out
