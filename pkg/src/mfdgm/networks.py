"""Feedforward value networks: architecture specs, flat parameter vectors,
activations with first/second/third derivatives, and Glorot initialization.

Two architectures cover every experiment: a single hidden layer (the
width-n family used in the hidden-unit sweeps) and a deeper residual stack
where each block past the first adds ``skip_weight`` times its own input:
``h_next = act(W h + b) + skip_weight * h``.  The output layer is always
affine.  Networks take ``(t, x)`` with ``input_dim = 1 + d`` and return a
scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeError, UsageError

ACTIVATION_KINDS = ("tanh", "softplus", "relu", "softmax")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; immutable and hashable."""

    input_dim: int
    hidden_width: int
    hidden_layers: int = 1
    activation: str = "tanh"
    skip_weight: float = 0.0
    output_dim: int = 1

    def __post_init__(self):
        if self.input_dim < 2:
            raise ShapeError(f"input_dim must be >= 2 (1 time + d space), got {self.input_dim}")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ShapeError("hidden_width and hidden_layers must be >= 1")
        if self.activation not in ACTIVATION_KINDS:
            raise UsageError(f"unknown activation {self.activation!r}, expected one of {ACTIVATION_KINDS}")
        if not 0.0 <= self.skip_weight <= 1.0:
            raise UsageError(f"skip_weight must lie in [0, 1], got {self.skip_weight}")
        if self.output_dim != 1:
            raise ShapeError("only scalar outputs are supported (output_dim = 1)")

    @property
    def spatial_dim(self) -> int:
        return self.input_dim - 1


def parameter_count(spec: NetworkSpec) -> int:
    w = spec.hidden_width
    return (spec.input_dim + 1) * w + (spec.hidden_layers - 1) * (w + 1) * w + (w + 1) * spec.output_dim


@dataclass(frozen=True)
class NetworkParams:
    """Flat 64-bit parameter vector for one network."""

    flat: np.ndarray
    count: int

    @classmethod
    def from_flat(cls, flat) -> "NetworkParams":
        arr = np.asarray(flat, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError("parameter vector must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("parameter vector contains non-finite entries")
        return cls(flat=arr, count=arr.shape[0])


def param_layout(spec: NetworkSpec):
    """Slices of the flat vector: [(w_slice, w_shape, b_slice) per hidden
    layer], then (out_w_slice, out_b_index)."""
    w = spec.hidden_width
    layers = []
    ofs = 0
    fan_in = spec.input_dim
    for _ in range(spec.hidden_layers):
        n_w = w * fan_in
        layers.append((slice(ofs, ofs + n_w), (w, fan_in), slice(ofs + n_w, ofs + n_w + w)))
        ofs += n_w + w
        fan_in = w
    out_w = slice(ofs, ofs + w)
    out_b = ofs + w
    return layers, out_w, out_b


def unpack_params(params: NetworkParams, spec: NetworkSpec):
    """Views (no copies) of each layer's weight matrix and bias vector."""
    if params.count != parameter_count(spec):
        raise ShapeError(
            f"parameter vector has {params.count} entries, spec needs {parameter_count(spec)}"
        )
    flat = params.flat
    layers, out_w, out_b = param_layout(spec)
    hidden = [(flat[ws].reshape(shape), flat[bs]) for ws, shape, bs in layers]
    return hidden, flat[out_w], flat[out_b]


def init_network(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Glorot-uniform weights per layer, zero biases; deterministic in seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    flat = np.zeros(parameter_count(spec), dtype=np.float64)
    layers, out_w, _out_b = param_layout(spec)
    for ws, shape, _bs in layers:
        fan_out, fan_in = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        flat[ws] = rng.uniform(-limit, limit, size=fan_out * fan_in)
    limit = np.sqrt(6.0 / (spec.hidden_width + spec.output_dim))
    flat[out_w] = rng.uniform(-limit, limit, size=spec.hidden_width)
    return NetworkParams(flat=flat, count=flat.shape[0])


# --- activations ------------------------------------------------------------
#
# Elementwise kinds supply the value and three derivatives in stages, so a
# value-only pass never pays for derivative transcendentals and higher
# stages reuse what lower ones computed (the third derivative is needed
# when back-propagating through second-order input derivatives).  Softmax
# acts across the hidden-unit axis and is handled by dedicated routines in
# the jet engine; here it only gets the dense Jacobian/tensor form used by
# the public activation_values API and the verification suite.


def _sigmoid(z):
    # exact identity, branch-free and SIMD-friendly
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class ActivationDef:
    value: Callable  # z -> a
    d1: Callable     # (z, a) -> a'
    d2: Callable     # (z, a, d1) -> a''
    d3: Callable     # (z, a, d1, d2) -> a'''


# monkeypatchable by the fault-injection tests behind the gradcheck command
ELEMENTWISE_ACTIVATIONS = {
    "tanh": ActivationDef(
        value=np.tanh,
        d1=lambda z, a: 1.0 - a * a,
        d2=lambda z, a, s1: -2.0 * a * s1,
        d3=lambda z, a, s1, s2: s1 * (6.0 * a * a - 2.0),
    ),
    "softplus": ActivationDef(
        value=lambda z: np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))),
        d1=lambda z, a: _sigmoid(z),
        d2=lambda z, a, s1: s1 * (1.0 - s1),
        d3=lambda z, a, s1, s2: s2 * (1.0 - 2.0 * s1),
    ),
    "relu": ActivationDef(
        value=lambda z: np.maximum(z, 0.0),
        d1=lambda z, a: (z > 0).astype(np.float64),
        d2=lambda z, a, s1: np.zeros_like(z),
        d3=lambda z, a, s1, s2: np.zeros_like(z),
    ),
}


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def activation_values(kind: str, z):
    """Value and derivatives of one activation at preactivation vector ``z``.

    Elementwise kinds return three arrays shaped like ``z`` (value, first,
    second derivative).  Softmax returns its value vector, the Jacobian
    ``diag(s) - s s^T`` and the full second-derivative tensor
    ``T[k,a,b] = d^2 s_k / dz_a dz_b``.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ShapeError("activation input must be finite")
    if kind in ELEMENTWISE_ACTIVATIONS:
        act = ELEMENTWISE_ACTIVATIONS[kind]
        a = act.value(z)
        s1 = act.d1(z, a)
        return a, s1, act.d2(z, a, s1)
    if kind != "softmax":
        raise UsageError(f"unknown activation {kind!r}")
    if z.ndim != 1:
        raise ShapeError("softmax activation_values expects a 1-D preactivation vector")
    s = softmax(z)
    n = s.shape[0]
    eye = np.eye(n)
    jac = np.diag(s) - np.outer(s, s)
    # T[k,a,b] = s_k (delta_ka - s_a)(delta_kb - s_b) - s_k s_a (delta_ab - s_b)
    dka = eye - s[None, :]
    tensor = s[:, None, None] * dka[:, :, None] * dka[:, None, :]
    tensor -= s[:, None, None] * (s[None, :, None] * (eye - s[None, None, :]))
    return s, jac, tensor


# --- value-only forward pass -------------------------------------------------


def forward_batch(params: NetworkParams, spec: NetworkSpec, t, x) -> np.ndarray:
    """Network values at a batch of points; t is (B,), x is (B, d)."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.spatial_dim or t.shape != (x.shape[0],):
        raise ShapeError(
            f"expected t of shape (B,) and x of shape (B, {spec.spatial_dim}), "
            f"got {t.shape} and {x.shape}"
        )
    hidden, w_out, b_out = unpack_params(params, spec)
    h = np.concatenate([t[:, None], x], axis=1)
    for idx, (w, b) in enumerate(hidden):
        z = h @ w.T + b
        if spec.activation == "softmax":
            a = softmax(z, axis=1)
        else:
            a = ELEMENTWISE_ACTIVATIONS[spec.activation].value(z)
        h = a + spec.skip_weight * h if idx > 0 else a
    return h @ w_out + b_out


def forward(params: NetworkParams, spec: NetworkSpec, t: float, x) -> float:
    """Scalar network value at one point."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(forward_batch(params, spec, np.array([t]), x[None, :])[0])
