"""One-dimensional convolutional network calculus.

Architecture conventions used throughout the package:

* A signal grid is a float64 array of shape (d, J): spatial index times
  channel index.  Network inputs are grids with J = 1 and values in [0, 1].
* A convolutional layer holds a filter tensor of shape (s, J_out, J_in)
  (tap index, output channel, input channel) and a bias of shape (J_out,).
  It realizes the map  out[:, j'] = sum_j T(w[:, j', j]) @ x[:, j] + b[j'],
  where T(w) is the upper-banded matrix of `conv_matrix` (one-sided zero
  padding, stride one).
* A network is L such layers followed by ReLU activations and a final inner
  product with a (d, J) output-weight matrix:
      f(x) = <W_out, relu(conv_{L-1}(... relu(conv_0(x)) ...))>.

All values are float64; "exact" claims are meant up to round-off.  Every
function here is pure: inputs are never mutated and the returned objects
share no storage with the arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ShapeError


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} must have finite entries")
    return arr


@dataclass
class ConvLayer:
    """A convolutional layer: filter (s, J_out, J_in) plus bias (J_out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = _as_float_array(self.weights, "filter")
        self.bias = _as_float_array(self.bias, "bias")
        if self.weights.ndim != 3:
            raise ShapeError("filter must have shape (s, out_channels, in_channels)")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError("bias length must equal the filter's output channel count")

    @property
    def filter_size(self):
        return self.weights.shape[0]

    @property
    def out_channels(self):
        return self.weights.shape[1]

    @property
    def in_channels(self):
        return self.weights.shape[2]


@dataclass
class CnnParams:
    """Full parameter set of a network on [0,1]^d.

    layers[0] maps the single input channel to J channels; every later layer
    maps J to J channels; output_weights has shape (d, J).
    """

    d: int
    s: int
    layers: list
    output_weights: np.ndarray

    def __post_init__(self):
        self.output_weights = _as_float_array(self.output_weights, "output weights")
        if self.d < 2:
            raise PreconditionError("input dimension d must be at least 2")
        if not 1 <= self.s <= self.d:
            raise PreconditionError(f"filter size s={self.s} outside [1, d={self.d}]")
        if len(self.layers) < 1:
            raise PreconditionError("network must have at least one layer")
        J = self.layers[0].out_channels
        if self.layers[0].in_channels != 1:
            raise ShapeError("first layer must read the single input channel")
        for i, layer in enumerate(self.layers):
            if layer.filter_size != self.s:
                raise ShapeError(f"layer {i} filter size {layer.filter_size} != s={self.s}")
            if layer.out_channels != J:
                raise ShapeError(f"layer {i} output channels {layer.out_channels} != J={J}")
            if i > 0 and layer.in_channels != J:
                raise ShapeError(f"layer {i} input channels {layer.in_channels} != J={J}")
        if self.output_weights.shape != (self.d, J):
            raise ShapeError(
                f"output weights shape {self.output_weights.shape} != ({self.d}, {J})"
            )

    @property
    def J(self):
        return self.layers[0].out_channels

    @property
    def depth(self):
        return len(self.layers)


@dataclass
class CnnGrad:
    """Gradient of a scalar w.r.t. all parameters, mirroring CnnParams."""

    layer_weights: list
    layer_biases: list
    output_weights: np.ndarray

    def as_vector(self):
        parts = []
        for w, b in zip(self.layer_weights, self.layer_biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        parts.append(self.output_weights.ravel())
        return np.concatenate(parts)


def conv_matrix(w, d):
    """Dense d x d matrix of the one-sided-padded stride-one convolution.

    Entry (i, i+k) is w[k]; everything below the diagonal and beyond the
    band is zero, so (T w x)_i = sum_{k : i+k < d} w[k] * x[i+k] in
    0-based indexing.
    """
    w = _as_float_array(w, "filter")
    if w.ndim != 1:
        raise ShapeError("filter must be one-dimensional")
    s = w.shape[0]
    if s < 1 or s > d:
        raise PreconditionError(f"filter size {s} outside [1, d={d}]")
    T = np.zeros((d, d))
    for k in range(s):
        idx = np.arange(d - k)
        T[idx, idx + k] = w[k]
    return T


def _conv_forward(weights, bias, x):
    """Batched layer map: x (n, d, J_in) -> (n, d, J_out), pre-activation."""
    s = weights.shape[0]
    n, d, _ = x.shape
    out = np.tile(bias, (n, d, 1))
    for k in range(s):
        out[:, : d - k, :] += x[:, k:, :] @ weights[k].T
    return out


def conv_apply(layer, x):
    """Apply one convolutional layer to a (d, J_in) signal grid."""
    x = _as_float_array(x, "signal")
    if x.ndim != 2:
        raise ShapeError("signal grid must have shape (d, channels)")
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"signal has {x.shape[1]} channels, layer expects {layer.in_channels}"
        )
    if x.shape[0] < layer.filter_size:
        raise PreconditionError("signal length shorter than the filter")
    return _conv_forward(layer.weights, layer.bias, x[None])[0]


def _check_input(params, x):
    x = _as_float_array(x, "input")
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ShapeError(f"input must have {params.d} coordinates")
    return x


def activation_grids(params, x):
    """Activated grids after each layer for a batch of inputs.

    Returns a list of L arrays of shape (n, d, J); the last one is the grid
    the output weights contract against.
    """
    X = _check_input(params, x)
    a = X[:, :, None]
    grids = []
    for layer in params.layers:
        a = np.maximum(_conv_forward(layer.weights, layer.bias, a), 0.0)
        grids.append(a)
    return grids


def forward(params, x):
    """Evaluate the network. x may be a single d-vector or an (n, d) batch."""
    X = _check_input(params, x)
    a = activation_grids(params, X)[-1]
    vals = np.einsum("ndj,dj->n", a, params.output_weights)
    if np.ndim(x) == 1:
        return float(vals[0])
    return vals


def backward(params, x, dout=None):
    """Reverse-mode gradient of the network output w.r.t. all parameters.

    For a batch X of shape (n, d), `dout` (shape (n,)) weights each sample's
    contribution and the per-sample gradients are summed: the result is the
    gradient of sum_i dout[i] * f(X[i]).  With a single d-vector input the
    result is the gradient of f(x) itself.  ReLU uses subgradient 0 at 0.
    """
    X = _check_input(params, x)
    n = X.shape[0]
    if dout is None:
        dout = np.ones(n)
    else:
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != (n,):
            raise ShapeError("dout must have one entry per sample")

    pre = []
    inputs = []
    a = X[:, :, None]
    for layer in params.layers:
        inputs.append(a)
        z = _conv_forward(layer.weights, layer.bias, a)
        pre.append(z)
        a = np.maximum(z, 0.0)

    g_out = np.einsum("n,ndj->dj", dout, a)
    ga = dout[:, None, None] * params.output_weights[None, :, :]

    grad_w = [None] * params.depth
    grad_b = [None] * params.depth
    for i in range(params.depth - 1, -1, -1):
        gz = ga * (pre[i] > 0.0)
        w = params.layers[i].weights
        s = w.shape[0]
        d = X.shape[1]
        a_in = inputs[i]
        gw = np.zeros_like(w)
        ga = np.zeros_like(a_in)
        for k in range(s):
            gw[k] = np.einsum("nio,nij->oj", gz[:, : d - k, :], a_in[:, k:, :])
            ga[:, k:, :] += gz[:, : d - k, :] @ w[k]
        grad_w[i] = gw
        grad_b[i] = gz.sum(axis=(0, 1))
    return CnnGrad(grad_w, grad_b, g_out)


def layer_norm(layer):
    """Max over output channels of (1-norm of incoming filter + |bias|).

    This is the l_inf -> l_inf operator norm of the layer's affine map on
    grids with sup-norm at most one.
    """
    per_channel = np.abs(layer.weights).sum(axis=(0, 2)) + np.abs(layer.bias)
    return float(per_channel.max())


def path_norm(params):
    """Weight-constraint functional: ||W_out||_1 * prod_l max(layer_norm_l, 1)."""
    value = float(np.abs(params.output_weights).sum())
    for layer in params.layers:
        value *= max(layer_norm(layer), 1.0)
    return value


def rescale(params):
    """Renormalize so every hidden layer norm is at most one.

    Divides each layer by m_l = max(layer_norm, 1), pushes the accumulated
    product into the output weights, and corrects biases for the scale of the
    incoming activations.  By positive homogeneity of ReLU the realized
    function is unchanged, and the path norm cannot increase.
    """
    new_layers = []
    prod = 1.0
    for layer in params.layers:
        m = max(layer_norm(layer), 1.0)
        new_layers.append(
            ConvLayer(layer.weights / m, layer.bias / (prod * m))
        )
        prod *= m
    return CnnParams(params.d, params.s, new_layers, params.output_weights * prod)


def embed(params, channels=None, depth=None):
    """Re-express the network with more channels and/or more layers.

    Extra channels are wired with zero filters and biases; extra depth is
    appended as identity layers (filter (1, 0, ..., 0) on each channel
    diagonal, zero bias), which fix nonnegative grids.  The realized function
    is unchanged and the path norm does not increase.
    """
    J = params.J
    L = params.depth
    channels = J if channels is None else int(channels)
    depth_new = L if depth is None else int(depth)
    if channels < J:
        raise PreconditionError(f"target channels {channels} < current {J}")
    if depth_new < L:
        raise PreconditionError(f"target depth {depth_new} < current {L}")

    layers = []
    for i, layer in enumerate(params.layers):
        in_c = 1 if i == 0 else channels
        w = np.zeros((params.s, channels, in_c))
        w[:, :J, : layer.in_channels] = layer.weights
        b = np.zeros(channels)
        b[:J] = layer.bias
        layers.append(ConvLayer(w, b))
    for _ in range(depth_new - L):
        w = np.zeros((params.s, channels, channels))
        w[0] = np.eye(channels)
        layers.append(ConvLayer(w, np.zeros(channels)))
    W = np.zeros((params.d, channels))
    W[:, :J] = params.output_weights
    return CnnParams(params.d, params.s, layers, W)


def truncate(level, values):
    """Clamp values to [-level, level]; level must be positive."""
    if not level > 0:
        raise PreconditionError(f"truncation level must be positive, got {level}")
    return np.clip(values, -level, level) if np.ndim(values) else float(
        np.clip(values, -level, level)
    )


# -- flat parameter vector ------------------------------------------------
#
# Order: layer 0 filter entries in index order (tap, out channel, in channel),
# layer 0 bias, layer 1 filter, layer 1 bias, ..., output weights row-major.
# This order also defines the serialization layout below.


def param_vector(params):
    """Flatten all parameters into one float64 vector."""
    parts = []
    for layer in params.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.bias.ravel())
    parts.append(params.output_weights.ravel())
    return np.concatenate(parts)


def params_from_vector(vec, d, s, J, L):
    """Inverse of param_vector for the (d, s, J, L) architecture."""
    vec = np.asarray(vec, dtype=np.float64)
    layers = []
    pos = 0
    for i in range(L):
        in_c = 1 if i == 0 else J
        nw = s * J * in_c
        w = vec[pos : pos + nw].reshape(s, J, in_c)
        pos += nw
        b = vec[pos : pos + J]
        pos += J
        layers.append(ConvLayer(w.copy(), b.copy()))
    W = vec[pos : pos + d * J].reshape(d, J).copy()
    pos += d * J
    if pos != vec.shape[0]:
        raise ShapeError(f"vector length {vec.shape[0]} != expected {pos}")
    return CnnParams(d, s, layers, W)


# -- serialization ---------------------------------------------------------


def save_cnn(params, path):
    """Write parameters as self-describing text; round-trip is value-exact.

    Floats are written with repr, whose shortest decimal form recovers the
    identical IEEE double on load.
    """
    lines = [
        "cnn v1",
        f"d {params.d}",
        f"s {params.s}",
        f"J {params.J}",
        f"L {params.depth}",
    ]
    for i, layer in enumerate(params.layers):
        lines.append(f"layer {i} out {layer.out_channels} in {layer.in_channels}")
        lines.append("filter")
        for tap in layer.weights:
            lines.append(" ".join(repr(float(v)) for v in tap.ravel()))
        lines.append("bias")
        lines.append(" ".join(repr(float(v)) for v in layer.bias))
    lines.append("output")
    for row in params.output_weights:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cnn(path):
    """Read a network written by save_cnn."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    it = iter(lines)

    def expect(prefix):
        line = next(it)
        if not line.startswith(prefix):
            raise PreconditionError(f"malformed cnn file: expected {prefix!r}, got {line!r}")
        return line

    expect("cnn v1")
    d = int(expect("d ").split()[1])
    s = int(expect("s ").split()[1])
    J = int(expect("J ").split()[1])
    L = int(expect("L ").split()[1])
    layers = []
    for i in range(L):
        head = expect(f"layer {i} ").split()
        out_c, in_c = int(head[3]), int(head[5])
        expect("filter")
        w = np.empty((s, out_c, in_c))
        for tap in range(s):
            vals = [float(v) for v in next(it).split()]
            w[tap] = np.array(vals).reshape(out_c, in_c)
        expect("bias")
        b = np.array([float(v) for v in next(it).split()])
        layers.append(ConvLayer(w, b))
    expect("output")
    W = np.empty((d, J))
    for r in range(d):
        W[r] = [float(v) for v in next(it).split()]
    expect("end")
    return CnnParams(d, s, layers, W)
