"""Exact compilation of shallow ReLU networks into constrained CNNs.

A shallow network sum_i c_i * relu(a_i . x + b_i) is realized exactly on
[0,1]^d by a convolutional network whose depth, channel count and path norm
are controlled:

* a single neuron needs 3 channels and depth L0 = ceil((d-1)/(s-1)): the
  first channel sweeps the inner product a . x across the signal s-1
  coordinates per layer, the second carries its negation (so the running
  value survives ReLU via t = relu(t) - relu(-t)), and the third translates
  the raw input leftward to feed the sweep;
* a sum of N neurons needs 6 channels and depth N*L0: neurons are evaluated
  sequentially while channel 4 stores the input and channels 5/6 accumulate
  the positive and negative parts of the partial sums (both nonnegative, so
  they pass through ReLU unchanged);
* a post-composition with a scalar ReLU network g needs K+1 extra layers:
  one layer exposes relu(f) and relu(-f), then g's neurons are accumulated
  the same way.

All constructions come with explicit path-norm bounds; compile reports carry
the achieved and guaranteed values and the guarantee is asserted on every
call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cnn import CnnParams, ConvLayer, _conv_forward, layer_norm, path_norm, rescale
from .errors import PreconditionError, PropertyFailure

# channel roles in 6-channel assemblies (0-based)
_POS, _NEG, _SHIFT = 0, 1, 2
_STORE, _ACC_P, _ACC_N = 3, 4, 5


def _as_1d(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise PreconditionError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError(f"{name} must be finite")
    return arr


@dataclass
class ShallowNet:
    """sum_i coeffs[i] * relu(directions[i] . x + offsets[i]) on R^d."""

    coeffs: np.ndarray
    directions: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.coeffs = _as_1d(self.coeffs, "coeffs")
        self.offsets = _as_1d(self.offsets, "offsets")
        self.directions = np.asarray(self.directions, dtype=np.float64)
        if self.directions.ndim != 2:
            raise PreconditionError("directions must have shape (neurons, d)")
        if not np.all(np.isfinite(self.directions)):
            raise PreconditionError("directions must be finite")
        n = self.coeffs.shape[0]
        if n < 1:
            raise PreconditionError("a shallow net needs at least one neuron")
        if self.directions.shape[0] != n or self.offsets.shape[0] != n:
            raise PreconditionError("coeffs, directions, offsets must align")

    @property
    def n_neurons(self):
        return self.coeffs.shape[0]

    @property
    def d(self):
        return self.directions.shape[1]

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None] if single else x
        pre = X @ self.directions.T + self.offsets
        out = np.maximum(pre, 0.0) @ self.coeffs
        return float(out[0]) if single else out


@dataclass
class ScalarNet:
    """One-dimensional ReLU net t -> sum_k coeffs[k] * relu(slopes[k]*t + offsets[k])."""

    coeffs: np.ndarray
    slopes: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.coeffs = _as_1d(self.coeffs, "coeffs")
        self.slopes = _as_1d(self.slopes, "slopes")
        self.offsets = _as_1d(self.offsets, "offsets")
        if not (len(self.coeffs) == len(self.slopes) == len(self.offsets)):
            raise PreconditionError("coeffs, slopes, offsets must align")
        if len(self.coeffs) < 1:
            raise PreconditionError("a scalar net needs at least one neuron")

    @property
    def n_neurons(self):
        return self.coeffs.shape[0]

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        pre = np.multiply.outer(t, self.slopes) + self.offsets
        out = np.maximum(pre, 0.0) @ self.coeffs
        return float(out) if t.ndim == 0 else out


def shallow_norm(net):
    """Constraint value sum_i |c_i| (||a_i||_1 + |b_i|)."""
    return float(
        np.sum(np.abs(net.coeffs) * (np.abs(net.directions).sum(axis=1) + np.abs(net.offsets)))
    )


def scalar_norm(net):
    """Constraint value sum_k |c_k| (|a_k| + |b_k|) of a scalar net."""
    return float(np.sum(np.abs(net.coeffs) * (np.abs(net.slopes) + np.abs(net.offsets))))


def sweep_depth(d, s):
    """Layers needed to sweep one inner product across d coordinates: ceil((d-1)/(s-1))."""
    if not 2 <= s <= d:
        raise PreconditionError(f"filter size s={s} outside [2, d={d}]")
    return math.ceil((d - 1) / (s - 1))


@dataclass
class CompileReport:
    """Architecture and norm accounting for one compilation."""

    depth: int
    channels: int
    norm_achieved: float
    norm_bound: float
    sweep_depth: int

    def __post_init__(self):
        if self.norm_achieved > self.norm_bound * (1 + 1e-12) + 1e-300:
            raise PropertyFailure(
                f"compiled path norm {self.norm_achieved} exceeds bound {self.norm_bound}"
            )


@dataclass
class OpenCnn:
    """Convolutional layers without an output contraction.

    The interesting values live in designated channels of spatial row 0 of
    the final activated grid; other entries are construction byproducts.
    """

    d: int
    s: int
    layers: list

    @property
    def depth(self):
        return len(self.layers)

    def final_grid(self, X):
        """Activated grid after the last layer, shape (n, d, channels)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        a = X[:, :, None]
        for layer in self.layers:
            a = np.maximum(_conv_forward(layer.weights, layer.bias, a), 0.0)
        return a

    def norm_product(self):
        """Product of max(layer_norm, 1); the open analogue of the path norm."""
        out = 1.0
        for layer in self.layers:
            out *= max(layer_norm(layer), 1.0)
        return out


def _neuron_layers(direction, offset, s):
    """3-channel layer stack computing relu(direction . x + offset) at grid (0, 0).

    direction/offset must already be normalized to ||a||_1 + |b| <= 1 (or be
    identically zero).  The first returned layer has one input channel.
    """
    d = direction.shape[0]
    L0 = sweep_depth(d, s)
    layers = []
    if L0 == 1:
        w = np.zeros((s, 3, 1))
        w[:, _POS, 0] = direction
        layers.append(ConvLayer(w, np.array([offset, 0.0, 0.0])))
        return layers

    w = np.zeros((s, 3, 1))
    w[:, _POS, 0] = direction[:s]
    w[:, _NEG, 0] = -direction[:s]
    w[s - 1, _SHIFT, 0] = 1.0
    layers.append(ConvLayer(w, np.zeros(3)))

    for ell in range(1, L0 - 1):
        w = np.zeros((s, 3, 3))
        w[0, _POS, _POS] = 1.0
        w[0, _POS, _NEG] = -1.0
        for k in range(1, s):
            w[k, _POS, _SHIFT] = direction[ell * (s - 1) + k]
        w[:, _NEG, :] = -w[:, _POS, :]
        w[s - 1, _SHIFT, _SHIFT] = 1.0
        layers.append(ConvLayer(w, np.zeros(3)))

    w = np.zeros((s, 3, 3))
    w[0, _POS, _POS] = 1.0
    w[0, _POS, _NEG] = -1.0
    for k in range(1, s):
        idx = (L0 - 1) * (s - 1) + k
        if idx < d:
            w[k, _POS, _SHIFT] = direction[idx]
    layers.append(ConvLayer(w, np.array([offset, 0.0, 0.0])))
    return layers


def neuron_to_cnn(direction, offset, coeff, s):
    """Compile coeff * relu(direction . x + offset) into a 3-channel network.

    Exact on [0,1]^d; depth ceil((d-1)/(s-1)); output weights vanish except
    at entry (0, 0); path norm at most 3^(depth-1) * |coeff| * (||direction||_1
    + |offset|).
    """
    direction = _as_1d(direction, "direction")
    offset = float(offset)
    coeff = float(coeff)
    d = direction.shape[0]
    L0 = sweep_depth(d, s)

    mass = np.abs(direction).sum() + abs(offset)
    if mass == 0.0 or coeff == 0.0:
        layers = [ConvLayer(np.zeros((s, 3, 1)), np.zeros(3))]
        layers += [ConvLayer(np.zeros((s, 3, 3)), np.zeros(3)) for _ in range(L0 - 1)]
        return CnnParams(d, s, layers, np.zeros((d, 3)))

    layers = _neuron_layers(direction / mass, offset / mass, s)
    W = np.zeros((d, 3))
    W[0, 0] = coeff * mass
    return CnnParams(d, s, layers, W)


def _rescaled_neuron_blocks(net, s, coeff_scale):
    """Per-neuron rescaled 3-channel blocks and their scalar output weights."""
    blocks = []
    outs = []
    for i in range(net.n_neurons):
        sub = neuron_to_cnn(net.directions[i], net.offsets[i], net.coeffs[i] * coeff_scale, s)
        sub = rescale(sub)
        blocks.append(sub.layers)
        outs.append(float(sub.output_weights[0, 0]))
    return blocks, outs


def _assemble_sum_layers(net, s, coeff_scale):
    """The N*L0 six-channel layers computing coeff_scale * net(x) at grid (0, 0).

    Returns (layers, last_neuron_output_weight); partial sums over earlier
    neurons sit in channels _ACC_P / _ACC_N of row 0.
    """
    d = net.d
    L0 = sweep_depth(d, s)
    blocks, outs = _rescaled_neuron_blocks(net, s, coeff_scale)
    layers = []
    for i in range(net.n_neurons):
        for j in range(L0):
            block = blocks[i][j]
            first_of_net = i == 0 and j == 0
            transition = i > 0 and j == 0
            in_c = 1 if first_of_net else 6
            w = np.zeros((s, 6, in_c))
            b = np.zeros(6)
            b[:3] = block.bias
            if first_of_net:
                w[:, :3, 0] = block.weights[:, :, 0]
                w[0, _STORE, 0] = 1.0
            elif transition:
                w[:, :3, _STORE] = block.weights[:, :, 0]
                v_prev = outs[i - 1]
                if v_prev > 0:
                    w[0, _ACC_P, _POS] = v_prev
                elif v_prev < 0:
                    w[0, _ACC_N, _POS] = -v_prev
                w[0, _STORE, _STORE] = 1.0
                w[0, _ACC_P, _ACC_P] = 1.0
                w[0, _ACC_N, _ACC_N] = 1.0
            else:
                w[:, :3, :3] = block.weights
                w[0, _STORE, _STORE] = 1.0
                w[0, _ACC_P, _ACC_P] = 1.0
                w[0, _ACC_N, _ACC_N] = 1.0
            layers.append(ConvLayer(w, b))
    return layers, outs[-1]


def shallow_to_cnn(net, s):
    """Compile a shallow net into a 6-channel CNN, exactly, with norm control.

    Returns (params, report).  Depth is N*L0; the path norm is guaranteed to
    be at most 3^(L0+1) * N * shallow_norm(net).
    """
    d = net.d
    L0 = sweep_depth(d, s)
    N = net.n_neurons
    M = shallow_norm(net)
    R = 3.0 ** (1 - L0) / N
    prefactor = M / R if M > 0 else 0.0
    coeff_scale = R / M if M > 0 else 0.0

    layers, v_last = _assemble_sum_layers(net, s, coeff_scale)
    W = np.zeros((d, 6))
    W[0, _POS] = prefactor * v_last
    W[0, _ACC_P] = prefactor
    W[0, _ACC_N] = -prefactor
    params = CnnParams(d, s, layers, W)

    bound = 3.0 ** (L0 + 1) * N * M
    report = CompileReport(N * L0, 6, path_norm(params), bound, L0)
    return params, report


def _expose_layer(s, v_last, prefactor, pos_channel, neg_channel):
    """Layer writing relu(f) / relu(-f) of the assembled sum into two channels."""
    w = np.zeros((s, 6, 6))
    for sign, ch in ((1.0, pos_channel), (-1.0, neg_channel)):
        w[0, ch, _POS] = sign * prefactor * v_last
        w[0, ch, _ACC_P] = sign * prefactor
        w[0, ch, _ACC_N] = -sign * prefactor
    return ConvLayer(w, np.zeros(6))


def shallow_to_cnn_open(net, s):
    """Compile into layers exposing relu(f(x)) and relu(-f(x)) on the grid.

    The final activated grid holds relu(net(x)) at (row 0, channel 0) and
    relu(-net(x)) at (row 0, channel 1); channels 2-5 of row 0 are zero.
    f(x) is recovered as the difference of the two entries.
    """
    d = net.d
    L0 = sweep_depth(d, s)
    N = net.n_neurons
    M = shallow_norm(net)
    R = 3.0 ** (1 - L0) / N
    prefactor = M / R if M > 0 else 0.0
    coeff_scale = R / M if M > 0 else 0.0

    layers, v_last = _assemble_sum_layers(net, s, coeff_scale)
    layers.append(_expose_layer(s, v_last, prefactor, 0, 1))
    open_net = OpenCnn(d, s, layers)

    # the max(.,1) floor in norm_product keeps it >= 1 even for a zero net,
    # so the guarantee is the construction bound or 3, whichever is larger
    bound = max(3.0 ** (L0 + 1) * N * M, 3.0)
    report = CompileReport(N * L0 + 1, 6, open_net.norm_product(), bound, L0)
    return open_net, report


def compose_with_scalar_net(net, g, s):
    """Compile x -> g(net(x)) exactly into a 6-channel CNN.

    Depth is N*L0 + K + 1 and the path norm is at most
    36 * 3^L0 * N * shallow_norm(net) * K * scalar_norm(g).
    """
    if g.n_neurons < 1:
        raise PreconditionError("link network must have at least one neuron")
    d = net.d
    L0 = sweep_depth(d, s)
    N = net.n_neurons
    K = g.n_neurons
    M = shallow_norm(net)
    M0 = scalar_norm(g)

    R = 3.0 ** (1 - L0) / N
    prefactor = M / R if M > 0 else 0.0
    coeff_scale = R / M if M > 0 else 0.0
    layers, v_last = _assemble_sum_layers(net, s, coeff_scale)
    # expose relu(f) / relu(-f) in channels 1 and 2; channel 0 hosts g's neurons
    layers.append(_expose_layer(s, v_last, prefactor, 1, 2))

    R2 = 1.0 / K
    g_scale = R2 / M0 if M0 > 0 else 0.0
    masses = np.abs(g.slopes) + np.abs(g.offsets)
    cc = g.coeffs * masses * g_scale  # normalized coefficients, sum |cc| <= R2
    for k in range(K):
        w = np.zeros((s, 6, 6))
        b = np.zeros(6)
        if masses[k] > 0:
            slope = g.slopes[k] / (2 * masses[k])
            w[0, 0, 1] = slope
            w[0, 0, 2] = -slope
            b[0] = g.offsets[k] / (2 * masses[k])
        w[0, 1, 1] = 1.0
        w[0, 2, 2] = 1.0
        w[0, 3, 3] = 1.0
        w[0, 4, 4] = 1.0
        if k > 0:
            if cc[k - 1] > 0:
                w[0, 3, 0] = cc[k - 1]
            elif cc[k - 1] < 0:
                w[0, 4, 0] = -cc[k - 1]
        layers.append(ConvLayer(w, b))

    out_scale = 2 * M0 / R2 if M0 > 0 else 0.0
    W = np.zeros((d, 6))
    W[0, 0] = out_scale * cc[K - 1]
    W[0, 3] = out_scale
    W[0, 4] = -out_scale
    params = CnnParams(d, s, layers, W)

    bound = 36.0 * 3.0**L0 * N * M * K * M0
    if 2 * 3.0 ** (L0 - 1) * N * M < 1.0:
        # degenerate sum net: the layer-norm floors dominate the M factor
        bound = max(bound, 18.0 * K * M0 * max(3.0 ** (L0 + 1) * N * M, 3.0))
    report = CompileReport(N * L0 + K + 1, 6, path_norm(params), bound, L0)
    return params, report
