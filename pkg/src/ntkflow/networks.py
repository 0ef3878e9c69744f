"""Polynomial-layer networks: forward passes, parameter Jacobians, squared loss.

Networks are compositions of typed layers (dense affine, residual affine,
graph-convolution) with a shared scalar activation applied after every layer
except the last.  Parameters live in one flat vector with a deterministic
layer-major layout: each layer contributes its weight block (row-major) and
then its bias block.  Certificates and logs reference offsets into this
layout, so it is normative.

All evaluation functions are pure; Network and LayerSpec are immutable, so
per-example work may run in parallel.  The reductions that define logged
numbers (loss, loss_gradient) accumulate examples in index order so results
do not depend on worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ActivationSpec
from .datasets import Dataset, Graph

__all__ = [
    "LayerSpec",
    "Network",
    "NonFiniteStateError",
    "build_network",
    "dense_chain",
    "residual_chain",
    "gcn_chain",
    "init_params",
    "forward",
    "param_jacobian",
    "loss",
    "loss_gradient",
]


class NonFiniteStateError(RuntimeError):
    """A forward pass produced non-finite values; carries the layer index."""

    def __init__(self, layer, message=None):
        self.layer = layer
        super().__init__(message or f"non-finite values after layer {layer}")


@dataclass(frozen=True)
class LayerSpec:
    """One typed polynomial layer.

    dense:    z = W x + b            W: (out, in),  b: (out,)
    residual: z = x + W x + b        requires in_width == out_width
    gcn:      z = S X W + B          W: (in, out),  B: (m, out), S the
              normalized self-loop adjacency of `graph`
    """

    kind: str
    in_width: int
    out_width: int
    bias: bool = True
    graph: Graph | None = None

    def __post_init__(self):
        if self.kind not in ("dense", "residual", "gcn"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("layer widths must be positive")
        if self.kind == "residual" and self.in_width != self.out_width:
            raise ValueError("residual layers require in_width == out_width")
        if self.kind == "gcn" and self.graph is None:
            raise ValueError("gcn layers require a graph")


@dataclass(frozen=True)
class Network:
    """An immutable layer chain with its flat-parameter layout."""

    layers: tuple
    activation: ActivationSpec
    param_count: int
    layout: tuple  # per layer: (w_slice, w_shape, b_slice | None, b_shape | None)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    @property
    def is_gcn(self):
        return self.layers[0].kind == "gcn"


def build_network(layers, activation):
    """Assemble a Network, validating the chain and computing the layout.

    Consecutive widths must agree, gcn layers may not mix with vector
    layers, and every gcn layer must reference the same vertex count.
    """
    layers = tuple(layers)
    if len(layers) < 1:
        raise ValueError("a network needs at least one layer")
    kinds = {spec.kind for spec in layers}
    if "gcn" in kinds and kinds != {"gcn"}:
        raise ValueError("gcn layers cannot be mixed with vector layers")
    for i in range(1, len(layers)):
        if layers[i].in_width != layers[i - 1].out_width:
            raise ValueError(
                f"layer {i} expects width {layers[i].in_width}, "
                f"layer {i - 1} produces {layers[i - 1].out_width}"
            )
    if "gcn" in kinds:
        ms = {spec.graph.m for spec in layers}
        if len(ms) != 1:
            raise ValueError("all gcn layers must share one vertex count")

    layout = []
    cursor = 0
    for spec in layers:
        if spec.kind == "gcn":
            w_shape = (spec.in_width, spec.out_width)
            b_shape = (spec.graph.m, spec.out_width)
        else:
            w_shape = (spec.out_width, spec.in_width)
            b_shape = (spec.out_width,)
        w_size = int(np.prod(w_shape))
        w_slice = slice(cursor, cursor + w_size)
        cursor += w_size
        if spec.bias:
            b_size = int(np.prod(b_shape))
            b_slice = slice(cursor, cursor + b_size)
            cursor += b_size
        else:
            b_slice, b_shape = None, None
        layout.append((w_slice, w_shape, b_slice, b_shape))
    return Network(layers, activation, cursor, tuple(layout))


def dense_chain(widths, bias=True):
    """LayerSpecs for a dense chain through the given widths (N_0 .. N_L)."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    return [
        LayerSpec("dense", widths[i], widths[i + 1], bias=bias)
        for i in range(len(widths) - 1)
    ]


def residual_chain(width, depth):
    """LayerSpecs for `depth` residual layers of constant width."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    return [LayerSpec("residual", width, width) for _ in range(depth)]


def gcn_chain(widths, graph):
    """LayerSpecs for a graph-convolution chain through the given widths."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    return [
        LayerSpec("gcn", widths[i], widths[i + 1], graph=graph)
        for i in range(len(widths) - 1)
    ]


def _layer_params(net, theta, i):
    w_slice, w_shape, b_slice, b_shape = net.layout[i]
    w = theta[w_slice].reshape(w_shape)
    b = theta[b_slice].reshape(b_shape) if b_slice is not None else None
    return w, b


def init_params(net, seed):
    """Kaiming-style uniform initialization, fully determined by the seed.

    Weights are uniform on +-sqrt(6/fan_in)*gain with gain
    sqrt(2/(1+alpha^2)) for the leaky-relu family (alpha = 0 for relu) and
    gain 1 otherwise; biases are uniform on +-1/sqrt(fan_in).  Blocks are
    drawn in layout order, weights before bias, row-major.
    """
    rng = np.random.default_rng(seed)
    alpha = net.activation.init_alpha
    gain = float(np.sqrt(2.0 / (1.0 + alpha * alpha))) if alpha is not None else 1.0
    theta = np.empty(net.param_count)
    for i, spec in enumerate(net.layers):
        w_slice, w_shape, b_slice, b_shape = net.layout[i]
        fan_in = spec.in_width
        w_bound = float(np.sqrt(6.0 / fan_in)) * gain
        theta[w_slice] = rng.uniform(-w_bound, w_bound, size=w_shape).ravel()
        if b_slice is not None:
            b_bound = 1.0 / float(np.sqrt(fan_in))
            theta[b_slice] = rng.uniform(-b_bound, b_bound, size=b_shape).ravel()
    return theta


def _check_input(net, x):
    first = net.layers[0]
    if net.is_gcn:
        expected = (first.graph.m, first.in_width)
        if x.shape != expected:
            raise ValueError(f"gcn input shape {x.shape} != {expected}")
    else:
        if x.shape != (first.in_width,):
            raise ValueError(f"input shape {x.shape} != ({first.in_width},)")


def _forward_cache(net, theta, x):
    """Forward pass retaining per-layer inputs and pre-activations."""
    value = np.asarray(x, dtype=float)
    _check_input(net, value)
    depth = net.depth
    inputs, preacts = [], []
    for i, spec in enumerate(net.layers):
        w, b = _layer_params(net, theta, i)
        inputs.append(value)
        # overflow here is reported as a layer failure, not a numpy warning
        with np.errstate(over="ignore", invalid="ignore"):
            if spec.kind == "dense":
                z = w @ value
                if b is not None:
                    z = z + b
            elif spec.kind == "residual":
                z = value + w @ value
                if b is not None:
                    z = z + b
            else:  # gcn
                z = spec.graph.norm_adjacency @ (value @ w)
                if b is not None:
                    z = z + b
        if not np.all(np.isfinite(z)):
            raise NonFiniteStateError(i)
        preacts.append(z)
        value = net.activation.eval(z) if i < depth - 1 else z
    return value, inputs, preacts


def forward(net, theta, x):
    """f(x, theta): the layer composition with the activation between layers."""
    value, _, _ = _forward_cache(net, theta, x)
    return value


def _backward(net, theta, inputs, preacts, seed):
    """Reverse-mode sweep.

    `seed` holds K adjoints of the network output: shape (K, out) for vector
    chains or (K, m, out) for gcn chains.  Returns the (K, P) array whose
    row k is seed_k^T (d output / d theta).
    """
    act = net.activation
    K = seed.shape[0]
    grad = np.zeros((K, net.param_count))
    delta = seed
    for i in range(net.depth - 1, -1, -1):
        spec = net.layers[i]
        w, _ = _layer_params(net, theta, i)
        w_slice, _, b_slice, _ = net.layout[i]
        a = inputs[i]
        if spec.kind == "gcn":
            sa = spec.graph.norm_adjacency @ a  # (m, in)
            grad[:, w_slice] = np.einsum("mi,kmo->kio", sa, delta).reshape(K, -1)
            if b_slice is not None:
                grad[:, b_slice] = delta.reshape(K, -1)
            if i > 0:
                tmp = np.einsum("kmo,io->kmi", delta, w)
                delta = np.einsum("vm,kvi->kmi", spec.graph.norm_adjacency, tmp)
        else:
            grad[:, w_slice] = np.einsum("ko,i->koi", delta, a).reshape(K, -1)
            if b_slice is not None:
                grad[:, b_slice] = delta
            if i > 0:
                back = delta @ w
                if spec.kind == "residual":
                    back = back + delta
                delta = back
        if i > 0:
            delta = delta * act.deriv(preacts[i - 1])
    return grad


def param_jacobian(net, theta, x):
    """d f(x, theta) / d theta as a (P, K) matrix, K the output size.

    Column k is the parameter gradient of output component k, accumulated
    in reverse mode with the activation's right-hand derivative; exact for
    the pieces containing the pre-activations.  For gcn chains the output
    matrix is flattened row-major, so K = m * out_width.
    """
    out, inputs, preacts = _forward_cache(net, theta, x)
    if net.is_gcn:
        m, width = out.shape
        K = m * width
        seed = np.eye(K).reshape(K, m, width)
    else:
        K = out.size
        seed = np.eye(K)
    return _backward(net, theta, inputs, preacts, seed).T


def _check_dataset(net, data):
    first = net.layers[0]
    if net.is_gcn:
        if data.N != first.in_width or data.M != net.out_width:
            raise ValueError(
                f"dataset dims ({data.N}->{data.M}) do not match network "
                f"({first.in_width}->{net.out_width})"
            )
        if first.graph.m != data.n:
            raise ValueError(
                f"gcn vertex count {first.graph.m} != dataset rows {data.n}"
            )
    else:
        if data.N != net.in_width or data.M != net.out_width:
            raise ValueError(
                f"dataset dims ({data.N}->{data.M}) do not match network "
                f"({net.in_width}->{net.out_width})"
            )


def loss(net, theta, data):
    """Half the summed squared residual over the dataset; zero iff exact fit."""
    _check_dataset(net, data)
    theta = np.asarray(theta, dtype=float)
    if net.is_gcn:
        f = forward(net, theta, data.inputs)
        return 0.5 * float(np.sum((f - data.labels) ** 2))
    total = 0.0
    for x, y in zip(data.inputs, data.labels):
        f = forward(net, theta, x)
        total += 0.5 * float(np.sum((f - y) ** 2))
    return total


def loss_gradient(net, theta, data):
    """Gradient of `loss`: the Jacobian-weighted residual sum, example-major.

    Equals sum_j J(x_j) (f(x_j) - y_j) with the j sum taken in dataset
    order, reproducing the same floats regardless of parallelism.
    """
    _check_dataset(net, data)
    theta = np.asarray(theta, dtype=float)
    if net.is_gcn:
        out, inputs, preacts = _forward_cache(net, theta, data.inputs)
        seed = (out - data.labels)[None, :, :]
        return _backward(net, theta, inputs, preacts, seed)[0]
    grad = np.zeros(net.param_count)
    for x, y in zip(data.inputs, data.labels):
        out, inputs, preacts = _forward_cache(net, theta, x)
        seed = (out - y)[None, :]
        grad += _backward(net, theta, inputs, preacts, seed)[0]
    return grad
