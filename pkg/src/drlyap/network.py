"""Dense feedforward networks with tanh hidden layers and a linear output.

The forward map, the input Jacobian and the directional input derivative
all share one polymorphic core (`apply_net` / `apply_net_directional`), so
the same arithmetic runs eagerly on arrays during simulation and on tape
`Var`s during training.
"""

import json

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericError, ShapeError

WEIGHTS_FORMAT_VERSION = 1


def apply_net(x, weights, biases):
    """Forward pass through tanh hidden layers and a linear output layer.

    x has shape (..., n); weights[l] has shape (out_l, in_l).  Accepts
    plain arrays or tape Vars in any argument.
    """
    z = x
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        a = ad.add(ad.matmul(z, ad.swapaxes(W, -1, -2) if isinstance(W, ad.Var) else ad.val(W).T), b)
        z = a if l == last else ad.tanh(a)
    return z


def apply_net_multidirectional(x, directions, weights, biases):
    """Forward pass that also propagates directional input derivatives.

    directions has shape (..., D, n), one input direction per row, and
    the returned tangent block has shape (..., D, d): row a is
    J(x) @ directions[..., a, :] with J the output-input Jacobian.  The
    tangent recursion through a tanh layer with pre-activation a is
    t -> (1 - tanh(a)^2) * (t W^T), and the linear output layer maps it
    with W alone; all directions ride one batched matmul.  Running
    reverse mode through this expression yields parameter gradients of
    scalars that contain the input gradient.
    """
    z = x
    t = directions
    tshape = ad.val(t).shape
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        WT = ad.swapaxes(W, -1, -2) if isinstance(W, ad.Var) else ad.val(W).T
        a = ad.add(ad.matmul(z, WT), b)
        # fold the direction axis into the batch so the tangent update is
        # one large matmul instead of many tiny batched ones
        out_w = ad.val(WT).shape[-1]
        t = ad.reshape(ad.matmul(ad.reshape(t, (-1, tshape[-1])), WT),
                       tshape[:-1] + (out_w,))
        tshape = tshape[:-1] + (out_w,)
        if l != last:
            z = ad.tanh(a)
            damp = ad.sub(1.0, ad.square(z))
            t = ad.mul(ad.expand_dims(damp, -2), t)
        else:
            z = a
    return z, t


def apply_net_directional(x, direction, weights, biases):
    """Single-direction form of apply_net_multidirectional."""
    d = ad.val(direction)
    z, t = apply_net_multidirectional(x, d[..., None, :], weights, biases)
    return z, ad.getitem(t, (Ellipsis, 0, slice(None)))


class DenseNet:
    """A fully connected network described by its layer widths.

    layer_widths = [n, h1, ..., d].  Hidden activations are tanh, the
    output layer is linear.  Parameters are kept as float64 arrays with
    weights[l] of shape (out, in).
    """

    def __init__(self, layer_widths, weights, biases, seed=None):
        layer_widths = [int(w) for w in layer_widths]
        if len(layer_widths) < 2:
            raise ShapeError("need at least an input and an output width")
        if len(weights) != len(layer_widths) - 1 or len(biases) != len(weights):
            raise ShapeError("parameter count does not match layer widths")
        for l, (W, b) in enumerate(zip(weights, biases)):
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape != (layer_widths[l + 1], layer_widths[l]):
                raise ShapeError(f"weight {l} has shape {W.shape}, "
                                 f"expected {(layer_widths[l + 1], layer_widths[l])}")
            if b.shape != (layer_widths[l + 1],):
                raise ShapeError(f"bias {l} has shape {b.shape}")
        self.layer_widths = layer_widths
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.seed = seed

    @property
    def in_dim(self):
        return self.layer_widths[0]

    @property
    def out_dim(self):
        return self.layer_widths[-1]

    @property
    def num_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"input has trailing dim {x.shape[-1]}, "
                             f"net expects {self.in_dim}")
        single = x.ndim == 1
        if single:
            x = x[None, :]
        out = apply_net(x, self.weights, self.biases)
        return out[0] if single else out

    def input_jacobian(self, x):
        """Jacobian of the output w.r.t. the input, shape (..., d, n)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        n = self.in_dim
        dirs = np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n))
        _, t = apply_net_multidirectional(x, dirs, self.weights, self.biases)
        J = np.swapaxes(t, -1, -2)  # (..., d, n)
        return J[0] if single else J

    # flat parameter vector <-> structured parameters, layer-major and
    # row-major within each layer: [W0.ravel(), b0, W1.ravel(), b1, ...]
    def flatten(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ShapeError("flat vector length does not match net")
        ofs = 0
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[l] = vec[ofs:ofs + W.size].reshape(W.shape).copy()
            ofs += W.size
            self.biases[l] = vec[ofs:ofs + b.size].copy()
            ofs += b.size
        return self

    def copy(self):
        return DenseNet(self.layer_widths,
                        [W.copy() for W in self.weights],
                        [b.copy() for b in self.biases],
                        seed=self.seed)

    def param_vars(self):
        """Tape leaves in flatten order: [W0, b0, W1, b1, ...]."""
        leaves = []
        for W, b in zip(self.weights, self.biases):
            leaves.append(ad.Var(W))
            leaves.append(ad.Var(b))
        return leaves

    def save(self, path):
        payload = {
            "format_version": WEIGHTS_FORMAT_VERSION,
            "layer_widths": self.layer_widths,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format_version") != WEIGHTS_FORMAT_VERSION:
            raise ContractError("unsupported weights format version")
        return cls(payload["layer_widths"], payload["weights"],
                   payload["biases"], seed=payload.get("seed"))


def glorot_init(layer_widths, seed):
    """Seeded Glorot-uniform weights, zero biases.

    Each weight is drawn uniformly from +-sqrt(6 / (fan_in + fan_out));
    the same seed always produces bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_widths[:-1], layer_widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(layer_widths, weights, biases, seed=seed)


class GradTape:
    """A recorded scalar computation over one or more nets' parameters.

    leaves is the flat list of parameter Vars ([W0, b0, W1, b1, ...] per
    net, nets concatenated in order) that the recorded output depends on.
    """

    def __init__(self, output, leaves):
        if not isinstance(output, ad.Var):
            raise ContractError("tape output must be a recorded Var")
        self.output = output
        self.leaves = list(leaves)

    @property
    def value(self):
        v = self.output.value
        return float(v) if v.size == 1 else v

    def gradient(self):
        """Backward pass; returns the gradient as one flat vector aligned
        with the leaves' flatten order."""
        if self.output.value.size != 1:
            raise ContractError("gradient requires a scalar tape output")
        ad.backward(self.output)
        parts = []
        for leaf in self.leaves:
            g = leaf.grad
            if g is None:
                g = np.zeros_like(leaf.value)
            parts.append(np.asarray(g, dtype=np.float64).ravel())
        return np.concatenate(parts)


def param_gradient(net, tape):
    """Gradient of a recorded scalar w.r.t. net's flattened parameters.

    The tape must have been recorded over net.param_vars() (possibly among
    other leaves); gradients are returned in flatten order.  NaNs in the
    result raise a numeric error rather than silently propagating.
    """
    g = tape.gradient()
    if g.shape[0] < net.num_params:
        raise ContractError("tape was not recorded over this net's parameters")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite parameter gradient")
    return g


def grad_of_directional_input_grad(net, x, v, direction=None):
    """Parameter gradient of s = v^T (J(x) @ direction).

    J(x) is the output-input Jacobian of the net at x, so J(x) @ direction
    is the directional derivative of the output along `direction` in input
    space, and v weights its components.  For a one-dimensional input the
    direction argument is redundant and defaults to the unit direction;
    more generally it defaults to the all-ones input direction.

    Returns (s, ds_dtheta) with ds_dtheta aligned with net.flatten().
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] != 1:
        raise ShapeError("expected a single evaluation point")
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if v.shape != (net.out_dim,):
        raise ShapeError(f"v must have the net's output dimension {net.out_dim}")
    if direction is None:
        direction = np.ones(net.in_dim)
    direction = np.broadcast_to(np.asarray(direction, dtype=np.float64), x.shape)

    leaves = net.param_vars()
    weights = leaves[0::2]
    biases = leaves[1::2]
    _, dv = apply_net_directional(x, direction, weights, biases)
    s = ad.sum_(ad.mul(dv, v[None, :]))
    tape = GradTape(s, leaves)
    grad = tape.gradient()
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient of directional derivative")
    return float(s.value), grad
