"""Shared helpers: finite-difference oracles and random net factories."""

import numpy as np
import pytest

from drlyap import DenseNet, glorot_init


def central_diff(f, x0, h=1e-6):
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def random_net(rng, in_dim=None, out_dim=None, max_width=8, max_hidden=3):
    """A small random-architecture net with Glorot weights and random biases."""
    n = in_dim if in_dim is not None else int(rng.integers(1, 4))
    d = out_dim if out_dim is not None else int(rng.integers(1, 3))
    depth = int(rng.integers(0, max_hidden + 1))
    hidden = [int(rng.integers(1, max_width + 1)) for _ in range(depth)]
    net = glorot_init([n, *hidden, d], seed=int(rng.integers(0, 2 ** 31)))
    # glorot zeroes the biases; randomize them so tests exercise that path
    flat = net.flatten()
    flat += 0.1 * rng.standard_normal(flat.size)
    net.set_flat(flat)
    return net


def scalar_chain_net(w, out_weight=1.0, b_hidden=0.0, b_out=0.0):
    """The 1-1-1 net x -> out_weight * tanh(w x + b_hidden) + b_out."""
    return DenseNet([1, 1, 1],
                    weights=[np.array([[w]]), np.array([[out_weight]])],
                    biases=[np.array([b_hidden]), np.array([b_out])])


def linear_system(a=-1.0):
    """Planar xdot = a x with an ignored scalar control and W identically 0.

    With V = alpha |x|^2 the decrease condition has the closed form
    2 a alpha |x|^2 + gamma |x|, so loss and margin values are checkable
    by hand.
    """
    from drlyap import UncertainSystem

    def f(x, u):
        return a * np.asarray(x, dtype=np.float64)

    def W(x, u):
        x = np.asarray(x, dtype=np.float64)
        return np.zeros(x.shape[:-1] + (2, 1))

    return UncertainSystem(
        name="linear", n=2, m=1, k=1, f=f, W=W,
        domain=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
        input_bounds=np.array([[-1.0, 1.0]]),
        equilibrium=np.zeros(2))


def annulus_states(rng, count, r_min=0.1, r_max=1.4):
    """States with norms in [r_min, r_max], uniform angle and radius."""
    ang = rng.uniform(0.0, 2.0 * np.pi, size=count)
    rad = rng.uniform(r_min, r_max, size=count)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
