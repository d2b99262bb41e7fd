"""Certificate candidate V and controller built from two dense nets.

V(x) = |phi1(x) - phi1(0)|^2 + alpha_hat |x|^2       (positive definite
by construction, V(0) = 0), and the controller is phi2(x) - phi2(0)
clamped to the input bounds, so pi(0) = 0 exactly.

The *_expr helpers are polymorphic over plain arrays and tape Vars; the
module-level V / grad_V / controller / V_dot functions are the eager
evaluation surface used by verification and simulation (hard input
clamp, the system's runtime behavior).
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .network import DenseNet, apply_net, apply_net_multidirectional

PAIR_FORMAT_VERSION = 1


@dataclass
class LyapunovPair:
    """Candidate certificate net phi1 and controller net phi2 plus the
    scalars that fix their meaning.

    smooth_clamp selects saturation behavior during training only;
    simulation and verification always hard-clamp the input.
    """

    phi1: DenseNet
    phi2: DenseNet
    alpha_hat: float = 0.1
    gamma: float = 0.1
    delta: float = 0.1
    input_bounds: np.ndarray = None
    smooth_clamp: bool = True

    def __post_init__(self):
        if self.input_bounds is None:
            raise ConfigError("input_bounds are required")
        self.input_bounds = np.asarray(self.input_bounds, dtype=np.float64)
        if self.input_bounds.ndim != 2 or self.input_bounds.shape[1] != 2:
            raise ShapeError("input_bounds must be (m, 2)")
        if self.phi1.in_dim != self.phi2.in_dim:
            raise ShapeError("phi1 and phi2 must share the input dimension")
        if self.phi2.out_dim != self.input_bounds.shape[0]:
            raise ShapeError("phi2 output dim must match the input bounds")
        if self.alpha_hat <= 0:
            raise ConfigError("alpha_hat must be positive")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")

    @property
    def n(self):
        return self.phi1.in_dim


def smooth_saturate(raw, bounds):
    """C1 odd-at-zero saturation into (lo, hi) per input coordinate.

    For symmetric bounds this is hi * tanh(raw / hi).  Asymmetric bounds
    use the matching one-sided scale so that saturate(0) = 0 holds.
    """
    lo = bounds[:, 0]
    hi = bounds[:, 1]
    pos = ad.mul(hi, ad.tanh(ad.div(ad.relu(raw), hi)))
    neg = ad.mul(-lo, ad.tanh(ad.div(ad.relu(ad.neg(raw)), -lo)))
    return ad.sub(pos, neg)


def controller_expr(x, weights, biases, bounds, smooth):
    """phi2(x) - phi2(0) pushed through saturation (smooth) or a hard
    clamp; polymorphic in the parameters."""
    n = np.shape(ad.val(x))[-1]
    raw = ad.sub(apply_net(x, weights, biases),
                 apply_net(np.zeros((1, n)), weights, biases))
    if smooth:
        return smooth_saturate(raw, bounds)
    return ad.clamp(raw, bounds[:, 0], bounds[:, 1])


def value_grad_expr(x, weights, biases, alpha_hat):
    """V and its input gradient as one expression.

    x is a constant batch (M, n); parameters may be tape Vars.  Uses the
    directional-derivative network once per input coordinate, so reverse
    mode through the result yields parameter gradients of any scalar
    built from grad V.
    """
    x = np.asarray(x, dtype=np.float64)
    M, n = x.shape
    phi0 = apply_net(np.zeros((1, n)), weights, biases)
    dirs = np.broadcast_to(np.eye(n), (M, n, n))
    phi_x, t = apply_net_multidirectional(x, dirs, weights, biases)
    diff = ad.sub(phi_x, phi0)
    # row a of t is J e_a, so sum_d diff_d t[:, a, d] yields (J^T diff)_a
    jt_diff = ad.sum_(ad.mul(ad.expand_dims(diff, 1), t), axis=2)
    grad = ad.add(ad.mul(2.0, jt_diff), 2.0 * alpha_hat * x)
    value = ad.add(ad.sum_(ad.square(diff), axis=1),
                   alpha_hat * np.sum(x * x, axis=1))
    return value, grad


def vdot_terms_expr(x, u, grad_v, sys):
    """Nominal derivative grad_V . f and the vector W^T grad_V.

    Returns (vdot_nominal (M,), wtv (M, k)).  V_dot under a sample xi is
    vdot_nominal + wtv @ xi, and |wtv| is the local Lipschitz constant of
    V_dot in xi.
    """
    fv = sys.f(x, u)
    Wv = sys.W(x, u)
    vdot_nom = ad.sum_(ad.mul(grad_v, fv), axis=-1)
    wtv = ad.sum_(ad.mul(Wv, ad.expand_dims(grad_v, -1)), axis=-2)
    return vdot_nom, wtv


def V(pair, x):
    """Certificate value at x, batched over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    flat = xb.reshape(-1, pair.n)
    diff = pair.phi1.forward(flat) - pair.phi1.forward(np.zeros(pair.n))
    out = np.sum(diff * diff, axis=-1) + pair.alpha_hat * np.sum(flat * flat, axis=-1)
    out = out.reshape(xb.shape[:-1])
    return float(out[0]) if single else out


def grad_V(pair, x):
    """Gradient of V: 2 J^T (phi1(x) - phi1(0)) + 2 alpha_hat x."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    diff = pair.phi1.forward(xb) - pair.phi1.forward(np.zeros(pair.n))
    J = pair.phi1.input_jacobian(xb)
    grad = 2.0 * np.einsum("...dn,...d->...n", J, diff) + 2.0 * pair.alpha_hat * xb
    return grad[0] if single else grad


def controller(pair, x):
    """Control input pi(x), hard-clamped to the input bounds."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    raw = pair.phi2.forward(xb) - pair.phi2.forward(np.zeros(pair.n))
    u = np.clip(raw, pair.input_bounds[:, 0], pair.input_bounds[:, 1])
    return u[0] if single else u


def V_dot(pair, sys, x, xi=None):
    """Time derivative of V along the closed loop under parameter xi.

    xi = None evaluates the nominal model (xi = 0).  Affine in xi:
    grad_V . (f(x, pi(x)) + W(x, pi(x)) xi).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    u = controller(pair, xb)
    g = grad_V(pair, xb)
    vdot_nom, wtv = vdot_terms_expr(xb, u, g, sys)
    if xi is None:
        out = vdot_nom
    else:
        xi = np.asarray(xi, dtype=np.float64)
        out = vdot_nom + wtv @ xi
    return float(out[0]) if single else out


def lipschitz_term(pair, sys, x):
    """|W(x, pi(x))^T grad_V(x)|: the pointwise Lipschitz constant of
    V_dot with respect to xi."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    u = controller(pair, xb)
    g = grad_V(pair, xb)
    _, wtv = vdot_terms_expr(xb, u, g, sys)
    out = np.linalg.norm(wtv, axis=-1)
    return float(out[0]) if single else out


def save_pair(pair, prefix):
    """Write {prefix}_phi1.json, {prefix}_phi2.json and {prefix}_pair.json."""
    os.makedirs(os.path.dirname(os.path.abspath(str(prefix))), exist_ok=True)
    pair.phi1.save(f"{prefix}_phi1.json")
    pair.phi2.save(f"{prefix}_phi2.json")
    header = {
        "format_version": PAIR_FORMAT_VERSION,
        "alpha_hat": pair.alpha_hat,
        "gamma": pair.gamma,
        "delta": pair.delta,
        "input_bounds": pair.input_bounds.tolist(),
        "smooth_clamp": bool(pair.smooth_clamp),
    }
    with open(f"{prefix}_pair.json", "w") as fh:
        json.dump(header, fh)


def load_pair(prefix):
    with open(f"{prefix}_pair.json") as fh:
        header = json.load(fh)
    if header.get("format_version") != PAIR_FORMAT_VERSION:
        raise ConfigError("unsupported pair format version")
    return LyapunovPair(
        phi1=DenseNet.load(f"{prefix}_phi1.json"),
        phi2=DenseNet.load(f"{prefix}_phi2.json"),
        alpha_hat=header["alpha_hat"],
        gamma=header["gamma"],
        delta=header["delta"],
        input_bounds=np.asarray(header["input_bounds"]),
        smooth_clamp=header["smooth_clamp"],
    )
