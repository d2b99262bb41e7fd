"""Control-affine systems with sampled model uncertainty.

A system is xdot = f(x, u) + W(x, u) xi with the uncertain parameter xi
entering affinely through the columns of W.  Both f and W are written
against the autodiff ops, so they evaluate eagerly on arrays and record
on tape Vars; states use equilibrium-shifted coordinates so that the
origin is the target and f(0, 0) = 0, W(0, 0) = 0.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError


@dataclass
class UncertainSystem:
    """Control-affine dynamics with affine parametric uncertainty.

    f:  (x, u) -> xdot, batched over leading axes, shape (..., n)
    W:  (x, u) -> uncertainty input matrix, shape (..., n, k)
    exact_dynamics: optional ground-truth model (x, u, xi) -> xdot used to
        simulate the real closed loop when f + W xi is only a first-order
        expansion in xi.
    equilibrium: location of the shifted origin in original coordinates
        (informational; all computations run in shifted coordinates).
    angle_wrap_dims: state coordinates that live on a circle, used by
        convergence metrics only, never inside the dynamics.
    """

    name: str
    n: int
    m: int
    k: int
    f: Callable
    W: Callable
    domain: np.ndarray
    input_bounds: np.ndarray
    equilibrium: np.ndarray
    angle_wrap_dims: tuple = ()
    exact_dynamics: Optional[Callable] = None

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=np.float64)
        self.input_bounds = np.asarray(self.input_bounds, dtype=np.float64)
        self.equilibrium = np.asarray(self.equilibrium, dtype=np.float64)
        if self.domain.shape != (self.n, 2):
            raise ShapeError("domain must be (n, 2) lower/upper bounds")
        if self.input_bounds.shape != (self.m, 2):
            raise ShapeError("input_bounds must be (m, 2)")
        if np.any(self.domain[:, 0] >= self.domain[:, 1]):
            raise ConfigError("domain lower bounds must be below uppers")


def eval_uncertain_dynamics(sys, x, u, xi):
    """xdot = f(x, u) + W(x, u) @ xi for plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[-1] != sys.k:
        raise ShapeError(f"xi must have trailing dim {sys.k}")
    fv = sys.f(x, u)
    Wv = sys.W(x, u)
    return fv + (Wv @ xi[..., None])[..., 0]


def rigid_body_origin_residual(sys):
    """max(|f(0,0)|, |W(0,0)|): zero for a well-posed shifted system."""
    x0 = np.zeros(sys.n)
    u0 = np.zeros(sys.m)
    return max(float(np.max(np.abs(sys.f(x0, u0)))),
               float(np.max(np.abs(sys.W(x0, u0)))))


def sample_domain(sys, count, delta, rng):
    """Uniform states over the domain box with the delta-ball removed.

    Points with norm strictly greater than delta are kept.  Errors out if
    the ball swallows the sampling region.
    """
    lo = sys.domain[:, 0]
    hi = sys.domain[:, 1]
    corners_norm = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
    if corners_norm <= delta:
        raise ConfigError("delta-ball covers the entire sampling domain")
    out = []
    have = 0
    attempts = 0
    while have < count:
        batch = rng.uniform(lo, hi, size=(max(count - have, 64), sys.n))
        keep = batch[np.linalg.norm(batch, axis=1) > delta]
        out.append(keep)
        have += len(keep)
        attempts += 1
        if attempts > 10000:
            raise ConfigError("delta-ball rejects nearly all of the domain")
    return np.concatenate(out, axis=0)[:count]


@dataclass
class XiDistribution:
    """Independent per-coordinate distribution for the uncertain parameter.

    Each coordinate is one of
      {"kind": "uniform", "low": a, "high": b}
      {"kind": "normal", "mean": mu, "std": sigma}
      {"kind": "point", "value": v}
    """

    coords: list

    def __post_init__(self):
        for c in self.coords:
            kind = c.get("kind")
            if kind == "uniform":
                if not c["low"] < c["high"]:
                    raise ConfigError("uniform needs low < high")
            elif kind == "normal":
                if not c["std"] > 0:
                    raise ConfigError("normal needs std > 0")
            elif kind == "point":
                if "value" not in c:
                    raise ConfigError("point needs a value")
            else:
                raise ConfigError(f"unknown distribution kind {kind!r}")

    @property
    def dim(self):
        return len(self.coords)

    def sample(self, rng, count):
        cols = []
        for c in self.coords:
            if c["kind"] == "uniform":
                cols.append(rng.uniform(c["low"], c["high"], size=count))
            elif c["kind"] == "normal":
                cols.append(rng.normal(c["mean"], c["std"], size=count))
            else:
                cols.append(np.full(count, float(c["value"])))
        return np.stack(cols, axis=1)

    def support_bound(self):
        """Known bound on |xi| per coordinate, or None if unbounded."""
        bounds = []
        for c in self.coords:
            if c["kind"] == "uniform":
                bounds.append(max(abs(c["low"]), abs(c["high"])))
            elif c["kind"] == "point":
                bounds.append(abs(c["value"]))
            else:
                return None
        return float(np.linalg.norm(bounds))


@dataclass
class UncertaintySampleSet:
    """Offline draws of the uncertain parameter, one row per sample."""

    samples: np.ndarray
    xi_bound: Optional[float] = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))

    @property
    def count(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def bound(self):
        """Bound on |xi| used by the slack analysis: the declared support
        bound when available, otherwise the largest drawn sample norm."""
        if self.xi_bound is not None:
            return float(self.xi_bound)
        return float(np.max(np.linalg.norm(self.samples, axis=1)))

    @classmethod
    def draw(cls, distribution, count, seed):
        rng = np.random.default_rng(seed)
        samples = distribution.sample(rng, count)
        return cls(samples=samples, xi_bound=distribution.support_bound())


def pendulum(mass=1.0, length=1.0, damping=0.13, gravity=9.81):
    """Inverted pendulum about the upright position.

    State (theta, thetadot) with theta = 0 upright; torque input.  The
    uncertain parameters are an additive mass offset xi1 and a damping
    offset xi2; W holds the first-order sensitivities of the dynamics to
    both, and exact_dynamics evaluates the true perturbed model.
    """
    m0, l0, b0, g0 = float(mass), float(length), float(damping), float(gravity)
    ml2 = m0 * l0 * l0

    def f(x, u):
        x = np.asarray(x, dtype=np.float64)
        theta = x[..., 0]
        thetadot = x[..., 1]
        torque = u[..., 0]
        acc = (m0 * g0 * l0 * np.sin(theta) - b0 * thetadot) / ml2 + torque / ml2
        return ad.stack([thetadot, acc], axis=-1)

    def W(x, u):
        x = np.asarray(x, dtype=np.float64)
        thetadot = x[..., 1]
        torque = u[..., 0]
        zero = np.zeros_like(thetadot)
        # d(xdot)/d(mass) and d(xdot)/d(damping) at the nominal parameters
        col_mass = (b0 * thetadot - torque) / (m0 * m0 * l0 * l0)
        col_damp = -thetadot / ml2
        top = ad.stack([zero, zero], axis=-1)
        bottom = ad.stack([col_mass, col_damp], axis=-1)
        return ad.stack([top, bottom], axis=-2)

    def exact(x, u, xi):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        xi = np.asarray(xi, dtype=np.float64)
        theta = x[..., 0]
        thetadot = x[..., 1]
        torque = u[..., 0]
        mm = m0 + xi[..., 0]
        bb = b0 + xi[..., 1]
        acc = (mm * g0 * l0 * np.sin(theta) - bb * thetadot + torque) / (mm * l0 * l0)
        return np.stack([thetadot, acc], axis=-1)

    return UncertainSystem(
        name="pendulum",
        n=2, m=1, k=2,
        f=f, W=W,
        domain=np.array([[0.0, 2.0 * np.pi], [-8.0, 8.0]]),
        input_bounds=np.array([[-15.0, 15.0]]),
        equilibrium=np.zeros(2),
        angle_wrap_dims=(0,),
        exact_dynamics=exact,
    )


def mountain_car(power=0.0015):
    """Continuous mountain car in coordinates shifted to the hill peak.

    Original dynamics: xdot = v, vdot = -0.0025 cos(3 x) + (p + xi) u with
    the goal equilibrium at x = pi/6 (where cos(3x) = 0).  The shifted
    state is (x - pi/6, v).  xi perturbs the engine power and enters the
    dynamics linearly, so f + W xi is already exact.
    """
    p0 = float(power)
    peak = np.pi / 6.0

    def f(z, u):
        z = np.asarray(z, dtype=np.float64)
        pos = z[..., 0]
        vel = z[..., 1]
        force = u[..., 0]
        acc = -0.0025 * np.cos(3.0 * (pos + peak)) + p0 * force
        return ad.stack([vel, acc], axis=-1)

    def W(z, u):
        z = np.asarray(z, dtype=np.float64)
        zero = np.zeros_like(z[..., 0])
        top = ad.stack([zero], axis=-1)
        bottom = ad.stack([u[..., 0]], axis=-1)
        return ad.stack([top, bottom], axis=-2)

    def exact(z, u, xi):
        z = np.asarray(z, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        xi = np.asarray(xi, dtype=np.float64)
        pos = z[..., 0]
        vel = z[..., 1]
        force = u[..., 0]
        acc = -0.0025 * np.cos(3.0 * (pos + peak)) + (p0 + xi[..., 0]) * force
        return np.stack([vel, acc], axis=-1)

    return UncertainSystem(
        name="mountain_car",
        n=2, m=1, k=1,
        f=f, W=W,
        domain=np.array([[-2.0 - peak, 2.0 - peak], [-0.15, 0.15]]),
        input_bounds=np.array([[-2.0, 2.0]]),
        equilibrium=np.array([peak, 0.0]),
        angle_wrap_dims=(),
        exact_dynamics=exact,
    )
