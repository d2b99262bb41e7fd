"""Loss construction and the training loop.

All losses are hinge penalties on robust stability margins evaluated at
sampled states; gradients flow through the certificate gradient, the
controller, and the dynamics via the tape.  Training is full-batch Adam
by default and bit-reproducible given a seed.
"""

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .lyapunov import (LyapunovPair, controller_expr, value_grad_expr,
                       vdot_terms_expr)
from .network import GradTape, glorot_init
from .optim import AdamState, adam_step
from .systems import sample_domain

LOSS_KINDS = ("nominal", "dr_uniform", "dr_pointwise", "dr_exponential")


@dataclass
class TrainConfig:
    """Everything the training loop needs besides the system itself."""

    loss_kind: str = "nominal"
    M: int = 3600
    epochs: int = 2000
    learning_rate: float = 0.002
    seed: int = 0
    gamma: float = 0.1
    delta: float = 0.1
    alpha_hat: float = 0.1
    r: float = 0.0
    epsilon: float = 0.1
    exp_alpha: float = 0.1
    loss_tol: float = 1e-6
    phi1_hidden: tuple = (64, 64)
    phi2_hidden: tuple = (64, 64)
    phi1_out: int = 1
    smooth_clamp: bool = True
    batch_size: Optional[int] = None
    warm_start: Optional[str] = None

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
        for name in ("M", "epochs", "learning_rate", "gamma", "delta",
                     "alpha_hat", "epsilon", "phi1_out"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.r < 0:
            raise ConfigError("r must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        self.phi1_hidden = tuple(int(w) for w in self.phi1_hidden)
        self.phi2_hidden = tuple(int(w) for w in self.phi2_hidden)


def _split_leaves(pair):
    leaves1 = pair.phi1.param_vars()
    leaves2 = pair.phi2.param_vars()
    return leaves1, leaves2


def _loss_expr(pair, sys, states, kind, spec=None, exp_alpha=None):
    """Record the selected loss over the pair's parameters.

    Returns (loss Var, leaves) with leaves ordered [phi1..., phi2...].
    """
    X = np.asarray(states, dtype=np.float64)
    leaves1, leaves2 = _split_leaves(pair)
    w1, b1 = leaves1[0::2], leaves1[1::2]
    w2, b2 = leaves2[0::2], leaves2[1::2]

    v_val, grad_v = value_grad_expr(X, w1, b1, pair.alpha_hat)
    u = controller_expr(X, w2, b2, pair.input_bounds, pair.smooth_clamp)
    gnorm = pair.gamma * np.linalg.norm(X, axis=1)

    if kind == "nominal":
        fv = sys.f(X, u)
        vdot_nom = ad.sum_(ad.mul(grad_v, fv), axis=-1)
        loss = ad.mean_(ad.relu(ad.add(vdot_nom, gnorm)))
        return loss, leaves1 + leaves2

    if spec is None:
        raise ConfigError("robust losses require an ambiguity spec")
    vdot_nom, wtv = vdot_terms_expr(X, u, grad_v, sys)
    Xi = spec.samples.samples
    H = ad.add(ad.expand_dims(vdot_nom, 1), ad.matmul(wtv, Xi.T))
    lip = ad.norm(wtv, axis=1)
    scale = spec.radius / spec.epsilon

    if kind == "dr_uniform":
        if spec.epsilon > 1.0 / spec.N + 1e-12:
            raise ConfigError(
                "the uniform robust loss requires epsilon <= 1/N; "
                "use loss_kind 'dr_pointwise' for larger risk tolerances")
        inner = ad.mean_(ad.add(H, gnorm[:, None]), axis=0)
        loss = ad.relu(ad.add(ad.mul(scale, ad.amax(lip)), ad.amax(inner)))
        return loss, leaves1 + leaves2

    margins = ad.add(ad.add(ad.mul(scale, lip), ad.amax(H, axis=1)), gnorm)
    if kind == "dr_exponential":
        if exp_alpha is None or exp_alpha <= 0:
            raise ConfigError("the exponential loss needs exp_alpha > 0")
        margins = ad.add(margins, ad.mul(exp_alpha, v_val))
    elif kind != "dr_pointwise":
        raise ConfigError(f"unknown loss kind {kind!r}")
    loss = ad.mean_(ad.relu(margins))
    return loss, leaves1 + leaves2


def _loss_and_grad(pair, sys, states, kind, spec=None, exp_alpha=None):
    loss, leaves = _loss_expr(pair, sys, states, kind, spec, exp_alpha)
    tape = GradTape(loss, leaves)
    grad = tape.gradient()
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericError("loss became non-finite")
    return value, grad


def nominal_loss(pair, sys, states):
    """Mean hinge of the nominal decrease condition,
    (1/M) sum (Vdot(x_i) + gamma |x_i|)_+, with parameter gradients."""
    return _loss_and_grad(pair, sys, states, "nominal")


def dr_uniform_loss(pair, sys, spec, states):
    """Hinge of the aggregate robust condition: (r/eps) max_i lip(x_i)
    plus the worst sample-average margin over uncertainty draws.

    Valid for epsilon <= 1/N, where the robust condition reduces to the
    worst-sample form."""
    return _loss_and_grad(pair, sys, states, "dr_uniform", spec=spec)


def dr_pointwise_loss(pair, sys, spec, states):
    """Mean hinge of the per-state robust margin,
    (1/M) sum ((r/eps) lip(x_i) + max_j Vdot(x_i, xi_j) + gamma |x_i|)_+."""
    return _loss_and_grad(pair, sys, states, "dr_pointwise", spec=spec)


def dr_exponential_loss(pair, sys, spec, states, exp_alpha):
    """Pointwise robust loss with the extra alpha V(x) decrease-rate term."""
    return _loss_and_grad(pair, sys, states, "dr_exponential", spec=spec,
                          exp_alpha=exp_alpha)


@dataclass
class TrainLog:
    """Per-epoch trace plus convergence bookkeeping."""

    losses: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    reached_tol_epoch: Optional[int] = None
    best_epoch: int = 0
    best_loss: float = float("inf")
    warning: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "wall_ms"])
            for e, (lv, ms) in enumerate(zip(self.losses, self.wall_ms)):
                writer.writerow([e, repr(lv), f"{ms:.3f}"])


def derive_seeds(seed, count):
    """Deterministic integer child seeds for sub-streams."""
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2 ** 63 - 1, size=count)]


def init_pair(config, sys):
    """Fresh pair with seeded Glorot nets sized for the system."""
    s_phi1, s_phi2 = derive_seeds(config.seed, 3)[1:]
    phi1 = glorot_init([sys.n, *config.phi1_hidden, config.phi1_out], s_phi1)
    phi2 = glorot_init([sys.n, *config.phi2_hidden, sys.m], s_phi2)
    return LyapunovPair(phi1=phi1, phi2=phi2, alpha_hat=config.alpha_hat,
                        gamma=config.gamma, delta=config.delta,
                        input_bounds=sys.input_bounds,
                        smooth_clamp=config.smooth_clamp)


def train(config, sys, spec=None, states=None, start_pair=None):
    """Seeded sampling, Adam epochs, early stop at loss <= loss_tol.

    start_pair (or config.warm_start, a saved-pair prefix) initializes the
    parameters; otherwise both nets are Glorot-initialized from seeds
    derived from config.seed.  Returns (pair, TrainLog).  If the loss
    never reaches the tolerance the best-seen parameters are restored and
    the log carries a warning flag.
    """
    if states is None:
        s_states = derive_seeds(config.seed, 3)[0]
        states = sample_domain(sys, config.M, config.delta,
                               np.random.default_rng(s_states))
    states = np.asarray(states, dtype=np.float64)

    if start_pair is not None:
        pair = LyapunovPair(phi1=start_pair.phi1.copy(),
                            phi2=start_pair.phi2.copy(),
                            alpha_hat=config.alpha_hat, gamma=config.gamma,
                            delta=config.delta, input_bounds=sys.input_bounds,
                            smooth_clamp=config.smooth_clamp)
    elif config.warm_start is not None:
        from .lyapunov import load_pair
        loaded = load_pair(config.warm_start)
        pair = LyapunovPair(phi1=loaded.phi1, phi2=loaded.phi2,
                            alpha_hat=config.alpha_hat, gamma=config.gamma,
                            delta=config.delta, input_bounds=sys.input_bounds,
                            smooth_clamp=config.smooth_clamp)
    else:
        pair = init_pair(config, sys)

    kind = config.loss_kind
    if kind != "nominal" and spec is None:
        raise ConfigError("robust training requires an ambiguity spec")

    n1 = pair.phi1.num_params
    params = np.concatenate([pair.phi1.flatten(), pair.phi2.flatten()])
    adam = AdamState.init(params.size)
    log = TrainLog()
    best_params = params.copy()

    batch_rng = np.random.default_rng(derive_seeds(config.seed, 4)[3])

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if config.batch_size is None or config.batch_size >= config.M:
            value, grad = _loss_and_grad(pair, sys, states, kind, spec,
                                         config.exp_alpha)
            params_next, adam = adam_step(params, grad, adam,
                                          config.learning_rate)
            measured = params
        else:
            order = batch_rng.permutation(len(states))
            total = 0.0
            params_next = params
            for start in range(0, len(states), config.batch_size):
                idx = order[start:start + config.batch_size]
                bval, bgrad = _loss_and_grad(pair, sys, states[idx], kind,
                                             spec, config.exp_alpha)
                total += bval * len(idx)
                params_next, adam = adam_step(params_next, bgrad, adam,
                                              config.learning_rate)
                pair.phi1.set_flat(params_next[:n1])
                pair.phi2.set_flat(params_next[n1:])
            value = total / len(states)
            measured = params_next

        log.losses.append(value)
        log.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if value < log.best_loss:
            log.best_loss = value
            log.best_epoch = epoch
            best_params = measured.copy()
        if value <= config.loss_tol:
            log.reached_tol_epoch = epoch
            params = measured
            break
        params = params_next
        pair.phi1.set_flat(params[:n1])
        pair.phi2.set_flat(params[n1:])

    if log.reached_tol_epoch is None:
        log.warning = True
        pair.phi1.set_flat(best_params[:n1])
        pair.phi2.set_flat(best_params[n1:])
    else:
        pair.phi1.set_flat(params[:n1])
        pair.phi2.set_flat(params[n1:])
    return pair, log
