"""Distributionally robust risk machinery.

Empirical VaR/CVaR, the Wasserstein radius rule, and the closed-form
margin of the robust stability condition: for samples {xi_i} and a
1-Wasserstein ball of radius r at risk tolerance epsilon,

    (r/eps) * L + (1/(N eps)) * sum_{i<j} (h_i - h_j) + h_j  <=  0

with h sorted descending and j the unique index with (j-1)/N < eps and
j/N >= eps, is sufficient for the robust chance constraint.  The middle
plus last terms are exactly the empirical CVaR of the h values.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .lyapunov import V as lyap_V
from .lyapunov import controller, grad_V, vdot_terms_expr
from .systems import UncertaintySampleSet


@dataclass
class AmbiguitySpec:
    """Uncertainty samples plus the Wasserstein ball and risk tolerance."""

    samples: UncertaintySampleSet
    radius: float
    epsilon: float
    p: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.radius < 0.0:
            raise ConfigError("radius must be nonnegative")
        if self.p != 1:
            raise ConfigError("only the 1-Wasserstein ball is supported")
        if self.samples.count < 1:
            raise ConfigError("need at least one uncertainty sample")

    @property
    def N(self):
        return self.samples.count


@dataclass
class RiskEvalResult:
    """CVaR evaluation detail: the value, the minimizing t of the
    Rockafellar objective, and the descending sample ordering."""

    value: float
    optimal_t: float
    sorted_indices: np.ndarray


def _check_values(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ShapeError("empty value list")
    return values


def var(values, epsilon):
    """Empirical value-at-risk: inf{t : fraction(values <= t) >= 1 - eps}."""
    values = _check_values(values)
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")
    N = values.size
    # smallest k with k/N >= 1 - eps; the 1e-12 guard absorbs float fuzz
    k = int(math.ceil(N * (1.0 - epsilon) - 1e-12))
    k = min(max(k, 1), N)
    return float(np.sort(values)[k - 1])


def select_index_j(N, epsilon):
    """The unique j in [N] with (j-1)/N - eps < 0 and j/N - eps >= 0."""
    if N < 1:
        raise ConfigError("N must be at least 1")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")
    j = int(math.ceil(N * epsilon - 1e-12))
    j = min(max(j, 1), N)
    return j


def cvar_result(values, epsilon):
    """Closed-form empirical CVaR with evaluation detail.

    Equals inf_t [ mean((v_i + t)_+) / eps - t ], attained at t = -h_j;
    ties in the descending sort are broken by original index (stable),
    which cannot change the value.
    """
    values = _check_values(values)
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")
    N = values.size
    order = np.argsort(-values, kind="stable")
    h = values[order]
    j = select_index_j(N, epsilon)
    lead = float(np.sum(h[: j - 1] - h[j - 1]))
    value = lead / (N * epsilon) + h[j - 1]
    return RiskEvalResult(value=float(value), optimal_t=float(-h[j - 1]),
                          sorted_indices=order)


def cvar(values, epsilon):
    """Closed-form empirical CVaR (see cvar_result)."""
    return cvar_result(values, epsilon).value


def wasserstein_radius(N, eps_bar, c1, c2, k, rho=None):
    """Radius that makes the ambiguity set contain the true distribution
    with probability at least 1 - eps_bar.

    r = (log(c1/eps_bar) / (c2 N))^(1/max(k,2)) when N is large enough
    (N >= log(c1/eps_bar)/c2); below that the exponent becomes 1/rho.
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    if not 0.0 < eps_bar < 1.0:
        raise ConfigError("eps_bar must lie in (0, 1)")
    if c1 <= 0 or c2 <= 0:
        raise ConfigError("c1 and c2 must be positive")
    if k < 1:
        raise ConfigError("k must be at least 1")
    ratio = math.log(c1 / eps_bar) / c2
    if N >= ratio:
        exponent = 1.0 / max(k, 2)
    else:
        if rho is None or rho <= 0:
            raise ConfigError("small-sample branch requires rho > 0")
        exponent = 1.0 / rho
    return float((ratio / N) ** exponent)


def dr_margin_general(h_values, spec, L_term):
    """Closed-form margin of the robust sufficient condition.

    h_values must already be sorted descending (ties allowed).  Returns
    (r/eps) L + (1/(N eps)) sum_{i<j}(h_i - h_j) + h_j; the condition
    holds iff the margin is <= 0.
    """
    h = _check_values(h_values)
    if np.any(np.diff(h) > 0):
        raise ContractError("h_values must be sorted descending")
    if L_term < 0:
        raise ContractError("L_term must be nonnegative")
    N = h.size
    j = select_index_j(N, spec.epsilon)
    lead = float(np.sum(h[: j - 1] - h[j - 1]))
    return (spec.radius / spec.epsilon) * float(L_term) \
        + lead / (N * spec.epsilon) + float(h[j - 1])


def _cvar_rows(H, epsilon):
    """Row-wise closed-form CVaR for a (B, N) matrix of values."""
    N = H.shape[1]
    j = select_index_j(N, epsilon)
    Hs = -np.sort(-H, axis=1)
    pivot = Hs[:, j - 1]
    lead = np.sum(Hs[:, : j - 1], axis=1) - (j - 1) * pivot
    return lead / (N * epsilon) + pivot


def pointwise_margins(pair, sys, spec, states):
    """Vectorized per-state robust margins over a batch of states.

    margin(x) = (r/eps) |W^T grad_V| + CVaR_eps{Vdot(x, xi_i)} + gamma |x|.
    For eps <= 1/N the CVaR term reduces to the sample maximum.
    """
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    u = controller(pair, X)
    g = grad_V(pair, X)
    vdot_nom, wtv = vdot_terms_expr(X, u, g, sys)
    H = vdot_nom[:, None] + wtv @ spec.samples.samples.T
    lip = np.linalg.norm(wtv, axis=1)
    return (spec.radius / spec.epsilon) * lip \
        + _cvar_rows(H, spec.epsilon) \
        + pair.gamma * np.linalg.norm(X, axis=1)


def dr_pointwise_margin(pair, sys, spec, x):
    """Per-state robust margin; the robust condition holds at x iff the
    margin is <= 0."""
    return float(pointwise_margins(pair, sys, spec, np.asarray(x))[0])


def dr_exponential_margin(pair, sys, spec, x, alpha):
    """Pointwise margin strengthened to exponential decrease: adds
    alpha * V(x)."""
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative")
    return dr_pointwise_margin(pair, sys, spec, x) + alpha * lyap_V(pair, x)


def guarantee_product(epsilon, eps_bar):
    """The two probability factors of the end-to-end guarantee and their
    product (1 - eps)(1 - eps_bar)."""
    return {
        "risk_factor": 1.0 - epsilon,
        "ambiguity_factor": 1.0 - eps_bar,
        "product": (1.0 - epsilon) * (1.0 - eps_bar),
    }
