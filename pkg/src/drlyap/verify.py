"""Post-training certification.

Dense-grid margin checks over the domain with the delta-ball removed,
empirical Lipschitz and bound constants, the covering density of the
training set, the resulting stability slack, and Monte-Carlo estimation
of the chance constraint under a declared test distribution.

All constants are empirical: Lipschitz estimates are lower bounds from
random pairs, B-constants are maxima over samples.  The report labels
them as such; nothing here is a formal bound.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dro import guarantee_product, pointwise_margins
from .errors import ConfigError, ShapeError
from .lyapunov import V as lyap_V
from .lyapunov import controller, grad_V, vdot_terms_expr

WILSON_Z = 1.959963984540054  # two-sided 95%


@dataclass
class CertificateReport:
    """Empirical certification record for one trained pair."""

    grid_resolution: int = 0
    delta: float = 0.0
    worst_nominal_margin: Optional[float] = None
    worst_nominal_state: Optional[list] = None
    worst_dr_margin: Optional[float] = None
    worst_dr_state: Optional[list] = None
    lip_vdot: Optional[float] = None
    lip_wdot: Optional[float] = None
    grad_v_bound: Optional[float] = None
    covering_c: Optional[float] = None
    b_xi: Optional[float] = None
    slack: Optional[float] = None
    mc_pass_probability: Optional[float] = None
    mc_trials: Optional[int] = None
    mc_wilson_low: Optional[float] = None
    mc_wilson_high: Optional[float] = None
    guarantee: Optional[dict] = None
    checks: dict = field(default_factory=dict)

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            out[k] = v
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @property
    def all_pass(self):
        return bool(self.checks) and all(self.checks.values())


def domain_grid(sys, resolution, delta):
    """Uniform grid over the domain box keeping points with |x| >= delta
    (the boundary of the excluded ball is part of the checked region)."""
    if resolution < 2:
        raise ConfigError("resolution must be at least 2 per axis")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in sys.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[np.linalg.norm(pts, axis=1) >= delta]


def nominal_margins(pair, sys, states):
    """Vdot(x, pi(x), 0) + gamma |x| for a batch of states."""
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    u = controller(pair, X)
    g = grad_V(pair, X)
    vdot_nom, _ = vdot_terms_expr(X, u, g, sys)
    return vdot_nom + pair.gamma * np.linalg.norm(X, axis=1)


def grid_margin_check(pair, sys, spec, resolution, delta):
    """Worst nominal and robust pointwise margins over the grid.

    Returns a CertificateReport holding both margins, their arg states,
    and pass flags (margin <= 0).  spec may be None to skip the robust
    margin (nominal-only certificates).
    """
    grid = domain_grid(sys, resolution, delta)
    report = CertificateReport(grid_resolution=resolution, delta=delta)
    chunk = 8192
    worst_nom = -np.inf
    worst_dr = -np.inf
    arg_nom = arg_dr = None
    for start in range(0, len(grid), chunk):
        block = grid[start:start + chunk]
        nm = nominal_margins(pair, sys, block)
        i = int(np.argmax(nm))
        if nm[i] > worst_nom:
            worst_nom, arg_nom = float(nm[i]), block[i]
        if spec is not None:
            dm = pointwise_margins(pair, sys, spec, block)
            i = int(np.argmax(dm))
            if dm[i] > worst_dr:
                worst_dr, arg_dr = float(dm[i]), block[i]
    report.worst_nominal_margin = worst_nom
    report.worst_nominal_state = arg_nom.tolist()
    report.checks["nominal_margin"] = worst_nom <= 0.0
    if spec is not None:
        report.worst_dr_margin = worst_dr
        report.worst_dr_state = arg_dr.tolist()
        report.checks["dr_margin"] = worst_dr <= 0.0
    return report


def empirical_lipschitz(fn, domain, pairs, seed):
    """max over random point pairs of |fn(x) - fn(y)| / |x - y|.

    A lower bound on the true Lipschitz constant over the box; fn may be
    scalar- or vector-valued and is called once per point batch.
    """
    if pairs < 1:
        raise ConfigError("need at least one pair")
    domain = np.asarray(domain, dtype=np.float64)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(domain[:, 0], domain[:, 1], size=(pairs, len(domain)))
    ys = rng.uniform(domain[:, 0], domain[:, 1], size=(pairs, len(domain)))
    try:
        fx = np.asarray(fn(xs), dtype=np.float64)
        fy = np.asarray(fn(ys), dtype=np.float64)
    except Exception:
        fx = np.asarray([fn(x) for x in xs], dtype=np.float64)
        fy = np.asarray([fn(y) for y in ys], dtype=np.float64)
    if fx.ndim == 1:
        num = np.abs(fx - fy)
    else:
        num = np.linalg.norm(fx - fy, axis=-1)
    den = np.linalg.norm(xs - ys, axis=-1)
    ok = den > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(num[ok] / den[ok]))


def covering_constant(dataset, check_grid):
    """Smallest c such that balls B(x_i; c |x_i|) around dataset points
    cover the grid: max over grid of min over dataset |x - x_i| / |x_i|."""
    dataset = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    check_grid = np.atleast_2d(np.asarray(check_grid, dtype=np.float64))
    if dataset.size == 0 or check_grid.size == 0:
        raise ShapeError("dataset and grid must be nonempty")
    norms = np.linalg.norm(dataset, axis=1)
    if np.any(norms == 0.0):
        raise ConfigError("dataset contains a point at the origin")
    worst = 0.0
    chunk = 512
    for start in range(0, len(check_grid), chunk):
        block = check_grid[start:start + chunk]
        d = np.linalg.norm(block[:, None, :] - dataset[None, :, :], axis=2)
        ratios = np.min(d / norms[None, :], axis=1)
        worst = max(worst, float(np.max(ratios)))
    return worst


def theoretical_slack(report, gamma, r, epsilon, delta):
    """gamma - (L_wdot B_xi)(r/eps) c - L_max c with
    L_max = L_vdot + L_wdot B_xi, all constants empirical.

    Positive slack means the covering premise of the stability argument
    holds with the estimated constants.
    """
    needed = ("lip_vdot", "lip_wdot", "covering_c", "b_xi")
    for namef in needed:
        if getattr(report, namef) is None:
            raise ConfigError(f"report is missing {namef}")
    if delta <= 0:
        raise ConfigError("delta must be positive")
    l_max = report.lip_vdot + report.lip_wdot * report.b_xi
    return float(gamma
                 - (report.lip_wdot * report.b_xi) * (r / epsilon) * report.covering_c
                 - l_max * report.covering_c)


@dataclass
class MonteCarloResult:
    pass_probability: float
    trials: int
    wilson_low: float
    wilson_high: float


def wilson_interval(successes, trials, z=WILSON_Z):
    """95% Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * np.sqrt(phat * (1 - phat) / trials
                       + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def monte_carlo_chance(pair, sys, distribution, trials, grid, seed):
    """Fraction of parameter draws under which the whole grid satisfies
    the margined decrease condition Vdot + gamma |x| <= 0.

    The margin is affine in the parameter, so the grid's nominal terms
    and sensitivities are computed once and each trial costs one matrix
    product.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    u = controller(pair, grid)
    g = grad_V(pair, grid)
    vdot_nom, wtv = vdot_terms_expr(grid, u, g, sys)
    base = vdot_nom + pair.gamma * np.linalg.norm(grid, axis=1)
    rng = np.random.default_rng(seed)
    draws = distribution.sample(rng, trials)
    successes = 0
    chunk = 256
    for start in range(0, trials, chunk):
        block = draws[start:start + chunk]
        margins = base[:, None] + wtv @ block.T
        successes += int(np.sum(np.max(margins, axis=0) <= 0.0))
    lo, hi = wilson_interval(successes, trials)
    return MonteCarloResult(pass_probability=successes / trials,
                            trials=trials, wilson_low=lo, wilson_high=hi)


def certify(pair, sys, spec, resolution=201, delta=None, dataset=None,
            lipschitz_pairs=20000, mc_distribution=None, mc_trials=0,
            seed=0, eps_bar=0.05):
    """Assemble the full certification report for a trained pair."""
    delta = pair.delta if delta is None else delta
    report = grid_margin_check(pair, sys, spec, resolution, delta)

    def vdot_nominal_fn(X):
        return nominal_margins(pair, sys, X) \
            - pair.gamma * np.linalg.norm(np.atleast_2d(X), axis=1)

    def wtv_fn(X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        u = controller(pair, X)
        g = grad_V(pair, X)
        _, wtv = vdot_terms_expr(X, u, g, sys)
        return wtv

    report.lip_vdot = empirical_lipschitz(vdot_nominal_fn, sys.domain,
                                          lipschitz_pairs, seed)
    report.lip_wdot = empirical_lipschitz(wtv_fn, sys.domain,
                                          lipschitz_pairs, seed + 1)
    rng = np.random.default_rng(seed + 2)
    probe = rng.uniform(sys.domain[:, 0], sys.domain[:, 1],
                        size=(lipschitz_pairs, sys.n))
    report.grad_v_bound = float(np.max(np.linalg.norm(grad_V(pair, probe),
                                                      axis=1)))
    if spec is not None:
        report.b_xi = spec.samples.bound()
        report.guarantee = guarantee_product(spec.epsilon, eps_bar)
    if dataset is not None:
        check = domain_grid(sys, min(resolution, 41), delta)
        report.covering_c = covering_constant(dataset, check)
        if spec is not None:
            report.slack = theoretical_slack(report, pair.gamma, spec.radius,
                                             spec.epsilon, delta)
            report.checks["positive_slack"] = report.slack > 0.0
    if mc_distribution is not None and mc_trials > 0:
        grid = domain_grid(sys, resolution, delta)
        mc = monte_carlo_chance(pair, sys, mc_distribution, mc_trials,
                                grid, seed + 3)
        report.mc_pass_probability = mc.pass_probability
        report.mc_trials = mc.trials
        report.mc_wilson_low = mc.wilson_low
        report.mc_wilson_high = mc.wilson_high
        if spec is not None:
            report.checks["mc_chance"] = \
                mc.pass_probability >= 1.0 - spec.epsilon
    return report
