"""Closed-loop integration under fixed uncertainty realizations.

Rollouts integrate xdot = f(x, pi(x)) + W(x, pi(x)) xi (or the system's
exact perturbed model) with RK4 and the hard-clamped controller, and
record V and Vdot along the way.  Convergence is measured against the
origin with angle coordinates wrapped modulo 2 pi.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .lyapunov import V as lyap_V
from .lyapunov import controller, grad_V
from .systems import eval_uncertain_dynamics

BLOWUP_NORM = 1e6


def rk4_step(deriv, x, dt):
    """Classical fourth-order Runge-Kutta step."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    k1 = np.asarray(deriv(x))
    k2 = np.asarray(deriv(x + 0.5 * dt * k1))
    k3 = np.asarray(deriv(x + 0.5 * dt * k2))
    k4 = np.asarray(deriv(x + dt * k3))
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite state in RK4 step")
    return out


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return -((np.pi - np.asarray(a)) % (2.0 * np.pi) - np.pi)


def distance_to_origin(sys, x):
    """Euclidean distance to the shifted origin, with the system's angle
    coordinates wrapped before measuring."""
    y = np.array(x, dtype=np.float64, copy=True)
    for d in sys.angle_wrap_dims:
        y[..., d] = wrap_angle(y[..., d])
    return float(np.linalg.norm(y)) if y.ndim == 1 else np.linalg.norm(y, axis=-1)


def chart_state(sys, x):
    """Map a state into the training chart.

    Angle coordinates are wrapped into the 2-pi interval starting at
    their domain lower bound, so the nets are always evaluated where
    they were trained; the controller becomes periodic in the angle and
    the unwrapped closed loop converges to angle multiples of 2 pi.
    Non-angle coordinates pass through unchanged.
    """
    y = np.array(x, dtype=np.float64, copy=True)
    for d in sys.angle_wrap_dims:
        lo = sys.domain[d, 0]
        y[..., d] = lo + np.mod(y[..., d] - lo, 2.0 * np.pi)
    return y


@dataclass
class Trajectory:
    """One closed-loop rollout record.

    controls has one entry fewer than times/states; V and Vdot are
    evaluated at every stored state.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    V_values: np.ndarray
    V_dot_values: np.ndarray
    converged: bool
    final_distance: float
    diverged: bool = False

    def save_csv(self, path):
        n = self.states.shape[1]
        m = self.controls.shape[1] if len(self.controls) else 1
        header = (["t"] + [f"x{i}" for i in range(n)]
                  + [f"u{i}" for i in range(m)] + ["V", "Vdot"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, t in enumerate(self.times):
                row = [repr(float(t))]
                row += [repr(float(v)) for v in self.states[i]]
                if i < len(self.controls):
                    row += [repr(float(v)) for v in self.controls[i]]
                else:
                    row += [""] * m
                row += [repr(float(self.V_values[i])),
                        repr(float(self.V_dot_values[i]))]
                writer.writerow(row)
            writer.writerow(["#converged", repr(bool(self.converged)),
                             "#final_distance", repr(float(self.final_distance)),
                             "#diverged", repr(bool(self.diverged))])

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body, meta = rows[0], rows[1:-1], rows[-1]
        n = sum(1 for h in header if h.startswith("x"))
        m = sum(1 for h in header if h.startswith("u"))
        times, states, controls, vs, vdots = [], [], [], [], []
        for row in body:
            times.append(float(row[0]))
            states.append([float(v) for v in row[1:1 + n]])
            ustr = row[1 + n:1 + n + m]
            if all(s != "" for s in ustr):
                controls.append([float(v) for v in ustr])
            vs.append(float(row[1 + n + m]))
            vdots.append(float(row[2 + n + m]))
        return cls(times=np.array(times), states=np.array(states),
                   controls=np.array(controls).reshape(-1, m),
                   V_values=np.array(vs), V_dot_values=np.array(vdots),
                   converged=meta[1] == "True",
                   final_distance=float(meta[3]),
                   diverged=meta[5] == "True")


def rollout(pair, sys, xi, x0, dt, horizon, delta, model="exact"):
    """Integrate the closed loop from x0 for `horizon` time units.

    model "exact" integrates sys.exact_dynamics when available (falling
    back to the affine model otherwise); "taylor" always integrates
    f + W xi.  The controller and the logged V / Vdot always see the
    chart_state of the integrated point, so angle coordinates may wind
    freely.  converged reflects whether the final state lies within
    `delta` of the origin (angles wrapped); a state-norm blow-up beyond
    1e6 sets the diverged flag and stops early.
    """
    if model not in ("exact", "taylor"):
        raise ConfigError("model must be 'exact' or 'taylor'")
    xi = np.asarray(xi, dtype=np.float64).ravel()
    x = np.asarray(x0, dtype=np.float64).copy()
    steps = int(round(horizon / dt))
    use_exact = model == "exact" and sys.exact_dynamics is not None

    def deriv(state):
        xb = chart_state(sys, state)[None, :]
        u = controller(pair, xb)
        if use_exact:
            return sys.exact_dynamics(state[None, :], u, xi)[0]
        return eval_uncertain_dynamics(sys, state[None, :], u, xi)[0]

    times = [0.0]
    states = [x.copy()]
    controls = []
    vs = [lyap_V(pair, chart_state(sys, x))]
    vdots = [float(grad_V(pair, chart_state(sys, x)) @ deriv(x))]
    diverged = False
    for s in range(steps):
        u = controller(pair, chart_state(sys, x))
        controls.append(u.copy())
        x = rk4_step(deriv, x, dt)
        times.append((s + 1) * dt)
        states.append(x.copy())
        vs.append(lyap_V(pair, chart_state(sys, x)))
        vdots.append(float(grad_V(pair, chart_state(sys, x)) @ deriv(x)))
        if np.linalg.norm(x) > BLOWUP_NORM:
            diverged = True
            break
    final_distance = distance_to_origin(sys, x)
    return Trajectory(
        times=np.array(times), states=np.array(states),
        controls=np.array(controls).reshape(-1, sys.m),
        V_values=np.array(vs), V_dot_values=np.array(vdots),
        converged=bool(not diverged and final_distance <= delta),
        final_distance=final_distance, diverged=diverged)


def _worker_count():
    env = os.environ.get("DR_LYAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("DR_LYAP_THREADS must be an integer")
    return min(4, os.cpu_count() or 1)


@dataclass
class ExperimentSummary:
    """Two-controller comparison under one test uncertainty draw."""

    system: str
    xi_test: list
    inits: np.ndarray
    dt: float
    horizon: float
    delta: float
    seed: int
    trajectories: dict = field(default_factory=dict)

    def converged_count(self, name):
        return sum(1 for tr in self.trajectories[name] if tr.converged)

    def to_dict(self):
        out = {
            "system": self.system,
            "xi_test": [float(v) for v in np.atleast_1d(self.xi_test)],
            "inits": np.asarray(self.inits).tolist(),
            "dt": self.dt, "horizon": self.horizon,
            "delta": self.delta, "seed": self.seed,
            "controllers": {},
        }
        for name, trajs in self.trajectories.items():
            out["controllers"][name] = {
                "n_converged": self.converged_count(name),
                "converged": [bool(t.converged) for t in trajs],
                "final_distance": [float(t.final_distance) for t in trajs],
                "diverged": [bool(t.diverged) for t in trajs],
            }
        return out


def batch_experiment(pair_baseline, pair_dr, sys, xi_test, n_inits,
                     init_region, seed, dt, horizon, delta=0.2,
                     model="exact"):
    """Roll both controllers out from shared random initial states.

    init_region is an (n, 2) box; the same seeded draws are used for both
    controllers.  Rollouts fan out over a small thread pool capped by the
    DR_LYAP_THREADS environment variable.
    """
    init_region = np.asarray(init_region, dtype=np.float64)
    rng = np.random.default_rng(seed)
    inits = rng.uniform(init_region[:, 0], init_region[:, 1],
                        size=(n_inits, sys.n))
    summary = ExperimentSummary(system=sys.name,
                                xi_test=np.atleast_1d(xi_test).tolist(),
                                inits=inits, dt=dt, horizon=horizon,
                                delta=delta, seed=seed)
    pairs = {"baseline": pair_baseline, "dr": pair_dr}
    for name, pair in pairs.items():
        if n_inits == 0:
            summary.trajectories[name] = []
            continue
        with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
            futures = [pool.submit(rollout, pair, sys, xi_test, x0, dt,
                                   horizon, delta, model)
                       for x0 in inits]
            summary.trajectories[name] = [f.result() for f in futures]
    return summary


def save_experiment(summary, out_dir, experiment_name):
    """Write trajectory CSVs as {experiment}/{controller}/{idx}.csv plus
    an index JSON; returns the list of files written."""
    written = []
    base = os.path.join(out_dir, experiment_name)
    index = {"summary": summary.to_dict(), "files": {}}
    for name, trajs in summary.trajectories.items():
        d = os.path.join(base, name)
        os.makedirs(d, exist_ok=True)
        index["files"][name] = []
        for i, tr in enumerate(trajs):
            path = os.path.join(d, f"{i:02d}.csv")
            tr.save_csv(path)
            rel = os.path.relpath(path, out_dir)
            index["files"][name].append(rel)
            written.append(path)
    os.makedirs(base, exist_ok=True)
    index_path = os.path.join(base, "index.json")
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=1)
    written.append(index_path)
    return written
