"""Experiment configuration and run manifests.

A single JSON document drives the whole pipeline: which benchmark system
to build, how the uncertain parameter is sampled, the ambiguity ball,
the staged training schedule, the closed-loop test, and the
certification settings.  Command-line flags may override only the seed
and the output directory; everything else lives in the file so a run is
reproducible from its config hash.
"""

import copy
import hashlib
import json
import os
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .dro import AmbiguitySpec
from .errors import ConfigError
from .systems import (UncertaintySampleSet, XiDistribution, mountain_car,
                      pendulum)
from .training import TrainConfig

SYSTEM_NAMES = ("pendulum", "mountain_car")

# Training-block keys shared by every stage; per-stage dicts override.
COMMON_TRAIN_KEYS = ("M", "learning_rate", "alpha_hat", "delta",
                     "phi1_hidden", "phi2_hidden", "phi1_out", "loss_tol",
                     "batch_size")
STAGE_KEYS = ("loss_kind", "gamma", "epochs", "smooth_clamp", "exp_alpha")


def build_system(name, params=None, xi_shift=None):
    """Construct a named benchmark system.

    xi_shift moves the uncertain physical parameters by a fixed amount
    (pendulum: mass and damping; mountain car: power); training the
    nominal loss on the system shifted by the sample mean gives the
    averaged-parameter baseline.
    """
    params = dict(params or {})
    if name == "pendulum":
        shift = np.zeros(2) if xi_shift is None else np.asarray(xi_shift)
        params.setdefault("mass", 1.0)
        params.setdefault("damping", 0.13)
        params["mass"] += shift[0]
        params["damping"] += shift[1]
        return pendulum(**params)
    if name == "mountain_car":
        shift = np.zeros(1) if xi_shift is None else np.atleast_1d(xi_shift)
        params.setdefault("power", 0.0015)
        params["power"] += shift[0]
        return mountain_car(**params)
    raise ConfigError(f"unknown system {name!r}; expected one of "
                      f"{SYSTEM_NAMES}")


@dataclass
class ExperimentConfig:
    """Validated view of one experiment JSON document."""

    system: str
    train: dict
    ambiguity: dict
    uncertainty: dict
    test: dict
    output_dir: str
    seed: int = 0
    name: str = "experiment"
    system_params: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.system not in SYSTEM_NAMES:
            raise ConfigError(f"unknown system {self.system!r}")
        for key in ("baseline", "dr_stages"):
            if key not in self.train:
                raise ConfigError(f"train block is missing {key!r}")
        if not self.train["dr_stages"]:
            raise ConfigError("train.dr_stages must list at least one stage")
        for stage in [self.train["baseline"], *self.train["dr_stages"]]:
            unknown = set(stage) - set(STAGE_KEYS)
            if unknown:
                raise ConfigError(f"unknown stage keys {sorted(unknown)}")
        for key in ("radius", "epsilon"):
            if key not in self.ambiguity:
                raise ConfigError(f"ambiguity block is missing {key!r}")
        has_dist = "distribution" in self.uncertainty
        has_file = "sample_file" in self.uncertainty
        if has_dist == has_file:
            raise ConfigError("uncertainty block needs exactly one of "
                              "'distribution' or 'sample_file'")
        if has_dist:
            if "count" not in self.uncertainty:
                raise ConfigError("uncertainty.count is required with a "
                                  "distribution")
            for coord in self.uncertainty["distribution"]:
                if coord.get("kind") not in ("uniform", "normal"):
                    raise ConfigError("uncertainty distributions are "
                                      "limited to uniform and normal")
        for key in ("xi_test", "init_region", "n_inits", "dt", "horizon"):
            if key not in self.test:
                raise ConfigError(f"test block is missing {key!r}")
        region = np.asarray(self.test["init_region"], dtype=np.float64)
        if region.ndim != 2 or region.shape[1] != 2:
            raise ConfigError("test.init_region must be an (n, 2) box")

    # construction helpers ------------------------------------------------

    def build_system(self, xi_shift=None):
        return build_system(self.system, self.system_params, xi_shift)

    def distribution(self):
        if "distribution" not in self.uncertainty:
            raise ConfigError("config uses an explicit sample file, not a "
                              "named distribution")
        return XiDistribution(self.uncertainty["distribution"])

    def draw_samples(self, seed):
        """Offline uncertainty samples: file contents or seeded draws."""
        if "sample_file" in self.uncertainty:
            path = self.uncertainty["sample_file"]
            if not os.path.exists(path):
                raise ConfigError(f"sample file {path!r} does not exist")
            with open(path) as fh:
                rows = json.load(fh)
            return UncertaintySampleSet(np.asarray(rows, dtype=np.float64))
        return UncertaintySampleSet.draw(self.distribution(),
                                         self.uncertainty["count"], seed)

    def ambiguity_spec(self, samples):
        return AmbiguitySpec(samples=samples,
                             radius=self.ambiguity["radius"],
                             epsilon=self.ambiguity["epsilon"])

    def stage_config(self, stage, seed):
        """TrainConfig for one schedule entry, inheriting common keys."""
        kwargs = {k: self.train[k] for k in COMMON_TRAIN_KEYS
                  if k in self.train}
        kwargs.update({k: v for k, v in stage.items() if k in STAGE_KEYS})
        kwargs.update(seed=seed,
                      r=self.ambiguity["radius"],
                      epsilon=self.ambiguity["epsilon"])
        return TrainConfig(**kwargs)

    @property
    def certify_gamma(self):
        """Margin rate stamped on the trained pair for certification and
        simulation; training stages may use larger rates to buy buffer."""
        return self.train.get("certify_gamma",
                              self.train["dr_stages"][-1].get("gamma", 0.1))

    def to_dict(self):
        return {
            "name": self.name, "system": self.system,
            "system_params": self.system_params, "seed": self.seed,
            "output_dir": self.output_dir, "train": self.train,
            "ambiguity": self.ambiguity, "uncertainty": self.uncertainty,
            "test": self.test, "verification": self.verification,
        }


PRESETS = {
    "pendulum-dr": {
        "name": "pendulum-dr",
        "system": "pendulum",
        "seed": 0,
        "output_dir": "runs/pendulum-dr",
        "train": {
            "M": 3600,
            "learning_rate": 0.002,
            "alpha_hat": 0.1,
            "delta": 0.2,
            "certify_gamma": 0.02,
            "baseline": {"loss_kind": "nominal", "gamma": 0.1,
                         "epochs": 1200},
            "dr_stages": [
                {"loss_kind": "nominal", "gamma": 0.2, "epochs": 1500},
                {"loss_kind": "dr_pointwise", "gamma": 0.1, "epochs": 1200},
                {"loss_kind": "dr_pointwise", "gamma": 0.2, "epochs": 1500},
            ],
        },
        "ambiguity": {"radius": 0.01, "epsilon": 0.1},
        "uncertainty": {
            "distribution": [
                {"kind": "uniform", "low": -0.04, "high": 0.08},
                {"kind": "normal", "mean": 0.0, "std": 0.02},
            ],
            "count": 5,
        },
        "test": {
            "xi_test": [0.1, 0.05],
            "init_region": [[0.0, 6.283185307179586], [-6.0, 6.0]],
            "n_inits": 10,
            "dt": 0.01,
            "horizon": 20.0,
            "distance_threshold": 0.2,
        },
        "verification": {
            "resolution": 201,
            "mc_trials": 1000,
            "lipschitz_pairs": 20000,
            "eps_bar": 0.05,
        },
    },
    "mountain-car-dr": {
        "name": "mountain-car-dr",
        "system": "mountain_car",
        "seed": 0,
        "output_dir": "runs/mountain-car-dr",
        "train": {
            "M": 1600,
            "learning_rate": 0.002,
            "alpha_hat": 0.1,
            "delta": 0.05,
            "certify_gamma": 0.01,
            "baseline": {"loss_kind": "nominal", "gamma": 0.01,
                         "epochs": 1200},
            "dr_stages": [
                {"loss_kind": "dr_pointwise", "gamma": 0.01, "epochs": 1200},
                {"loss_kind": "dr_pointwise", "gamma": 0.02, "epochs": 1500,
                 "smooth_clamp": False},
            ],
        },
        "ambiguity": {"radius": 0.0001, "epsilon": 0.1},
        "uncertainty": {
            "distribution": [
                {"kind": "normal", "mean": 0.0, "std": 0.0002},
            ],
            "count": 3,
        },
        "test": {
            "xi_test": [-0.0003],
            "init_region": [[-1.5235987755982988, 0.4764012244017012],
                            [-0.1, 0.1]],
            "n_inits": 10,
            "dt": 1.0,
            "horizon": 2000.0,
            "distance_threshold": 0.05,
        },
        "verification": {
            "resolution": 201,
            "mc_trials": 1000,
            "lipschitz_pairs": 20000,
            "eps_bar": 0.05,
        },
    },
}


def load_config(source):
    """ExperimentConfig from a preset name or a JSON file path."""
    if source in PRESETS:
        raw = copy.deepcopy(PRESETS[source])
    else:
        if not os.path.exists(source):
            raise ConfigError(f"config {source!r} is neither a preset "
                              f"({', '.join(sorted(PRESETS))}) nor a file")
        with open(source) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {source!r} is not valid JSON: "
                                  f"{exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}")


def config_hash(config):
    """Stable hash of the config content (dict or ExperimentConfig)."""
    if isinstance(config, ExperimentConfig):
        config = config.to_dict()
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(config, out_dir, outputs):
    """Record what a run produced: config hash and content, seed, source
    revision, and every artifact path (relative to the run directory).

    No timestamps, so identical runs write identical manifests.
    """
    manifest = {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "git": git_describe(),
        "config": config.to_dict(),
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path
