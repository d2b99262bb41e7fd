"""Command-line pipeline.

Subcommands: train (staged baseline + robust training), verify
(certification report), simulate (two-controller comparison under the
test uncertainty), and repro (full pipeline plus a pass/fail table).
Exit codes: 0 success, 1 a configured check failed, 2 usage or config
error, 3 numeric abort during training.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import load_config, write_manifest
from .errors import ConfigError, NumericError
from .lyapunov import load_pair, save_pair
from .simulate import batch_experiment, distance_to_origin, rollout, \
    save_experiment
from .systems import UncertaintySampleSet
from .training import derive_seeds, train
from .verify import certify, domain_grid, monte_carlo_chance
from .dro import AmbiguitySpec

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _resolve(config_source, seed, output_dir):
    cfg = load_config(config_source)
    if seed is not None:
        cfg.seed = seed
    if output_dir is not None:
        cfg.output_dir = output_dir
    return cfg


def _update_manifest(cfg, new_paths):
    """Manifest accumulates every artifact the pipeline has produced."""
    out = cfg.output_dir
    known = set()
    path = os.path.join(out, "manifest.json")
    if os.path.exists(path):
        with open(path) as fh:
            known = {os.path.join(out, p)
                     for p in json.load(fh).get("outputs", [])}
    known.update(new_paths)
    return write_manifest(cfg, out, sorted(known))


def _save_pair_files(pair, prefix):
    save_pair(pair, prefix)
    return [f"{prefix}_phi1.json", f"{prefix}_phi2.json",
            f"{prefix}_pair.json"]


def _load_samples(cfg):
    path = os.path.join(cfg.output_dir, "xi_samples.json")
    if os.path.exists(path):
        with open(path) as fh:
            return UncertaintySampleSet(np.asarray(json.load(fh),
                                                   dtype=np.float64))
    return cfg.draw_samples(derive_seeds(cfg.seed, 4)[0])


def cmd_train(config_source, seed=None, output_dir=None):
    """Baseline training on the averaged system, then the robust stages
    warm-started from it; writes weights, logs, samples, and states."""
    cfg = _resolve(config_source, seed, output_dir)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    child = derive_seeds(cfg.seed, 4)

    samples = cfg.draw_samples(child[0])
    spec = cfg.ambiguity_spec(samples)
    sys_nom = cfg.build_system()
    sys_avg = cfg.build_system(xi_shift=samples.samples.mean(axis=0))

    written = []
    sample_path = os.path.join(out, "xi_samples.json")
    with open(sample_path, "w") as fh:
        json.dump(samples.samples.tolist(), fh)
    written.append(sample_path)

    base_cfg = cfg.stage_config(cfg.train["baseline"], child[1])
    pair_base, log = train(base_cfg, sys_avg)
    log_path = os.path.join(out, "baseline_log.csv")
    log.write_csv(log_path)
    written.append(log_path)

    pair = pair_base
    for idx, stage in enumerate(cfg.train["dr_stages"]):
        stage_cfg = cfg.stage_config(stage, child[2])
        pair, log = train(stage_cfg, sys_nom, spec=spec, start_pair=pair)
        log_path = os.path.join(out, f"dr_stage{idx}_log.csv")
        log.write_csv(log_path)
        written.append(log_path)
        if idx == len(cfg.train["dr_stages"]) - 1:
            states_path = os.path.join(out, "train_states.csv")
            np.savetxt(states_path, _stage_states(stage_cfg, sys_nom),
                       delimiter=",")
            written.append(states_path)

    pair.gamma = cfg.certify_gamma
    pair_base.gamma = cfg.certify_gamma
    written += _save_pair_files(pair, os.path.join(out, "dr"))
    written += _save_pair_files(pair_base, os.path.join(out, "baseline"))
    _update_manifest(cfg, written)
    print(f"trained baseline + {len(cfg.train['dr_stages'])} robust "
          f"stage(s) -> {out}")
    return EXIT_OK


def _stage_states(stage_cfg, sys):
    """The training states a stage drew, regenerated from its seed."""
    from .systems import sample_domain

    state_seed = derive_seeds(stage_cfg.seed, 3)[0]
    return sample_domain(sys, stage_cfg.M, stage_cfg.delta,
                         np.random.default_rng(state_seed))


def cmd_verify(config_source, seed=None, output_dir=None, weights=None):
    """Certification of the trained robust pair: grid margins, empirical
    constants, slack, and the Monte-Carlo chance estimate."""
    cfg = _resolve(config_source, seed, output_dir)
    out = cfg.output_dir
    prefix = weights or os.path.join(out, "dr")
    pair = load_pair(prefix)
    sys_nom = cfg.build_system()
    spec = cfg.ambiguity_spec(_load_samples(cfg))

    states_path = os.path.join(out, "train_states.csv")
    dataset = None
    if os.path.exists(states_path):
        dataset = np.loadtxt(states_path, delimiter=",")
    vcfg = cfg.verification
    mc_dist = None
    if vcfg.get("mc_trials", 0) and "distribution" in cfg.uncertainty:
        mc_dist = cfg.distribution()
    report = certify(pair, sys_nom, spec,
                     resolution=vcfg.get("resolution", 201),
                     dataset=dataset,
                     lipschitz_pairs=vcfg.get("lipschitz_pairs", 20000),
                     mc_distribution=mc_dist,
                     mc_trials=vcfg.get("mc_trials", 0),
                     seed=cfg.seed,
                     eps_bar=vcfg.get("eps_bar", 0.05))
    report_path = os.path.join(out, "certificate.json")
    report.save(report_path)
    _update_manifest(cfg, [report_path])
    for name, ok in sorted(report.checks.items()):
        print(f"  {name}: {'pass' if ok else 'FAIL'}")
    print(f"certificate -> {report_path}")
    return EXIT_OK if report.all_pass else EXIT_CHECK_FAILED


def cmd_simulate(config_source, seed=None, output_dir=None):
    """Closed-loop comparison of baseline and robust controllers under
    the test uncertainty draw; writes trajectories and a summary."""
    cfg = _resolve(config_source, seed, output_dir)
    out = cfg.output_dir
    pair_base = load_pair(os.path.join(out, "baseline"))
    pair_dr = load_pair(os.path.join(out, "dr"))
    sys_nom = cfg.build_system()
    t = cfg.test
    summary = batch_experiment(
        pair_base, pair_dr, sys_nom, np.asarray(t["xi_test"]),
        t["n_inits"], np.asarray(t["init_region"], dtype=np.float64),
        seed=derive_seeds(cfg.seed, 4)[3], dt=t["dt"],
        horizon=t["horizon"],
        delta=t.get("distance_threshold", 0.2),
        model=t.get("model", "exact"))
    written = save_experiment(summary, out, cfg.name)
    _update_manifest(cfg, written)
    for name in ("baseline", "dr"):
        print(f"  {name}: {summary.converged_count(name)}/{t['n_inits']} "
              f"converged")
    return EXIT_OK


def _monotonicity(cfg, summary_dir=None):
    """V non-increase statistics along the robust controller's converged
    test rollouts: (worst fraction of non-increasing steps outside the
    delta ball, worst single-step increase relative to max V)."""
    cfg_delta = cfg.test.get("distance_threshold", 0.2)
    pair = load_pair(os.path.join(cfg.output_dir, "dr"))
    sys_nom = cfg.build_system()
    rng = np.random.default_rng(derive_seeds(cfg.seed, 4)[3])
    region = np.asarray(cfg.test["init_region"], dtype=np.float64)
    inits = rng.uniform(region[:, 0], region[:, 1],
                        size=(cfg.test["n_inits"], sys_nom.n))
    worst_frac, worst_rel = 1.0, 0.0
    for x0 in inits:
        tr = rollout(pair, sys_nom, np.asarray(cfg.test["xi_test"]), x0,
                     cfg.test["dt"], cfg.test["horizon"], cfg_delta)
        if not tr.converged:
            continue
        dist = distance_to_origin(sys_nom, tr.states)
        outside = dist[:-1] > cfg_delta
        if not outside.any():
            continue
        dv = np.diff(tr.V_values)[outside]
        worst_frac = min(worst_frac, float(np.mean(dv <= 0.0)))
        worst_rel = max(worst_rel, float(dv.max() / tr.V_values.max()))
    return worst_frac, worst_rel


def cmd_repro(config_source, seed=None, output_dir=None):
    """Full pipeline for one experiment preset, then a pass/fail table:
    robust-vs-baseline convergence separation, V monotonicity along
    converged rollouts, and the Monte-Carlo chance level."""
    cfg = _resolve(config_source, seed, output_dir)
    code = cmd_train(config_source, seed=cfg.seed,
                     output_dir=cfg.output_dir)
    if code != EXIT_OK:
        return code
    verify_code = cmd_verify(config_source, seed=cfg.seed,
                             output_dir=cfg.output_dir)
    if verify_code not in (EXIT_OK, EXIT_CHECK_FAILED):
        return verify_code
    cmd_simulate(config_source, seed=cfg.seed, output_dir=cfg.output_dir)

    out = cfg.output_dir
    with open(os.path.join(out, cfg.name, "index.json")) as fh:
        controllers = json.load(fh)["summary"]["controllers"]
    n = cfg.test["n_inits"]
    dr_conv = controllers["dr"]["n_converged"]
    base_conv = controllers["baseline"]["n_converged"]
    need_dr = cfg.test.get("dr_min_converged",
                           int(np.ceil(0.9 * n)) if n else 0)
    allow_base = cfg.test.get("baseline_max_converged",
                              int(np.floor(0.3 * n)))
    rows = [
        (f"robust converges on >= {need_dr}/{n} test inits "
         f"(got {dr_conv})", dr_conv >= need_dr),
        (f"baseline converges on <= {allow_base}/{n} test inits "
         f"(got {base_conv})", base_conv <= allow_base),
    ]

    frac, rel = _monotonicity(cfg)
    rows.append((f"V non-increasing outside the delta ball on >= 95% of "
                 f"steps (worst {100 * frac:.2f}%)", frac >= 0.95))
    rows.append((f"no V step increases by > 1e-4 of max V "
                 f"(worst {rel:.2e})", rel <= 1e-4))

    with open(os.path.join(out, "certificate.json")) as fh:
        cert = json.load(fh)
    if cert.get("mc_trials"):
        level = 1.0 - cfg.ambiguity["epsilon"]
        prob = cert["mc_pass_probability"]
        rows.append((f"chance estimate >= {level:.2f} "
                     f"(got {prob:.3f})", prob >= level))
        rows.append((f"chance Wilson interval excludes 0.5 "
                     f"(low {cert['mc_wilson_low']:.3f})",
                     cert["mc_wilson_low"] > 0.5))

    failed = 0
    for label, ok in rows:
        print(f"  [{'PASS' if ok else 'FAIL'}] {label}")
        failed += 0 if ok else 1
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(
        prog="drlyap",
        description="Distributionally robust neural Lyapunov control: "
                    "train, certify, and simulate.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "staged baseline + robust training",
        "verify": "certify a trained pair and write the report",
        "simulate": "compare both controllers under the test uncertainty",
        "repro": "full pipeline plus a pass/fail table",
    }
    for name in ("train", "verify", "simulate", "repro"):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config",
                       help="experiment preset name or JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--output-dir", default=None,
                       help="override the config output directory")
        if name == "verify":
            p.add_argument("--weights", default=None,
                           help="weights prefix to certify (default: the "
                                "trained robust pair in the output dir)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"train": cmd_train, "verify": cmd_verify,
                "simulate": cmd_simulate, "repro": cmd_repro}
    kwargs = {"seed": args.seed, "output_dir": args.output_dir}
    if args.command == "verify":
        kwargs["weights"] = args.weights
    try:
        return handlers[args.command](args.config, **kwargs)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
