"""Command-line entry point: ``mhprop <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import diagnostics as dg
from . import pipelines, targets, training, verify
from .checkpoint import CheckpointError

log = logging.getLogger("mhprop")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class DataError(Exception):
    pass


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_cfg(args, extra=None):
    overrides = extra or {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("train", {})["seed"] = args.seed
        overrides.setdefault("sampler", {})["seed"] = args.seed
    if getattr(args, "out", None):
        overrides.setdefault("output", {})["dir"] = str(args.out)
    cfg = config_mod.load(args.config, overrides)
    out = Path(cfg["output"]["dir"])
    config_mod.echo(cfg, out)
    return cfg, out


# ----------------------------------------------------------------- subcommands


def cmd_verify(args) -> int:
    bounds = {}
    for item in args.tol or []:
        name, _, value = item.partition("=")
        try:
            bounds[name] = float(value)
        except ValueError:
            raise config_mod.ConfigError(f"bad --tol {item!r}; expected check=value") from None
    try:
        report = verify.run_suite(seed=args.seed or 0, bounds=bounds, fast=args.fast)
    except KeyError as exc:
        raise config_mod.ConfigError(str(exc)) from None
    for r in report:
        if r["bound"] is not None:
            print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['check']:<24} value={r['value']:.3e} bound={r['bound']:.3e}")
    if args.out:
        _write_json(Path(args.out) / "verify.json", report)
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_VERIFY


def cmd_train_db(args) -> int:
    cfg, out = _load_cfg(args)
    proposal, result, summary, records, target = pipelines.run_density_based(cfg, out_dir=out)
    training.save_model(out / "proposal", proposal)
    records[0].to_csv(out / "chain.csv")
    _write_json(out / "ess.json", {"ess": summary["ess"], "ess_per_chain": summary["ess_per_chain"]})
    _write_json(out / "summary.json", {**summary, "target": target.name, "loss_kind": cfg["loss"]["kind"]})
    print(json.dumps({k: summary[k] for k in ("empirical_ar", "ess", "wall_s")}, sort_keys=True))
    return EXIT_OK


def cmd_train_sb(args) -> int:
    cfg, out = _load_cfg(args)
    data = pipelines.load_samples_csv(args.data) if args.data else None
    _, _, _, report, _, _ = pipelines.run_sample_based(cfg, data=data, out_dir=out)
    _write_json(out / "grid_kl.json", report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _proposal_from_checkpoint(path):
    try:
        return training.load_model(path)
    except CheckpointError:
        pass
    from .flows import make_proposal
    from .ad import ParamVector

    state, meta = training.load_training_checkpoint(path)
    return make_proposal(meta["proposal"], ParamVector(state.params.values, state.params.layout))


def cmd_sample(args) -> int:
    extra = {"sampler": {"kind": args.sampler}}
    for key, val in (("n", args.n), ("lam", args.lam), ("sigma", args.sigma), ("n_chains", args.chains)):
        if val is not None:
            extra["sampler"][key] = val
    if args.target:
        extra["target"] = {"name": args.target}
    cfg, out = _load_cfg(args, extra)
    proposal = _proposal_from_checkpoint(args.checkpoint)
    target = pipelines.build_target(cfg["target"], seed=cfg["train"]["seed"])
    if target.dim != proposal.dim:
        raise DataError(f"checkpoint has D={proposal.dim}, target {target.name} has D={target.dim}")
    scfg = cfg["sampler"]
    moments = pipelines.moments_for(target, cfg["diagnostics"], scfg["n"], np.random.default_rng([scfg["seed"], 999]))
    records, summary = pipelines.sample_and_score(
        pipelines.make_kernel(scfg, proposal), target, scfg["n"], scfg["n_chains"], scfg["burn_in"], moments,
        scfg["seed"], cfg["diagnostics"]["ess_threshold"],
    )
    records[0].to_csv(out / "chain.csv")
    summary = {"ar": summary["empirical_ar"], **summary}
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("ar", "ess", "wall_s", "ess_per_s")}, sort_keys=True))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg, out = _load_cfg(args, {"target": {"name": args.target}} if args.target else None)
    target = pipelines.build_target(cfg["target"], seed=cfg["train"]["seed"])
    try:
        states = pipelines.load_samples_csv(args.chain)
    except FileNotFoundError:
        raise DataError(f"chain file not found: {args.chain}") from None
    if states.shape[1] != target.dim:
        raise DataError(f"chain has {states.shape[1]} columns, target needs {target.dim}")
    moments = pipelines.moments_for(target, cfg["diagnostics"], len(states), np.random.default_rng(0))
    est = dg.ess(states, moments, cfg["diagnostics"]["ess_threshold"])
    report = {"target": target.name, **est.to_dict()}
    if target.modes is not None:
        report["mode_coverage"] = dg.mode_coverage(states, target.modes).tolist()
    _write_json(out / "diagnose.json", report)
    print(json.dumps({"ess_min": est.min, "ess_mean": est.mean}, sort_keys=True))
    return EXIT_OK


def cmd_landscape(args) -> int:
    target = targets.get_target("bimodal1d")
    mus = np.linspace(args.mu_min, args.mu_max, args.resolution)
    sigmas = np.linspace(args.sigma_min, args.sigma_max, args.resolution)
    values = dg.landscape_scan(target, mus, sigmas, args.objective)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    dg.write_landscape_csv(out / f"landscape_{args.objective}.csv", mus, sigmas, values, args.objective)
    i, j = np.unravel_index(np.argmax(values), values.shape)
    print(json.dumps({"objective": args.objective, "argmax_cell": [int(i), int(j)], "mu": mus[i], "sigma": sigmas[j],
                      "max": float(values[i, j])}, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhprop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="YAML experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = common(sub.add_parser("verify", help="run the quadrature verifier suite"))
    p.add_argument("--tol", action="append", metavar="CHECK=VALUE", help="override a check's bound")
    p.add_argument("--fast", action="store_true", help="smaller Monte-Carlo sizes")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("train-db", help="density-based proposal training"))
    p.set_defaults(func=cmd_train_db)

    p = common(sub.add_parser("train-sb", help="sample-based generator/discriminator training"))
    p.add_argument("--data", type=Path, default=None, help="CSV of target samples")
    p.set_defaults(func=cmd_train_sb)

    p = common(sub.add_parser("sample", help="run MH with a trained proposal"))
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--target", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--sampler", choices=("imh", "rw", "mixture"), default="imh")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("diagnose", help="ESS and mode coverage of a chain CSV"))
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--target", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = common(sub.add_parser("landscape", help="AR / ARLB surface over Gaussian proposals"))
    p.add_argument("--objective", choices=("ar", "arlb"), default="ar")
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--mu-min", type=float, default=-3.0)
    p.add_argument("--mu-max", type=float, default=3.0)
    p.add_argument("--sigma-min", type=float, default=0.1)
    p.add_argument("--sigma-max", type=float, default=4.0)
    p.set_defaults(func=cmd_landscape)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, targets.DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
