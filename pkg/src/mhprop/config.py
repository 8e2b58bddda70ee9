"""YAML experiment configs: documented defaults, unknown-key rejection, resolved echo."""
from __future__ import annotations

import copy
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


# Every key has a default; a config file may only override these.
DEFAULTS = {
    "target": {
        "name": "mog2",  # synthetic target name, or "logistic"
        "dim": 2,  # only for "normal"
        "dataset": "heart",  # logistic: german | heart | australian
        "dataset_path": None,  # CSV with labels in the last column; None -> surrogate data
        "flip_bias_sign": False,
    },
    "data": {
        "path": None,  # sample-based: CSV of samples; None -> draw from `target`
        "target": "mog6",
        "n": 50000,
        "seed": 12345,
    },
    "proposal": {
        "kind": "flow",  # flow | gaussian
        "hidden": 512,
        "n_layers": 4,
        "s_clamp": 5.0,
        "init": "base",  # base (identity flow) | affine | laplace
        "init_shift": 0.0,
        "init_log_scale": 0.0,
        "init_inflate": 1.0,  # laplace: scale multiplier on the Laplace std
        "seed": 0,
        "latent": 8,  # sample-based generator
        "gen_hidden": 64,
        "disc_hidden": 64,
    },
    "loss": {"kind": "ARLB"},
    "train": {
        "iterations": 2000,
        "batch_size": 64,
        "lr": 1e-3,
        "buffer_refresh": 64,
        "n_chains": 1,
        "buffer_capacity": 10000,
        "burn_in": 100,
        "seed": 0,
        "checkpoint_every": 0,
        "eval_every": 10,
        "repeat_cap": 8,
        "repeat_cap_warmup": 200,
        "k_d": 5,
        "minibatch": 0,
        "final_disc_steps": 500,
    },
    "sampler": {
        "kind": "imh",  # imh | rw | mixture
        "n": 1000,
        "n_chains": 1,
        "burn_in": 100,
        "lam": 0.5,
        "sigma": 0.5,
        "seed": 1,
    },
    "diagnostics": {
        "ess_threshold": 0.05,
        "reference": "auto",  # auto | analytic | grid | chain
        "reference_n": 10000,
        "grid_bins": 40,
        "grid_bounds": [[-4.0, 4.0], [-4.0, 4.0]],
    },
    "output": {"dir": "runs/out"},
}


def _merge(base: dict, override: dict, path=""):
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value


def resolve(override: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    _merge(cfg, override or {})
    return cfg


def load(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- YAML file <- overrides (each a nested partial mapping)."""
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
    cfg = resolve(data)
    _merge(cfg, overrides or {})
    return cfg


def echo(cfg: dict, out_dir) -> Path:
    """Write the resolved config next to the outputs so the directory is self-describing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return path
