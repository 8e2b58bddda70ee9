"""Builders and end-to-end runs shared by the CLI and the acceptance suite."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import mh, targets
from .config import ConfigError
from .flows import FlowProposal, GaussianProposal
from .nets import DiscriminatorNet, GeneratorNet
from .training import TrainConfig, train_density_based, train_sample_based


class FullGaussian:
    """Fixed multivariate normal proposal (reference chains only; not trainable)."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.dim = self.mean.shape[0]
        self.chol = np.linalg.cholesky(cov)
        self.log_norm = -np.sum(np.log(np.diag(self.chol))) - 0.5 * self.dim * np.log(2 * np.pi)

    def log_prob(self, x, P=None):
        z = np.linalg.solve(self.chol, (np.atleast_2d(x) - self.mean).T).T
        return -0.5 * np.sum(z * z, axis=1) + self.log_norm

    def sample(self, n, rng, P=None):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T, -0.5 * np.sum(z * z, axis=1) + self.log_norm


# ----------------------------------------------------------------- builders


def build_target(tcfg: dict, seed: int = 0):
    name = tcfg["name"].lower()
    if name == "logistic":
        if tcfg.get("dataset_path"):
            data = targets.load_dataset(tcfg["dataset_path"], tcfg["dataset"])
        else:
            data = targets.synthesize_dataset(tcfg["dataset"], seed=seed)
        return targets.get_target("logistic", dataset=data, flip_bias_sign=tcfg.get("flip_bias_sign", False))
    if name == "normal":
        return targets.get_target("normal", dim=tcfg.get("dim", 2))
    return targets.get_target(name)


def laplace_init(target, inflate=1.0):
    mode, cov = targets.laplace_approximation(target)
    return mode, np.log(inflate * np.sqrt(np.diag(cov)))


def build_proposal(pcfg: dict, target):
    kind = pcfg["kind"]
    if pcfg["init"] == "laplace":
        shift, log_scale = laplace_init(target, pcfg["init_inflate"])
    elif pcfg["init"] == "affine":
        shift = np.full(target.dim, float(pcfg["init_shift"]))
        log_scale = np.full(target.dim, float(pcfg["init_log_scale"]))
    elif pcfg["init"] == "base":
        shift = log_scale = None
    else:
        raise ConfigError(f"unknown proposal.init {pcfg['init']!r}")
    if kind == "gaussian" or target.dim == 1:
        return GaussianProposal(target.dim, mean=shift, log_std=log_scale)
    if kind != "flow":
        raise ConfigError(f"unknown proposal.kind {kind!r}")
    common = dict(hidden=pcfg["hidden"], n_layers=pcfg["n_layers"], s_clamp=pcfg["s_clamp"], seed=pcfg["seed"])
    if shift is None:
        return FlowProposal(target.dim, **common)
    return FlowProposal.affine(shift, log_scale, **common)


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(loss=cfg["loss"]["kind"], **cfg["train"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ----------------------------------------------------------------- reference moments


def reference_chain_moments(target, n, rng, inflate=1.3):
    """Moments from a long independent chain with an inflated Laplace Gaussian proposal."""
    mode, cov = targets.laplace_approximation(target)
    prop = FullGaussian(mode, inflate**2 * cov)
    rec = mh.run_chain(mh.IndependentKernel(prop), target, n, burn_in=1000, rng=rng)
    return dg.chain_moments(rec.states), rec.empirical_ar


def moments_for(target, dcfg: dict, n_chain: int, rng):
    how = dcfg.get("reference", "auto")
    if how in ("auto", "analytic") and target.analytic_moments is not None:
        return target.analytic_moments
    if how in ("auto", "grid") and target.grid_spec is not None and target.dim <= 2:
        return dg.grid_moments(target)
    if how in ("auto", "chain"):
        return reference_chain_moments(target, max(dcfg["reference_n"], 10 * n_chain), rng)[0]
    raise ValueError(f"no reference moments available for {target.name} with reference={how!r}")


# ----------------------------------------------------------------- sampling


def make_kernel(scfg: dict, proposal):
    kind = scfg["kind"]
    if kind == "imh":
        return mh.IndependentKernel(proposal)
    if kind == "rw":
        return mh.RandomWalkKernel(np.full(proposal.dim, float(scfg["sigma"])))
    if kind == "mixture":
        return mh.MixtureKernel(float(scfg["lam"]), proposal, np.full(proposal.dim, float(scfg["sigma"])))
    raise ConfigError(f"unknown sampler.kind {kind!r}")


def sample_and_score(kernel, target, n, n_chains, burn_in, moments, seed, threshold=0.05, init=None):
    """Run ``n_chains`` independent chains of length ``n``; ESS averaged over chains."""
    records, ess = [], []
    for c in range(n_chains):
        rng = np.random.default_rng([seed, c])
        rec = mh.run_chain(kernel, target, n, burn_in=burn_in, init=init, rng=rng)
        records.append(rec)
        ess.append(dg.ess(rec.states, moments, threshold))
    wall = sum(r.wall_seconds for r in records)
    ess_min = float(np.mean([e.min for e in ess]))
    summary = {
        "empirical_ar": float(np.mean([r.empirical_ar for r in records])),
        "ess": ess_min,
        "ess_mean_dims": float(np.mean([e.mean for e in ess])),
        "ess_per_chain": [e.min for e in ess],
        "n": n,
        "n_chains": n_chains,
        "wall_s": wall,
        "ess_per_s": ess_min * n_chains / wall if wall > 0 else float("inf"),
        "n_nonfinite": int(sum(r.n_nonfinite for r in records)),
    }
    return records, summary


# ----------------------------------------------------------------- end-to-end runs


def run_density_based(cfg: dict, out_dir=None):
    """Train per ``cfg`` then sample; returns (proposal, train result, sampling summary, records)."""
    seed = cfg["train"]["seed"]
    target = build_target(cfg["target"], seed=seed)
    proposal = build_proposal(cfg["proposal"], target)
    tc = train_config(cfg)
    result = train_density_based(target, proposal, tc, out_dir=out_dir)
    scfg = cfg["sampler"]
    moments = moments_for(target, cfg["diagnostics"], scfg["n"], np.random.default_rng([seed, 999]))
    kernel = make_kernel(scfg, proposal)
    records, summary = sample_and_score(
        kernel, target, scfg["n"], scfg["n_chains"], scfg["burn_in"], moments, scfg["seed"],
        cfg["diagnostics"]["ess_threshold"],
    )
    return proposal, result, summary, records, target


def load_samples_csv(path):
    """Samples CSV: header row, then one sample per row (extra leading step/accepted columns ignored)."""
    import csv

    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise targets.DatasetError(f"{path}: no data rows")
    header = rows[0]
    cols = [i for i, h in enumerate(header) if h not in ("step", "accepted")]
    try:
        return np.array([[float(r[i]) for i in cols] for r in rows[1:] if r])
    except (ValueError, IndexError) as exc:
        raise targets.DatasetError(f"{path}: malformed sample row ({exc})") from None


def write_samples_csv(path, samples):
    import csv

    samples = np.atleast_2d(samples)
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"dim{j}" for j in range(samples.shape[1])])
        for row in samples:
            wr.writerow([f"{v:.17g}" for v in row])


def run_sample_based(cfg: dict, data=None, out_dir=None, n_eval=None):
    """Adversarial training, then raw vs MH-filtered grid-KL against the analytic target."""
    seed = cfg["train"]["seed"]
    dcfg = cfg["data"]
    truth = targets.get_target(dcfg["target"])
    if data is None:
        data = truth.sample(dcfg["n"], np.random.default_rng(dcfg["seed"]))
    pcfg = cfg["proposal"]
    gen = GeneratorNet(truth.dim, pcfg["latent"], pcfg["gen_hidden"], seed=seed)
    disc = DiscriminatorNet(truth.dim, pcfg["disc_hidden"], seed=seed + 1)
    result = train_sample_based(data, gen, disc, train_config(cfg), eval_target=truth, out_dir=out_dir)
    n = n_eval or cfg["sampler"]["n"]
    rng = np.random.default_rng([seed, 777])
    raw = np.asarray(gen.generate(n, rng))
    rec = mh.run_chain(mh.DiscriminatorKernel(gen, disc), None, n, burn_in=cfg["sampler"]["burn_in"], rng=rng)
    dgc = cfg["diagnostics"]
    bounds = tuple(tuple(b) for b in dgc["grid_bounds"])
    kl_raw = dg.grid_kl(raw, truth, bins=dgc["grid_bins"], bounds=bounds)
    kl_mh = dg.grid_kl(rec.states, truth, bins=dgc["grid_bins"], bounds=bounds)
    report = {"grid_kl_raw": kl_raw, "grid_kl_mh": kl_mh, "empirical_ar": rec.empirical_ar, "n": n}
    if out_dir is not None:
        write_samples_csv(Path(out_dir) / "raw_samples.csv", raw)
        rec.to_csv(Path(out_dir) / "mh_samples.csv")
    return gen, disc, result, report, raw, rec
