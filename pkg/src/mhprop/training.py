"""Training loops for independent proposals.

``train_density_based`` alternates MH buffer refreshes with gradient steps on
the proposal. ``train_sample_based`` trains an implicit generator against a
pointwise discriminator from samples only.

Every iteration ``it`` draws its randomness from ``default_rng([seed, it])``,
so a run resumed from a checkpoint replays the uninterrupted schedule exactly.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ad, checkpoint
from .ad import AdamState, ParamVector
from .kernels import imh_scan, repeat_cap_mask
from .nets import disc_loss
from .objectives import LossKind, bayes_objective, generator_loss, log_ratios, make_loss_program

# ----------------------------------------------------------------- config


@dataclass
class TrainConfig:
    loss: str = "ARLB"
    iterations: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    buffer_refresh: int = 64  # total MH steps per iteration, split across replicas
    n_chains: int = 1
    buffer_capacity: int = 10000
    burn_in: int = 100
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables intermediate checkpoints
    eval_every: int = 10
    repeat_cap: int = 8
    repeat_cap_warmup: int = 200  # iterations during which the repeat cap is active
    k_d: int = 5
    minibatch: int = 0  # > 0 switches logistic posteriors to the minibatch objective
    final_disc_steps: int = 500

    def __post_init__(self):
        self.loss = LossKind.parse(self.loss).value
        for name in ("iterations", "batch_size", "buffer_refresh", "n_chains", "buffer_capacity", "eval_every", "repeat_cap", "k_d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"train.{name} must be positive")
        for name in ("burn_in", "checkpoint_every", "repeat_cap_warmup", "minibatch", "final_disc_steps", "seed"):
            if getattr(self, name) < 0:
                raise ValueError(f"train.{name} must be non-negative")
        if not self.lr > 0:
            raise ValueError("train.lr must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def iteration_rng(seed: int, it: int):
    return np.random.default_rng([seed, it])


# ----------------------------------------------------------------- buffer


class SampleBuffer:
    """FIFO ring of chain states, each tagged with the iteration whose proposal produced it."""

    def __init__(self, capacity: int, dim: int):
        self.capacity, self.dim = int(capacity), int(dim)
        self.storage = np.zeros((self.capacity, self.dim))
        self.tags = np.zeros(self.capacity, dtype=np.int64)
        self.fill = 0
        self.head = 0  # next write position

    def __len__(self):
        return self.fill

    def push(self, states, tag: int):
        states = np.atleast_2d(states)
        for row in states[-self.capacity :]:
            self.storage[self.head] = row
            self.tags[self.head] = tag
            self.head = (self.head + 1) % self.capacity
            self.fill = min(self.fill + 1, self.capacity)

    def sample(self, k: int, rng) -> np.ndarray:
        if self.fill < k:
            raise ValueError(f"buffer holds {self.fill} states, need {k}")
        return self.storage[rng.choice(self.fill, size=k, replace=False)].copy()

    def ordered(self):
        """(states, tags) oldest first."""
        if self.fill < self.capacity:
            return self.storage[: self.fill].copy(), self.tags[: self.fill].copy()
        order = np.roll(np.arange(self.capacity), -self.head)
        return self.storage[order].copy(), self.tags[order].copy()

    @classmethod
    def restore(cls, capacity, states, tags) -> "SampleBuffer":
        buf = cls(capacity, np.shape(states)[1])
        n = len(states)
        buf.storage[:n], buf.tags[:n] = states, tags
        buf.fill, buf.head = n, n % buf.capacity
        return buf


# ----------------------------------------------------------------- density-based training


@dataclass
class TrainState:
    params: ParamVector
    adam: AdamState
    buffer: SampleBuffer
    x_cur: np.ndarray  # (n_chains, D)
    run_len: np.ndarray  # (n_chains,) current repeat run per replica
    iteration: int = 0
    window: np.ndarray = field(default_factory=lambda: np.zeros(5))  # loss, sym-KL, accepts, steps, iters
    metrics: list = field(default_factory=list)
    elapsed: float = 0.0


@dataclass
class TrainResult:
    params: ParamVector
    metrics: list
    state: object


def _refresh(target, proposal, state: TrainState, steps: int, rng, push: bool, cap: int):
    """Extend every replica chain by ``steps / n_chains`` IMH steps under the current proposal.

    Replicas share one batched proposal draw; their states are pushed to the
    buffer in replica order. Returns (accepted count, steps taken).
    """
    P = state.params.views()
    n_chains = state.x_cur.shape[0]
    per_chain = -(-steps // n_chains)
    eps = rng.standard_normal((n_chains * per_chain, proposal.dim))
    xp, logq = proposal.transform_noise(eps, P)
    log_w = (target.log_unnorm(xp) - logq).reshape(n_chains, per_chain)
    xp = xp.reshape(n_chains, per_chain, proposal.dim)
    # held states' weights are recomputed under the current parameters
    log_w0 = target.log_unnorm(state.x_cur) - proposal.log_prob(state.x_cur, P)
    log_u = np.log(rng.random((n_chains, per_chain)))
    n_acc = 0
    for c in range(n_chains):
        idx, accepted, _, _ = imh_scan(np.ascontiguousarray(log_w[c]), float(log_w0[c]), log_u[c])
        states = np.where((idx < 0)[:, None], state.x_cur[c][None], xp[c][np.maximum(idx, 0)])
        state.x_cur[c] = states[-1]
        if push:
            keep, state.run_len[c] = repeat_cap_mask(accepted, int(state.run_len[c]), cap)
            state.buffer.push(states[keep], state.iteration)
        n_acc += int(accepted.sum())
    return n_acc, n_chains * per_chain


def _initial_state(target, proposal, cfg: TrainConfig) -> TrainState:
    rng = iteration_rng(cfg.seed, 0)
    x0, _ = proposal.sample(cfg.n_chains, rng)
    state = TrainState(
        params=proposal.params.copy(),
        adam=AdamState.zeros(proposal.params.size),
        buffer=SampleBuffer(cfg.buffer_capacity, proposal.dim),
        x_cur=np.array(x0, dtype=np.float64),
        run_len=np.zeros(cfg.n_chains, dtype=np.int64),
    )
    if cfg.burn_in:
        _refresh(target, proposal, state, cfg.burn_in * cfg.n_chains, rng, push=False, cap=cfg.repeat_cap)
    return state


def _loss_program(target, proposal, cfg: TrainConfig):
    data = target.extra.get("dataset") if target.extra else None
    if cfg.minibatch and data is not None:
        flip = target.extra.get("flip_bias_sign", False)

        def program(P, inputs):
            return bayes_objective(proposal, P, data, inputs["eps"], inputs["batch_idx"], inputs["x"], flip)

        return program
    return make_loss_program(cfg.loss, target, proposal)


def train_density_based(target, proposal, cfg: TrainConfig, out_dir=None, resume: TrainState | None = None):
    """Learn ``proposal`` from MH-corrected buffer samples; returns TrainResult.

    Metrics records (every ``eval_every`` iterations) average over the window
    since the previous record: ``loss`` and ``arlb_est`` (Pinsker bound from
    the sym-KL estimate) per iteration, ``ar_window`` per refresh step.
    """
    kind = LossKind.parse(cfg.loss)
    program = _loss_program(target, proposal, cfg)
    state = resume if resume is not None else _initial_state(target, proposal, cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    t_start = time.perf_counter() - state.elapsed
    data = target.extra.get("dataset") if target.extra else None
    use_bayes = bool(cfg.minibatch and data is not None)

    while state.iteration < cfg.iterations:
        state.iteration += 1
        it = state.iteration
        rng = iteration_rng(cfg.seed, it)
        # after warmup, repeats are pushed as the chain produced them
        cap = cfg.repeat_cap if it <= cfg.repeat_cap_warmup else np.iinfo(np.int64).max
        accepts, steps = _refresh(target, proposal, state, cfg.buffer_refresh, rng, True, cap)
        while state.buffer.fill < cfg.batch_size:
            more, more_steps = _refresh(target, proposal, state, cfg.buffer_refresh, rng, True, cap)
            accepts, steps = accepts + more, steps + more_steps

        x = state.buffer.sample(cfg.batch_size, rng)
        eps = rng.standard_normal((cfg.batch_size, proposal.dim))
        inputs = {"x": x, "eps": eps, "logp_x": target.log_unnorm(x)}
        if use_bayes:
            inputs["batch_idx"] = np.sort(rng.choice(data.n, size=min(cfg.minibatch, data.n), replace=False))
        rec = ad.value_and_grad(program, state.params, inputs)
        if kind is LossKind.ARLB and not use_bayes:
            sym_kl = rec.loss
        else:
            r = log_ratios(target, proposal, state.params.views(), x, eps, inputs["logp_x"])
            sym_kl = -float(np.mean(r))
        state.params = ad.adam_step(state.params, rec.grad, state.adam, cfg.lr)

        state.window += np.array([rec.loss, sym_kl, accepts, steps, 1.0])
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            loss_m, kl_m, acc, n_steps, n_it = state.window
            state.metrics.append(
                {
                    "iter": it,
                    "loss": loss_m / n_it,
                    "loss_kind": "BAYES" if use_bayes else kind.value,
                    "ar_window": acc / n_steps,
                    "arlb_est": 1.0 - float(np.sqrt(max(0.0, kl_m / n_it) / 2.0)),
                    "wall_s": time.perf_counter() - t_start,
                }
            )
            state.window = np.zeros(5)
        state.elapsed = time.perf_counter() - t_start
        if out_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_training_checkpoint(out_dir / "checkpoint", proposal, state, cfg)

    proposal.params = state.params
    if out_dir is not None:
        save_training_checkpoint(out_dir / "checkpoint", proposal, state, cfg)
        write_metrics(out_dir / "metrics.jsonl", state.metrics)
    return TrainResult(state.params, state.metrics, state)


def write_metrics(path, metrics):
    with Path(path).open("w") as fh:
        for m in metrics:
            fh.write(json.dumps(m, sort_keys=True) + "\n")


def read_metrics(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


# ----------------------------------------------------------------- checkpoints


def _layout_json(params: ParamVector):
    return [[name, offset, list(shape)] for name, offset, shape in params.layout]


def _layout_from_json(layout):
    return [(name, offset, tuple(shape)) for name, offset, shape in layout]


def save_training_checkpoint(path, proposal, state: TrainState, cfg: TrainConfig):
    states, tags = state.buffer.ordered()
    arrays = {
        "params": state.params.values,
        "adam_m": state.adam.m,
        "adam_v": state.adam.v,
        "buffer_states": states,
        "buffer_tags": tags.astype(np.float64),
        "x_cur": state.x_cur,
        "window": state.window,
    }
    meta = {
        "kind": "density_based",
        "proposal": proposal.metadata(),
        "D": proposal.dim,
        "seed": cfg.seed,
        "layout": _layout_json(state.params),
        "iteration": state.iteration,
        "adam_step": state.adam.step,
        "run_len": [int(r) for r in state.run_len],
        "elapsed": state.elapsed,
        "metrics": state.metrics,
        "config": cfg.to_dict(),
    }
    return checkpoint.save(path, arrays, meta)


def load_training_checkpoint(path, proposal=None):
    """Returns (TrainState, meta). With ``proposal`` given, its dimension and layout must match."""
    arrays, meta = checkpoint.load(path)
    if meta.get("kind") != "density_based":
        raise checkpoint.CheckpointError(f"not a density-based training checkpoint: {meta.get('kind')}")
    layout = _layout_from_json(meta["layout"])
    if proposal is not None:
        if proposal.dim != meta["D"]:
            raise checkpoint.CheckpointError(f"checkpoint has D={meta['D']}, proposal has D={proposal.dim}")
        if proposal.params.layout != layout:
            raise checkpoint.CheckpointError("parameter layout does not match the proposal architecture")
    params = ParamVector(arrays["params"], layout)
    adam = AdamState(arrays["adam_m"], arrays["adam_v"], int(meta["adam_step"]))
    buffer = SampleBuffer.restore(meta["config"]["buffer_capacity"], arrays["buffer_states"], arrays["buffer_tags"].astype(np.int64))
    state = TrainState(
        params=params,
        adam=adam,
        buffer=buffer,
        x_cur=arrays["x_cur"],
        run_len=np.array(meta["run_len"], dtype=np.int64),
        iteration=int(meta["iteration"]),
        window=arrays["window"],
        metrics=list(meta["metrics"]),
        elapsed=float(meta["elapsed"]),
    )
    return state, meta


def save_model(path, model):
    """Weights-only checkpoint for a proposal, generator or discriminator."""
    meta = {**model.metadata(), "layout": _layout_json(model.params)}
    return checkpoint.save(path, {"params": model.params.values}, meta)


def load_model(path):
    from .flows import FlowProposal, GaussianProposal
    from .nets import ConditionalGeneratorNet, DiscriminatorNet, GeneratorNet, PairDiscriminator

    arrays, meta = checkpoint.load(path)
    params = ParamVector(arrays["params"], _layout_from_json(meta["layout"]))
    kind = meta.get("kind")
    if kind == "flow":
        return FlowProposal.from_metadata(meta, params)
    if kind == "gaussian":
        return GaussianProposal.from_metadata(meta, params)
    nets = {
        "generator": GeneratorNet,
        "conditional_generator": ConditionalGeneratorNet,
        "discriminator": DiscriminatorNet,
        "pair_discriminator": PairDiscriminator,
    }
    if kind not in nets:
        raise checkpoint.CheckpointError(f"unknown model kind {kind!r}")
    kw = {k: meta[k] for k in ("dim", "latent", "hidden") if k in meta}
    model = nets[kind](**kw)
    if model.params.layout != params.layout:
        raise checkpoint.CheckpointError(f"{kind}: parameter layout mismatch")
    model.params = params
    return model


# ----------------------------------------------------------------- sample-based training


def _disc_accuracy(disc, real, fake):
    return 0.5 * (np.mean(disc.prob(real) > 0.5) + np.mean(disc.prob(fake) < 0.5))


def ratio_mae(disc, gen, target, n, rng) -> float:
    """Mean |d(x) - p(x) / (p(x) + q(x))| at generator samples, q by Gaussian KDE."""
    from scipy.stats import gaussian_kde

    fit = np.asarray(gen.generate(n, rng))
    pts = np.asarray(gen.generate(n, rng))
    log_q = gaussian_kde(fit.T).logpdf(pts.T)
    log_p = target.logp(pts)
    d_star = np.exp(log_p - np.logaddexp(log_p, log_q))
    return float(np.mean(np.abs(disc.prob(pts) - d_star)))


def _disc_step(disc, gen, data, cfg, adam_d, rng):
    real = data[rng.choice(len(data), size=cfg.batch_size, replace=False)]
    fake = np.asarray(gen.generate(cfg.batch_size, rng))
    rec = ad.value_and_grad(lambda P, _: disc_loss(disc, P, real, fake), disc.params)
    disc.params = ad.adam_step(disc.params, rec.grad, adam_d, cfg.lr)
    return rec.loss, real, fake


def fit_discriminator(disc, gen, data, cfg: TrainConfig, steps: int, adam_d=None, start: int = 0):
    """Train ``disc`` alone for ``steps`` Adam steps with ``gen`` held fixed; returns the last BCE."""
    data = np.asarray(data, dtype=np.float64)
    adam_d = adam_d or AdamState.zeros(disc.params.size)
    loss = float("nan")
    for j in range(steps):
        loss = _disc_step(disc, gen, data, cfg, adam_d, iteration_rng(cfg.seed, start + j))[0]
    return loss


def train_sample_based(data, generator, discriminator, cfg: TrainConfig, eval_target=None, out_dir=None):
    """Adversarial training of ``generator`` with the discriminator ratio in the generator loss.

    Per iteration: ``k_d`` discriminator steps on binary cross-entropy, then
    one generator step. Afterwards ``final_disc_steps`` extra discriminator
    steps fit d to the final generator before it is used for MH filtering.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) < cfg.batch_size:
        raise ValueError("need at least batch_size data points")
    kind = LossKind.parse(cfg.loss)
    adam_g = AdamState.zeros(generator.params.size)
    adam_d = AdamState.zeros(discriminator.params.size)
    metrics, t0 = [], time.perf_counter()

    for it in range(1, cfg.iterations + 1):
        rng = iteration_rng(cfg.seed, it)
        for _ in range(cfg.k_d):
            l_d, real, fake = _disc_step(discriminator, generator, data, cfg, adam_d, rng)
        z = rng.standard_normal((cfg.batch_size, generator.latent))
        x_real = data[rng.choice(len(data), size=cfg.batch_size, replace=False)]
        rec = ad.value_and_grad(lambda P, _: generator_loss(kind, generator, discriminator, P, z, x_real), generator.params)
        generator.params = ad.adam_step(generator.params, rec.grad, adam_g, cfg.lr)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            m = {
                "iter": it,
                "loss": rec.loss,
                "loss_kind": kind.value,
                "disc_loss": l_d,
                "disc_acc": float(_disc_accuracy(discriminator, real, fake)),
                "wall_s": time.perf_counter() - t0,
            }
            if eval_target is not None:
                m["ratio_mae"] = ratio_mae(discriminator, generator, eval_target, 1000, np.random.default_rng([cfg.seed, it, 1]))
            metrics.append(m)

    fit_discriminator(discriminator, generator, data, cfg, cfg.final_disc_steps, adam_d, start=cfg.iterations + 1)

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_model(out_dir / "generator", generator)
        save_model(out_dir / "discriminator", discriminator)
        write_metrics(out_dir / "metrics.jsonl", metrics)
    return TrainResult((generator.params, discriminator.params), metrics, None)
