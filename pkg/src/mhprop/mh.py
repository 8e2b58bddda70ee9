"""Metropolis-Hastings kernels, chain execution and rejection sampling.

All acceptance tests are done in the log domain: a proposal is accepted iff
log u < min(0, log ratio) with u ~ U[0, 1).
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .kernels import imh_scan

CHUNK = 8192


@dataclass
class ChainRecord:
    states: np.ndarray
    accepted: np.ndarray
    log_ratio: np.ndarray
    empirical_ar: float
    wall_seconds: float
    n_nonfinite: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.states.shape[0]

    def summary(self) -> dict:
        return {
            "n": len(self),
            "empirical_ar": float(self.empirical_ar),
            "wall_seconds": float(self.wall_seconds),
            "n_nonfinite": int(self.n_nonfinite),
            **self.meta,
        }

    def to_csv(self, path):
        path = Path(path)
        dim = self.states.shape[1]
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "accepted"] + [f"dim{j}" for j in range(dim)])
            for t in range(len(self)):
                wr.writerow([t, int(self.accepted[t])] + [f"{v:.17g}" for v in self.states[t]])

    @classmethod
    def from_csv(cls, path) -> "ChainRecord":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        body = np.array([[float(c) for c in r] for r in rows[1:] if r])
        accepted = body[:, 1].astype(bool)
        return cls(body[:, 2:], accepted, np.full(len(body), np.nan), float(accepted.mean()), 0.0)

    def save_summary(self, path, **extra):
        Path(path).write_text(json.dumps({**self.summary(), **extra}, indent=2, sort_keys=True))


# ----------------------------------------------------------------- kernels


@dataclass
class IndependentKernel:
    """q(x'|x) = q(x') for an explicit proposal with ``sample`` and ``log_prob``."""

    proposal: object

    def draw(self, n, rng, target):
        x, logq = self.proposal.sample(n, rng)
        return np.asarray(x), np.asarray(target.log_unnorm(np.asarray(x)) - logq)

    def log_weight(self, x, target):
        x = np.atleast_2d(x)
        return target.log_unnorm(x) - self.proposal.log_prob(x)


@dataclass
class DiscriminatorKernel:
    """Independent MH with an implicit proposal; p/q is estimated as d/(1-d)."""

    generator: object
    discriminator: object

    def draw(self, n, rng, target=None):
        x = np.asarray(self.generator.generate(n, rng))
        return x, np.asarray(self.discriminator.log_ratio(x))

    def log_weight(self, x, target=None):
        return np.asarray(self.discriminator.log_ratio(np.atleast_2d(x)))


@dataclass
class RandomWalkKernel:
    sigma: np.ndarray

    def __post_init__(self):
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))


@dataclass
class MixtureKernel:
    """q(x'|x) = lam q*(x') + (1 - lam) N(x' | x, sigma^2)."""

    lam: float
    proposal: object
    sigma: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))

    def log_density(self, xp, x, logq_xp):
        """log q(x'|x) given log q*(x')."""
        d = (xp - x) / self.sigma
        log_rw = -0.5 * np.sum(d * d, axis=-1) - np.sum(np.log(self.sigma)) - 0.5 * xp.shape[-1] * np.log(2 * np.pi)
        with np.errstate(divide="ignore"):
            return logsumexp(
                np.stack([np.log(self.lam) + logq_xp, np.log1p(-self.lam) + log_rw * np.ones_like(logq_xp)]), axis=0
            )


# ----------------------------------------------------------------- single steps


def _accept(log_ratio, rng):
    log_u = np.log(rng.random())
    return bool(np.isfinite(log_ratio) and log_u < min(0.0, log_ratio))


def imh_step(x, target, proposal, rng):
    """One independent MH step from state ``x``; returns (x_next, accepted, log_ratio)."""
    x = np.asarray(x, dtype=np.float64)
    xp, logq_xp = proposal.sample(1, rng)
    xp = np.asarray(xp)[0]
    log_ratio = float(
        target.logp(xp) + proposal.log_prob(x[None])[0] - target.logp(x) - np.asarray(logq_xp)[0]
    )
    acc = _accept(log_ratio, rng)
    return (xp if acc else x), acc, log_ratio


def mixture_step(x, target, kernel: MixtureKernel, rng):
    """One MH step with the independent/random-walk mixture proposal."""
    x = np.asarray(x, dtype=np.float64)
    lam = kernel.lam
    use_indep = lam == 1.0 or (lam > 0.0 and rng.random() < lam)
    if use_indep:
        xp, logq_xp = kernel.proposal.sample(1, rng)
        xp, logq_xp = np.asarray(xp)[0], float(np.asarray(logq_xp)[0])
    else:
        xp = x + kernel.sigma * rng.standard_normal(x.shape[0])
        logq_xp = float(kernel.proposal.log_prob(xp[None])[0]) if lam > 0 else -np.inf
    logq_x = float(kernel.proposal.log_prob(x[None])[0]) if lam > 0 else -np.inf
    fwd = kernel.log_density(xp, x, np.array(logq_xp))
    rev = kernel.log_density(x, xp, np.array(logq_x))
    log_ratio = float(target.logp(xp) + rev - target.logp(x) - fwd)
    acc = _accept(log_ratio, rng)
    return (xp if acc else x), acc, log_ratio


# ----------------------------------------------------------------- chains


def _initial_state(kernel, target, init, rng):
    if init is None or (isinstance(init, str) and init.lower() in ("proposal", "fromproposal")):
        if isinstance(kernel, RandomWalkKernel):
            raise ValueError("random-walk chains need an explicit initial state")
        src = kernel if not isinstance(kernel, MixtureKernel) else IndependentKernel(kernel.proposal)
        x0, _ = src.draw(1, rng, target)
        return x0[0]
    return np.asarray(init, dtype=np.float64).copy()


def run_chain(kernel, target, T: int, burn_in: int = 100, init=None, rng=None, seed=None) -> ChainRecord:
    """Run ``burn_in + T`` steps and keep the last ``T``.

    ``init`` is a state, or None / "proposal" to draw the first state from
    the proposal.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    t0 = time.perf_counter()
    x0 = _initial_state(kernel, target, init, rng)
    total = burn_in + T
    if isinstance(kernel, (IndependentKernel, DiscriminatorKernel)):
        xs, lws = [], []
        for start in range(0, total, CHUNK):
            xb, lwb = kernel.draw(min(CHUNK, total - start), rng, target)
            xs.append(xb)
            lws.append(lwb)
        props, log_w = np.concatenate(xs), np.concatenate(lws).astype(np.float64)
        log_u = np.log(rng.random(total))
        lw0 = float(np.asarray(kernel.log_weight(x0[None], target))[0])
        idx, accepted, log_ratio, bad = imh_scan(log_w, lw0, log_u)
        states = np.where((idx < 0)[:, None], x0[None, :], props[np.maximum(idx, 0)])
    else:
        states = np.empty((total, x0.shape[0]))
        accepted = np.zeros(total, dtype=bool)
        log_ratio = np.empty(total)
        x, bad = x0, 0
        for t in range(total):
            if isinstance(kernel, RandomWalkKernel):
                xp = x + kernel.sigma * rng.standard_normal(x.shape[0])
                lr = float(target.logp(xp) - target.logp(x))
                acc = _accept(lr, rng)
                x = xp if acc else x
            else:
                x, acc, lr = mixture_step(x, target, kernel, rng)
            bad += int(not np.isfinite(lr))
            states[t], accepted[t], log_ratio[t] = x, acc, lr
    keep = slice(burn_in, total)
    rec = ChainRecord(
        states[keep].copy(),
        np.asarray(accepted[keep]).copy(),
        np.asarray(log_ratio[keep]).copy(),
        float(np.mean(accepted[keep])),
        time.perf_counter() - t0,
        int(bad),
    )
    return rec


# ----------------------------------------------------------------- rejection sampling


def estimate_envelope(target, proposal, points, safety: float = 1.05) -> float:
    """M = safety * max p̂/q over ``points`` (e.g. the nodes of a grid)."""
    points = np.atleast_2d(points)
    log_ratio = target.log_unnorm(points) - np.asarray(proposal.log_prob(points))
    return float(safety * np.exp(np.max(log_ratio)))


def rejection_sample(target, proposal, M: float, n: int, rng, check_points=None):
    """Draw ``n`` proposals, accept each with probability p̂(x') / (M q(x')).

    Returns (accepted samples, acceptance fraction, count of proposals where
    the envelope was violated).
    """
    if check_points is not None:
        m_grid = estimate_envelope(target, proposal, check_points, safety=1.0)
        if m_grid > M:
            warnings.warn(f"envelope M={M:g} below grid maximum {m_grid:g}", RuntimeWarning, stacklevel=2)
    out, n_acc, violations = [], 0, 0
    log_m = np.log(M)
    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        xp, logq = proposal.sample(m, rng)
        xp = np.asarray(xp)
        log_a = target.log_unnorm(xp) - log_m - np.asarray(logq)
        violations += int(np.sum(log_a > 0))
        keep = np.log(rng.random(m)) < log_a
        n_acc += int(keep.sum())
        out.append(xp[keep])
    if violations:
        warnings.warn(f"{violations} proposals exceeded the envelope (M too small)", RuntimeWarning, stacklevel=2)
    return np.concatenate(out), n_acc / n, violations
