"""Target densities (synthetic 2-D/50-D benchmarks, 1-D toy) and logistic posteriors.

Every target is vectorized: ``log_unnorm`` maps a batch (n, D) to (n,) and
``grad_log_unnorm`` to (n, D). Mixture sigmas are per-dimension standard
deviations, except ``mog`` whose variance is given explicitly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from . import ad

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned tensor grid: per-axis ``bounds`` and node count ``resolution``."""

    bounds: tuple  # ((lo, hi), ...) one pair per dim
    resolution: int

    @property
    def dim(self) -> int:
        return len(self.bounds)


@dataclass
class TargetDensity:
    name: str
    dim: int
    log_unnorm: Callable
    grad_log_unnorm: Callable
    normalized: bool = False
    analytic_moments: Optional[tuple] = None  # (mean[D], var[D])
    grid_spec: Optional[GridSpec] = None
    modes: Optional[np.ndarray] = None
    sampler: Optional[Callable] = None  # (n, rng) -> (n, D), exact samples when available
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def logp(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            if x.shape[0] != self.dim:
                raise ValueError(f"{self.name}: expected dim {self.dim}, got {x.shape[0]}")
            return float(self.log_unnorm(x[None, :])[0])
        if x.shape[-1] != self.dim:
            raise ValueError(f"{self.name}: expected dim {self.dim}, got {x.shape[-1]}")
        return self.log_unnorm(x)

    def grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.grad_log_unnorm(x)

    def tape(self, x):
        """log p̂ of a (possibly tape-tracked) batch, differentiable w.r.t. x."""
        return ad.extern(x, self.log_unnorm, self.grad_log_unnorm, name=f"target:{self.name}")

    def sample(self, n: int, rng) -> np.ndarray:
        if self.sampler is None:
            raise NotImplementedError(f"{self.name} has no exact sampler")
        return self.sampler(n, rng)


# ----------------------------------------------------------------- building blocks


def _grid2(lo=-8.0, hi=8.0, res=400, dim=2):
    return GridSpec(tuple((lo, hi) for _ in range(dim)), res)


def _safe_unit(x, r):
    out = np.zeros_like(x)
    nz = r > 0
    out[nz] = x[nz] / r[nz, None]
    return out


def gaussian_mixture(name, means, stds, weights=None, grid=None) -> TargetDensity:
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    stds = np.broadcast_to(np.asarray(stds, dtype=np.float64), means.shape).copy()
    k, dim = means.shape
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    log_w = np.log(weights)
    log_norm = -0.5 * dim * LOG_2PI - np.log(stds).sum(axis=1)

    def comp_logp(x):
        z = (x[:, None, :] - means[None]) / stds[None]
        return log_w + log_norm - 0.5 * np.sum(z * z, axis=2)

    def log_unnorm(x):
        return logsumexp(comp_logp(x), axis=1)

    def grad(x):
        lc = comp_logp(x)
        resp = np.exp(lc - logsumexp(lc, axis=1, keepdims=True))
        g = -(x[:, None, :] - means[None]) / (stds[None] ** 2)
        return np.einsum("nk,nkd->nd", resp, g)

    mean = weights @ means
    var = weights @ (stds**2 + means**2) - mean**2

    def sampler(n, rng):
        comp = rng.choice(k, size=n, p=weights)
        return means[comp] + stds[comp] * rng.standard_normal((n, dim))

    return TargetDensity(
        name,
        dim,
        log_unnorm,
        grad,
        normalized=True,
        analytic_moments=(mean, var),
        grid_spec=grid if grid is not None else (_grid2(dim=dim) if dim <= 2 else None),
        modes=means.copy(),
        sampler=sampler,
    )


def gaussian(name, mean, cov, grid=None) -> TargetDensity:
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    dim = mean.shape[0]
    prec = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    const = -0.5 * (dim * LOG_2PI + logdet)
    chol = np.linalg.cholesky(cov)

    def log_unnorm(x):
        d = x - mean
        return const - 0.5 * np.einsum("ni,ij,nj->n", d, prec, d)

    def grad(x):
        return -(x - mean) @ prec

    def sampler(n, rng):
        return mean + rng.standard_normal((n, dim)) @ chol.T

    return TargetDensity(
        name,
        dim,
        log_unnorm,
        grad,
        normalized=True,
        analytic_moments=(mean.copy(), np.diag(cov).copy()),
        grid_spec=grid,
        sampler=sampler,
        extra={"cov": cov},
    )


# ----------------------------------------------------------------- named targets


def ring_logp(x):
    """Ring of radius 2: log p̂ = -(|x| - 2)^2 / 0.32."""
    x = np.atleast_2d(x)
    r = np.sqrt(np.sum(x * x, axis=1))
    return -((r - 2.0) ** 2) / 0.32


def _ring_grad(x):
    r = np.sqrt(np.sum(x * x, axis=1))
    return (-2.0 * (r - 2.0) / 0.32)[:, None] * _safe_unit(x, r)


def ring5_logp(x):
    """Five concentric rings: log p̂ = -min_i (|x| - i)^2 / 0.04, i = 1..5."""
    x = np.atleast_2d(x)
    r = np.sqrt(np.sum(x * x, axis=1))
    u = (r[:, None] - np.arange(1, 6)[None, :]) ** 2 / 0.04
    return -u.min(axis=1)


def _ring5_grad(x):
    r = np.sqrt(np.sum(x * x, axis=1))
    radii = np.arange(1, 6)
    nearest = radii[np.argmin((r[:, None] - radii) ** 2, axis=1)]
    return (-2.0 * (r - nearest) / 0.04)[:, None] * _safe_unit(x, r)


ROUGHWELL_ETA = 1e-2


def roughwell_logp(x, eta=ROUGHWELL_ETA):
    x = np.atleast_2d(x)
    return -(0.5 * np.sum(x * x, axis=1) + eta * np.sum(np.cos(x / eta), axis=1))


def _roughwell_grad(x, eta=ROUGHWELL_ETA):
    return -x + np.sin(x / eta)


def bimodal1d_logp(x):
    """0.5 N(-2, 0.5^2) + 0.5 N(2, 0.7^2), for a scalar or array of scalars."""
    x = np.asarray(x, dtype=np.float64)
    return BIMODAL1D.log_unnorm(x.reshape(-1, 1)).reshape(x.shape)


def mog_logp(x, spec: str = "mog2"):
    return get_target(spec).logp(x)


def gauss_logp(x, kind: str):
    return get_target(kind.lower()).logp(x)


def _mog6_means():
    i = np.arange(1, 7)
    return np.stack([np.sin(i * np.pi / 3), np.cos(i * np.pi / 3)], axis=1)


SCG_ROTATION = np.array([[1.0, -1.0], [1.0, 1.0]]) / np.sqrt(2.0)

BIMODAL1D = gaussian_mixture(
    "bimodal1d", [[-2.0], [2.0]], [[0.5], [0.7]], grid=GridSpec(((-10.0, 10.0),), 4000)
)


def _named(name: str, **kw) -> TargetDensity:
    if name == "ring":
        return TargetDensity("ring", 2, ring_logp, _ring_grad, grid_spec=_grid2())
    if name == "ring5":
        return TargetDensity("ring5", 2, ring5_logp, _ring5_grad, grid_spec=_grid2())
    if name == "mog2":
        return gaussian_mixture("mog2", [[5.0, 0.0], [-5.0, 0.0]], [0.5, 0.5])
    if name == "mog6":
        return gaussian_mixture("mog6", _mog6_means(), [0.5, 0.5])
    if name == "mog":
        return gaussian_mixture("mog", [[2.0, 0.0], [-2.0, 0.0]], np.sqrt([0.1, 0.1]))
    if name == "icg":
        return gaussian("icg", np.zeros(50), np.diag(np.logspace(-2, 2, 50)))
    if name == "scg":
        cov = SCG_ROTATION @ np.diag([1e-2, 1e2]) @ SCG_ROTATION.T
        return gaussian("scg", np.zeros(2), cov, grid=_grid2(-40.0, 40.0, 1600))
    if name == "roughwell":
        return TargetDensity(
            "roughwell", 2, roughwell_logp, _roughwell_grad, grid_spec=_grid2(-6.0, 6.0, 1200)
        )
    if name == "bimodal1d":
        return BIMODAL1D
    if name == "normal":
        dim = int(kw.get("dim", 2))
        grid = _grid2(dim=dim) if dim <= 2 else None
        return gaussian("normal", np.zeros(dim), np.eye(dim), grid=grid)
    raise KeyError(f"unknown target '{name}'")


SYNTHETIC_TARGETS = ("ring", "mog2", "mog6", "ring5", "icg", "scg", "roughwell", "mog", "bimodal1d", "normal")


def get_target(name: str, **kw) -> TargetDensity:
    """Look up a synthetic target by name, or ``logistic`` with ``dataset=``."""
    name = name.lower()
    if name == "logistic":
        return logistic_posterior(kw["dataset"], flip_bias_sign=kw.get("flip_bias_sign", False))
    return _named(name, **kw)


# ----------------------------------------------------------------- logistic regression


EXPECTED_SHAPES = {"german": (1000, 25), "heart": (532, 14), "australian": (690, 15)}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LogisticDataset:
    covariates: np.ndarray  # (N, d), standardized
    labels: np.ndarray  # (N,) in {0, 1}
    name: str

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]


def standardize(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    if np.any(sd == 0):
        cols = np.flatnonzero(sd == 0).tolist()
        raise DatasetError(f"zero variance column(s) {cols}")
    return (x - mu) / sd


def load_dataset(path, name: Optional[str] = None) -> LogisticDataset:
    """Read a headered CSV whose last column is a binary label."""
    path = Path(path)
    name = name or path.stem
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DatasetError(f"{path}: no data rows")
    header, body = rows[0], [r for r in rows[1:] if r]
    if any(len(r) != len(header) for r in body):
        raise DatasetError(f"{path}: ragged rows")
    try:
        table = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric cell ({exc})") from None
    x, y = table[:, :-1], table[:, -1]
    expected = EXPECTED_SHAPES.get(name)
    if expected is not None and x.shape[1] != expected[1]:
        raise DatasetError(f"{name}: expected {expected[1]} covariates, found {x.shape[1]}")
    values = np.unique(y)
    if values.size != 2:
        raise DatasetError(f"{path}: labels must take exactly two distinct values, got {values.tolist()}")
    labels = (y == values[1]).astype(np.float64)
    return LogisticDataset(standardize(x), labels, name)


def synthesize_dataset(name: str, seed: int = 0, path=None) -> LogisticDataset:
    """Simulated stand-in with the shape of a named UCI dataset.

    Covariates are correlated Gaussians and labels follow a logistic model
    with random weights. Written to ``path`` as CSV when given.
    """
    n, d = EXPECTED_SHAPES[name]
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((d, d)) / np.sqrt(d)
    x = rng.standard_normal((n, d)) @ (np.eye(d) + 0.5 * mix)
    w = rng.standard_normal(d) * 0.7
    logits = standardize(x) @ w + 0.3
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{j}" for j in range(d)] + ["label"])
            for row, label in zip(x, y):
                wr.writerow([repr(float(v)) for v in row] + [int(label)])
    return LogisticDataset(standardize(x), y.astype(np.float64), name)


def _log_logistic(z):
    return -np.logaddexp(0.0, -z)


def logistic_posterior_logp(theta, data: LogisticDataset, flip_bias_sign: bool = False):
    """Unnormalized log posterior of Bayesian logistic regression, N(0, 1) prior.

    ``theta = [weights (d), bias]`` and p(y=1 | x) = logistic(x·w - b); with
    ``flip_bias_sign`` the link is logistic(x·w + b).
    """
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    w, b = theta[:, :-1], theta[:, -1]
    z = w @ data.covariates.T + (b if flip_bias_sign else -b)[:, None]
    y = data.labels[None, :]
    loglik = np.sum(y * _log_logistic(z) + (1.0 - y) * _log_logistic(-z), axis=1)
    logprior = -0.5 * np.sum(theta * theta, axis=1) - 0.5 * theta.shape[1] * LOG_2PI
    out = loglik + logprior
    return float(out[0]) if single else out


def logistic_loglik(theta, data: LogisticDataset, idx=None, flip_bias_sign=False):
    """Per-θ log-likelihood summed over rows ``idx`` (all rows by default)."""
    theta = np.atleast_2d(theta)
    x = data.covariates if idx is None else data.covariates[idx]
    yv = data.labels if idx is None else data.labels[idx]
    w, b = theta[:, :-1], theta[:, -1]
    z = w @ x.T + (b if flip_bias_sign else -b)[:, None]
    return np.sum(yv * _log_logistic(z) + (1.0 - yv) * _log_logistic(-z), axis=1)


def logistic_loglik_grad(theta, data: LogisticDataset, idx=None, flip_bias_sign=False):
    theta = np.atleast_2d(theta)
    x = data.covariates if idx is None else data.covariates[idx]
    yv = data.labels if idx is None else data.labels[idx]
    w, b = theta[:, :-1], theta[:, -1]
    z = w @ x.T + (b if flip_bias_sign else -b)[:, None]
    resid = yv[None, :] - np.exp(_log_logistic(z))  # d loglik / dz
    gw = resid @ x
    gb = resid.sum(axis=1) * (1.0 if flip_bias_sign else -1.0)
    return np.concatenate([gw, gb[:, None]], axis=1)


def logistic_posterior(data: LogisticDataset, flip_bias_sign: bool = False) -> TargetDensity:
    def log_unnorm(theta):
        return logistic_posterior_logp(np.atleast_2d(theta), data, flip_bias_sign)

    def grad(theta):
        return logistic_loglik_grad(theta, data, flip_bias_sign=flip_bias_sign) - theta

    return TargetDensity(
        f"logistic:{data.name}",
        data.d + 1,
        log_unnorm,
        grad,
        extra={"dataset": data, "flip_bias_sign": flip_bias_sign},
    )


def laplace_approximation(target: TargetDensity, x0=None):
    """Mode and inverse-Hessian of a smooth target (Hessian by differencing the gradient)."""
    from scipy.optimize import minimize

    x0 = np.zeros(target.dim) if x0 is None else np.asarray(x0, dtype=np.float64)
    res = minimize(
        lambda t: -target.logp(t), x0, jac=lambda t: -target.grad(t)[0], method="BFGS", options={"gtol": 1e-9}
    )
    mode = res.x
    h = 1e-5
    hess = np.empty((target.dim, target.dim))
    for i in range(target.dim):
        e = np.zeros(target.dim)
        e[i] = h
        hess[i] = -(target.grad(mode + e)[0] - target.grad(mode - e)[0]) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    return mode, np.linalg.inv(hess)
