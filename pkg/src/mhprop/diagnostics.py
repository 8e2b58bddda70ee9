"""Chain diagnostics and quadrature oracles for acceptance-rate identities.

The 1-D oracles work with log-density callables ``f(x: (n,)) -> (n,)``; each
density is normalized on the grid before use, so unnormalized inputs are fine.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .kernels import autocorr_truncated, pair_abs_diff

# ----------------------------------------------------------------- grids


@dataclass
class GridOracle:
    """Trapezoid rule on a tensor grid."""

    bounds: tuple
    resolution: int

    def __post_init__(self):
        self.bounds = tuple(tuple(map(float, b)) for b in self.bounds)
        axes, wts = [], []
        for lo, hi in self.bounds:
            x = np.linspace(lo, hi, self.resolution)
            w = np.full(self.resolution, (hi - lo) / (self.resolution - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            axes.append(x)
            wts.append(w)
        self.axes, self.axis_weights = axes, wts

    @classmethod
    def from_spec(cls, spec) -> "GridOracle":
        return cls(spec.bounds, spec.resolution)

    @classmethod
    def line(cls, lo=-10.0, hi=10.0, resolution=4001) -> "GridOracle":
        return cls(((lo, hi),), resolution)

    @property
    def dim(self):
        return len(self.bounds)

    @property
    def nodes(self) -> np.ndarray:
        """Grid points, shape (n_nodes, dim)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def weights(self) -> np.ndarray:
        w = self.axis_weights[0]
        for wa in self.axis_weights[1:]:
            w = np.multiply.outer(w, wa)
        return np.ravel(w)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.ravel(values)))

    def log_normalizer(self, log_values) -> float:
        return float(logsumexp(np.ravel(log_values), b=self.weights))

    def normalized(self, log_values) -> np.ndarray:
        """Density values rescaled so they integrate to one on this grid."""
        lv = np.ravel(log_values)
        return np.exp(lv - self.log_normalizer(lv))


def _grid_values(grid: GridOracle, logpdf):
    x = grid.axes[0] if grid.dim == 1 else grid.nodes
    return np.asarray(logpdf(x), dtype=np.float64)


def target_logpdf(target):
    """Adapt a TargetDensity into the 1-D / n-D callable used by the oracles."""
    if target.dim == 1:
        return lambda x: target.log_unnorm(np.asarray(x).reshape(-1, 1))
    return target.log_unnorm


def proposal_logpdf(proposal):
    if getattr(proposal, "dim", 1) == 1:
        return lambda x: np.asarray(proposal.log_prob(np.asarray(x).reshape(-1, 1)))
    return lambda x: np.asarray(proposal.log_prob(x))


def grid_moments(target, grid: GridOracle | None = None):
    """Mean and variance per dimension of a target by grid quadrature."""
    grid = grid or GridOracle.from_spec(target.grid_spec)
    p = grid.normalized(target.log_unnorm(grid.nodes))
    w = grid.weights * p
    mean = w @ grid.nodes
    var = w @ (grid.nodes - mean) ** 2
    return mean, var


# ----------------------------------------------------------------- TV / KL quadrature


def _sorted_min_pair_sum(log_p, log_q, w):
    """sum_ij w_i w_j min(p_i q_j, p_j q_i) in O(n log n).

    With r = p/q and a = w q this is sum_ij a_i a_j min(r_i, r_j); sorting by
    r turns the double sum into a cumulative sum.
    """
    p, q = np.exp(log_p), np.exp(log_q)
    with np.errstate(invalid="ignore"):
        log_r = log_p - log_q
    log_r = np.where(np.isnan(log_r), 0.0, log_r)
    order = np.argsort(log_r, kind="stable")
    a = (w * q)[order]
    wp = (w * p)[order]
    tail = np.cumsum(a[::-1])[::-1] - a  # sum of a_j for j after i
    return float(np.sum(wp * (a + 2.0 * tail)))


def quad_tv_joint(p_logpdf, q_logpdf, grid: GridOracle, method: str = "sorted") -> float:
    """TV(p(x')q(x) || p(x)q(x')) for 1-D densities by tensor-product trapezoid quadrature.

    ``method="sorted"`` evaluates the exact same quadrature sum in O(n log n);
    ``method="tensor"`` sums the full n x n table.
    """
    if grid.dim != 1:
        raise ValueError("joint-space quadrature is limited to 1-D targets")
    w = grid.weights
    lp_raw, lq_raw = _grid_values(grid, p_logpdf), _grid_values(grid, q_logpdf)
    lp = lp_raw - grid.log_normalizer(lp_raw)
    lq = lq_raw - grid.log_normalizer(lq_raw)
    if method == "tensor":
        return 0.5 * pair_abs_diff(np.exp(lp), np.exp(lq), w)
    if method != "sorted":
        raise ValueError(method)
    return 1.0 - _sorted_min_pair_sum(lp, lq, w)


def quad_acceptance_rate(p_logpdf, q_logpdf, grid: GridOracle) -> float:
    """Independent-MH acceptance rate 1 - TV by quadrature."""
    return 1.0 - quad_tv_joint(p_logpdf, q_logpdf, grid)


def quad_kl(p_logpdf, q_logpdf, grid: GridOracle) -> float:
    """KL(p || q) on the grid (both normalized there)."""
    lp_raw, lq_raw = _grid_values(grid, p_logpdf), _grid_values(grid, q_logpdf)
    lp = lp_raw - grid.log_normalizer(lp_raw)
    lq = lq_raw - grid.log_normalizer(lq_raw)
    p = np.exp(lp)
    integrand = np.where(p > 0, p * (lp - lq), 0.0)
    return grid.integrate(integrand)


def quad_sym_kl(p_logpdf, q_logpdf, grid: GridOracle) -> float:
    return quad_kl(p_logpdf, q_logpdf, grid) + quad_kl(q_logpdf, p_logpdf, grid)


def pinsker_lower_bound(sym_kl: float) -> float:
    return 1.0 - np.sqrt(max(0.0, sym_kl) / 2.0)


# ----------------------------------------------------------------- semimetric


def semimetric_D(p_logpdf, q_logpdf, grid: GridOracle) -> float:
    """D(p, q) = ∬ |p(x) q(y) - p(y) q(x)| dx dy by tensor quadrature."""
    p = grid.normalized(_grid_values(grid, p_logpdf))
    q = grid.normalized(_grid_values(grid, q_logpdf))
    return pair_abs_diff(p, q, grid.weights)


def piecewise_uniform(*pieces):
    """Piecewise-constant density from (lo, hi, weight) pieces; weights are masses."""
    return [(Fraction(lo), Fraction(hi), Fraction(m)) for lo, hi, m in pieces]


def uniform(lo, hi):
    return piecewise_uniform((lo, hi, 1))


def semimetric_D_exact(p, q):
    """Closed-form D(p, q) for piecewise-uniform densities (exact rationals).

    On the common refinement of breakpoints both densities are constant per
    cell, so the double integral is sum_ij |P_i Q_j - P_j Q_i| over cell masses.
    """
    cuts = sorted({b for lo, hi, _ in p + q for b in (lo, hi)})
    cells = list(zip(cuts[:-1], cuts[1:]))

    def masses(dens):
        out = []
        for a, b in cells:
            m = Fraction(0)
            for lo, hi, mass in dens:
                overlap = min(b, hi) - max(a, lo)
                if overlap > 0:
                    m += mass * overlap / (hi - lo)
            out.append(m)
        return out

    P, Q = masses(p), masses(q)
    total = Fraction(0)
    for i in range(len(cells)):
        for j in range(len(cells)):
            total += abs(P[i] * Q[j] - P[j] * Q[i])
    return total


# ----------------------------------------------------------------- truncated normal vs uniform


def truncnorm_uniform_sym_kl(sigma: float, a: float = 1.0, resolution: int = 20001) -> float:
    """Sym. KL between U[-a, a] and N(0, sigma) truncated to [-a, a], by quadrature."""
    grid = GridOracle.line(-a, a, resolution)
    return quad_sym_kl(lambda x: np.zeros_like(x), lambda x: -0.5 * (x / sigma) ** 2, grid)


def truncnorm_uniform_sym_kl_closed(sigma: float, a: float = 1.0) -> float:
    """Closed form of the same quantity via the normalizer Z = Phi(a/s) - Phi(-a/s)."""
    from scipy.special import ndtr

    z = ndtr(a / sigma) - ndtr(-a / sigma)
    kl_uq = np.log(sigma) + np.log(z) + a * a / (6 * sigma**2) + 0.5 * np.log(2 * np.pi) - np.log(2 * a)
    kl_qu = (
        -0.5 * np.log(2 * np.pi * np.e)
        - np.log(sigma)
        - np.log(z)
        + a / (np.sqrt(2 * np.pi) * sigma * z) * np.exp(-a * a / (2 * sigma**2))
        + np.log(2 * a)
    )
    return float(kl_uq + kl_qu)


# ----------------------------------------------------------------- ESS


@dataclass
class EssEstimate:
    ess: np.ndarray  # per dimension
    rho: list  # truncated autocorrelations per dimension
    truncation_lag: np.ndarray
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    n: int

    @property
    def min(self) -> float:
        return float(np.min(self.ess))

    @property
    def mean(self) -> float:
        return float(np.mean(self.ess))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "ess_min": self.min,
            "ess_mean": self.mean,
            "ess": self.ess.tolist(),
            "truncation_lag": self.truncation_lag.tolist(),
        }


def ess_from_autocorr(rho, n: int) -> float:
    """N / (1 + 2 sum_s (1 - s/N) rho_s) over the supplied lags s = 1, 2, ..."""
    rho = np.asarray(rho, dtype=np.float64)
    s = np.arange(1, rho.size + 1)
    return float(n / (1.0 + 2.0 * np.sum((1.0 - s / n) * rho)))


def ess(chain, reference_moments, threshold: float = 0.05) -> EssEstimate:
    """Per-dimension effective sample size with externally supplied moments.

    The autocorrelation sum stops at the first lag whose estimate drops
    below ``threshold``. The headline number is the minimum over dimensions.
    """
    chain = np.asarray(chain, dtype=np.float64)
    if chain.ndim == 1:
        chain = chain[:, None]
    n, dim = chain.shape
    mu, var = (np.broadcast_to(np.asarray(m, dtype=np.float64), (dim,)) for m in reference_moments)
    if np.any(var <= 0):
        raise ValueError("reference variance must be positive")
    values, rhos, lags = np.empty(dim), [], np.empty(dim, dtype=np.int64)
    for j in range(dim):
        rho = autocorr_truncated(np.ascontiguousarray(chain[:, j]), float(mu[j]), float(var[j]), threshold)
        rhos.append(rho)
        lags[j] = rho.size + 1
        values[j] = ess_from_autocorr(rho, n)
    return EssEstimate(values, rhos, lags, mu.copy(), np.sqrt(var), n)


def reference_moments(target, grid: GridOracle | None = None):
    """Analytic moments when known, else grid quadrature (dim <= 2)."""
    if target.analytic_moments is not None:
        return target.analytic_moments
    if target.grid_spec is None and grid is None:
        raise ValueError(f"{target.name}: no analytic moments or grid; pass a reference chain")
    return grid_moments(target, grid)


def chain_moments(states):
    states = np.asarray(states)
    return states.mean(axis=0), states.var(axis=0)


# ----------------------------------------------------------------- landscape


def landscape_scan(target, mus, sigmas, objective: str = "ar", grid: GridOracle | None = None) -> np.ndarray:
    """Objective over Gaussian proposals N(mu, sigma^2) for a 1-D target.

    ``ar``: quadrature acceptance rate. ``arlb``: 1 - sqrt(symKL / 2).
    Rows index mu, columns index sigma.
    """
    grid = grid or GridOracle.from_spec(target.grid_spec)
    p = target_logpdf(target)
    out = np.empty((len(mus), len(sigmas)))
    for i, mu in enumerate(mus):
        for j, sd in enumerate(sigmas):
            q = lambda x, mu=mu, sd=sd: -0.5 * ((x - mu) / sd) ** 2 - np.log(sd)  # noqa: E731
            if objective == "ar":
                out[i, j] = quad_acceptance_rate(p, q, grid)
            elif objective == "arlb":
                out[i, j] = pinsker_lower_bound(quad_sym_kl(p, q, grid))
            else:
                raise ValueError(f"unknown objective {objective!r}")
    return out


def write_landscape_csv(path, mus, sigmas, values, objective):
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mu", "sigma", objective])
        for i, mu in enumerate(mus):
            for j, sd in enumerate(sigmas):
                wr.writerow([f"{mu:.17g}", f"{sd:.17g}", f"{values[i, j]:.17g}"])


# ----------------------------------------------------------------- sample metrics


def nearest_mode(samples, modes) -> np.ndarray:
    samples, modes = np.atleast_2d(samples), np.atleast_2d(modes)
    d2 = np.sum((samples[:, None, :] - modes[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def mode_coverage(samples, modes) -> np.ndarray:
    """Fraction of samples whose nearest mode (Euclidean) is each mode."""
    labels = nearest_mode(samples, modes)
    return np.bincount(labels, minlength=len(modes)) / len(labels)


def modes_covered(samples, modes, threshold=0.05) -> int:
    return int(np.sum(mode_coverage(samples, modes) >= threshold))


def component_mean_error(chain, assignments, true_means) -> np.ndarray:
    """Running squared error of each component's sample mean.

    Entry (n, m) is ||mean of chain[:n+1] restricted to component m - true_means[m]||^2;
    NaN while component m has no samples yet.
    """
    chain = np.asarray(chain, dtype=np.float64)
    if chain.ndim == 1:
        chain = chain[:, None]
    true_means = np.atleast_2d(true_means)
    m = true_means.shape[0]
    onehot = np.zeros((len(chain), m))
    onehot[np.arange(len(chain)), assignments] = 1.0
    counts = np.cumsum(onehot, axis=0)
    sums = np.cumsum(onehot[:, :, None] * chain[:, None, :], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, :, None]
    err = np.sum((means - true_means[None]) ** 2, axis=2)
    err[counts == 0] = np.nan
    return err


def cell_means(target, modes, grid: GridOracle | None = None) -> np.ndarray:
    """True mean of the target restricted to each mode's nearest-mode cell."""
    grid = grid or GridOracle.from_spec(target.grid_spec)
    nodes = grid.nodes
    w = grid.weights * grid.normalized(target.log_unnorm(nodes))
    lab = nearest_mode(nodes, modes)
    out = np.empty_like(np.atleast_2d(modes), dtype=np.float64)
    for k in range(len(out)):
        wk = w * (lab == k)
        out[k] = wk @ nodes / wk.sum()
    return out


def grid_kl(samples, target, bins: int = 40, bounds=((-4.0, 4.0), (-4.0, 4.0)), sub: int = 8) -> float:
    """KL(histogram of samples || target binned on the same cells).

    Target bin masses come from midpoint quadrature with ``sub``^2 points per
    cell; samples outside the bounds are dropped.
    """
    samples = np.atleast_2d(samples)
    (x0, x1), (y0, y1) = bounds
    h, xe, ye = np.histogram2d(samples[:, 0], samples[:, 1], bins=bins, range=bounds)
    h = h / h.sum()
    fx = np.linspace(x0, x1, bins * sub + 1)
    fy = np.linspace(y0, y1, bins * sub + 1)
    cx, cy = 0.5 * (fx[1:] + fx[:-1]), 0.5 * (fy[1:] + fy[:-1])
    mx, my = np.meshgrid(cx, cy, indexing="ij")
    lp = target.log_unnorm(np.stack([mx.ravel(), my.ravel()], axis=1)).reshape(mx.shape)
    dens = np.exp(lp - lp.max())
    pm = dens.reshape(bins, sub, bins, sub).sum(axis=(1, 3))
    pm = pm / pm.sum()
    nz = h > 0
    return float(np.sum(h[nz] * np.log(h[nz] / pm[nz])))


def pearson(a, b) -> float:
    return float(np.corrcoef(np.asarray(a, float), np.asarray(b, float))[0, 1])
