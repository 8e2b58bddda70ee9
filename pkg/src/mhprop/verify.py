"""Numerical verifier suite for the acceptance-rate identities.

Every check reduces to ``value <= bound`` on a residual, so a tolerance
override is just a different bound. Results are plain dicts
``{check, value, bound, pass}`` ready for JSON.
"""
from __future__ import annotations

import time
from fractions import Fraction

import numpy as np
from scipy.stats import norm

from . import diagnostics as dg
from . import mh
from .flows import GaussianProposal
from .targets import gaussian

LINE = dg.GridOracle.line(-15.0, 15.0, 6001)


def random_gaussian_pairs(n, rng, bounded_ratio=False):
    """``n`` pairs ((mu_p, sd_p), (mu_q, sd_q)) with moderate overlap.

    ``bounded_ratio`` orders the scales so sd_q >= sd_p: then p/q is bounded,
    the independent chain is uniformly ergodic and its empirical acceptance
    rate obeys a CLT. With sd_q < sd_p the chain sticks in the tails for
    rare, very long stretches and 1e6 steps are far from enough.
    """
    mu = rng.uniform(-2.0, 2.0, size=(n, 2))
    sd = rng.uniform(0.5, 2.0, size=(n, 2))
    if bounded_ratio:
        sd = np.sort(sd, axis=1)
    return [((mu[i, 0], sd[i, 0]), (mu[i, 1], sd[i, 1])) for i in range(n)]


def _gauss(mu, sd):
    return lambda x: norm.logpdf(x, mu, sd)


def random_mixture(rng, max_components=3):
    k = rng.integers(1, max_components + 1)
    mu = rng.uniform(-4.0, 4.0, k)
    sd = rng.uniform(0.3, 2.0, k)
    w = rng.dirichlet(np.ones(k))

    def logpdf(x):
        x = np.asarray(x)[..., None]
        return np.logaddexp.reduce(np.log(w) + norm.logpdf(x, mu, sd), axis=-1)

    return logpdf


def mc_acceptance_rate(p, q, n, rng) -> float:
    """Empirical IMH acceptance rate for 1-D Gaussians p=(mu, sd), q=(mu, sd)."""
    target = gaussian("p", [p[0]], [[p[1] ** 2]])
    prop = GaussianProposal(1, mean=q[0], log_std=np.log(q[1]))
    return mh.run_chain(mh.IndependentKernel(prop), target, n, burn_in=100, rng=rng).empirical_ar


# ----------------------------------------------------------------- checks


def check_theorem1(rng, n_pairs=5, n=10**6):
    """max |MC acceptance rate - (1 - quadrature TV)| over random pairs."""
    res = []
    for p, q in random_gaussian_pairs(n_pairs, rng, bounded_ratio=True):
        ar_quad = 1.0 - dg.quad_tv_joint(_gauss(*p), _gauss(*q), LINE)
        res.append(abs(mc_acceptance_rate(p, q, n, rng) - ar_quad))
    return max(res)


def check_pinsker(rng, n_pairs=20):
    """max (Pinsker bound - AR); non-positive when the ordering holds."""
    gaps = []
    for p, q in random_gaussian_pairs(n_pairs, rng):
        ar = dg.quad_acceptance_rate(_gauss(*p), _gauss(*q), LINE)
        lb = dg.pinsker_lower_bound(dg.quad_sym_kl(_gauss(*p), _gauss(*q), LINE))
        gaps.append(lb - ar)
    return max(gaps)


def semimetric_example():
    p, q, s = dg.uniform(0, Fraction(2, 3)), dg.uniform(Fraction(1, 3), 1), dg.uniform(0, 1)
    return p, q, s


def _uniform_logpdf(lo, hi):
    def f(x):
        with np.errstate(divide="ignore"):
            return np.log(((x >= lo) & (x <= hi)).astype(float))

    return f


def semimetric_quadrature_example(resolution=6001):
    """(D(p,s) + D(q,s), D(p,q)) for the uniform example by grid quadrature.

    The grid is aligned with the breakpoints 0, 1/3, 2/3, 1 so the indicator
    functions are resolved exactly except at shared endpoints.
    """
    grid = dg.GridOracle.line(-0.5, 1.5, resolution)
    p, q, s = _uniform_logpdf(0, 2 / 3), _uniform_logpdf(1 / 3, 1), _uniform_logpdf(0, 1)
    return (
        dg.semimetric_D(p, s, grid) + dg.semimetric_D(q, s, grid),
        dg.semimetric_D(p, q, grid),
    )


def check_weak_triangle(rng, n_triples=50):
    """max (2/3) D(p,q) - D(p,s) - D(q,s) over random mixture triples."""
    grid = dg.GridOracle.line(-12.0, 12.0, 1201)
    worst = -np.inf
    for _ in range(n_triples):
        p, q, s = (random_mixture(rng) for _ in range(3))
        lhs = dg.semimetric_D(p, s, grid) + dg.semimetric_D(q, s, grid)
        worst = max(worst, (2.0 / 3.0) * dg.semimetric_D(p, q, grid) - lhs)
    return worst


def check_truncnorm_monotone():
    """max successive difference of sym-KL over sigma = 0.1..1.0; negative iff strictly decreasing."""
    vals = [dg.truncnorm_uniform_sym_kl(s) for s in np.round(np.arange(0.1, 1.01, 0.1), 10)]
    return float(np.max(np.diff(vals)))


def check_refinement():
    p, q = _gauss(0.0, 1.0), _gauss(1.0, 1.5)
    coarse, fine = dg.GridOracle.line(-15, 15, 3001), dg.GridOracle.line(-15, 15, 6001)
    return max(
        abs(dg.quad_tv_joint(p, q, coarse) - dg.quad_tv_joint(p, q, fine)),
        abs(dg.quad_sym_kl(p, q, coarse) - dg.quad_sym_kl(p, q, fine)),
    )


def rejection_vs_imh(rng, n=10**6):
    """(rejection acceptance, IMH acceptance) for p=N(0,1), q=N(0, 2^2), M=2."""
    target = gaussian("p", [0.0], [[1.0]])
    prop = GaussianProposal(1, mean=0.0, log_std=np.log(2.0))
    _, frac, _ = mh.rejection_sample(target, prop, 2.0, n, rng)
    ar = mh.run_chain(mh.IndependentKernel(prop), target, n, burn_in=100, rng=rng).empirical_ar
    return frac, ar


# ----------------------------------------------------------------- suite


DEFAULT_BOUNDS = {
    "theorem1_residual": 5e-3,
    "pinsker_ordering": 1e-6,
    "semimetric_exact_sum": 0.0,
    "semimetric_exact_pq": 0.0,
    "semimetric_quad_sum": 1e-3,
    "semimetric_quad_pq": 1e-3,
    "weak_triangle": 0.0,
    "truncnorm_monotone": -1e-12,
    "gaussian_sym_kl": 1e-4,
    "grid_refinement": 1e-4,
    "grid_unit_mass": 1e-6,
    "identity_tv": 1e-12,
    "rejection_acceptance": 5e-3,
    "imh_vs_rejection": 5e-3,
}


def run_suite(seed: int = 0, bounds: dict | None = None, fast: bool = False) -> list:
    """Run every check. ``fast`` shrinks the Monte-Carlo sizes for smoke runs."""
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    unknown = set(bounds) - set(DEFAULT_BOUNDS)
    if unknown:
        raise KeyError(f"unknown checks: {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    n_mc = 10**5 if fast else 10**6
    values = {}
    t0 = time.perf_counter()

    values["theorem1_residual"] = check_theorem1(rng, n=n_mc)
    values["pinsker_ordering"] = check_pinsker(rng)
    p, q, s = semimetric_example()
    d_sum = dg.semimetric_D_exact(p, s) + dg.semimetric_D_exact(q, s)
    d_pq = dg.semimetric_D_exact(p, q)
    values["semimetric_exact_sum"] = float(abs(d_sum - Fraction(4, 3)))
    values["semimetric_exact_pq"] = float(abs(d_pq - Fraction(3, 2)))
    quad_sum, quad_pq = semimetric_quadrature_example()
    values["semimetric_quad_sum"] = abs(quad_sum - 4 / 3)
    values["semimetric_quad_pq"] = abs(quad_pq - 3 / 2)
    values["weak_triangle"] = check_weak_triangle(rng)
    values["truncnorm_monotone"] = check_truncnorm_monotone()
    values["gaussian_sym_kl"] = abs(dg.quad_sym_kl(_gauss(0, 1), _gauss(1, 1), LINE) - 1.0)
    values["grid_refinement"] = check_refinement()
    values["grid_unit_mass"] = abs(LINE.integrate(np.exp(norm.logpdf(LINE.axes[0]))) - 1.0)
    values["identity_tv"] = abs(dg.quad_tv_joint(_gauss(0.3, 1.2), _gauss(0.3, 1.2), LINE))
    frac, ar = rejection_vs_imh(rng, n=n_mc)
    values["rejection_acceptance"] = abs(frac - 0.5)
    values["imh_vs_rejection"] = 0.5 - ar

    out = []
    for name in DEFAULT_BOUNDS:
        v = float(values[name])
        out.append({"check": name, "value": v, "bound": float(bounds[name]), "pass": bool(v <= bounds[name])})
    out.append({"check": "_elapsed_seconds", "value": time.perf_counter() - t0, "bound": None, "pass": True})
    return out
