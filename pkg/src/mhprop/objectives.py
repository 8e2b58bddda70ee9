"""Training losses for independent proposals.

All estimators take base noise ``eps`` for the proposal draw explicitly, so the
same call with the same inputs is deterministic (finite-difference checks rely
on this). Target samples ``x`` are constants; gradients reach the parameters
through the reparameterized draws x' and through log q evaluated at x and x'.
"""
from __future__ import annotations

import enum

import numpy as np

from . import ad
from .targets import LOG_2PI, logistic_loglik, logistic_loglik_grad


class LossKind(str, enum.Enum):
    AR = "AR"
    ARLB = "ARLB"
    VI = "VI"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown loss kind {value!r}; expected AR, ARLB or VI") from None


def log_ratios(target, proposal, P, x, eps, logp_x=None):
    """r_k = log p̂(x'_k) + log q(x_k) - log p̂(x_k) - log q(x'_k)."""
    xp, logq_xp = proposal.transform_noise(eps, P)
    logp_xp = target.tape(xp)
    logq_x = proposal.log_prob(x, P)
    if logp_x is None:
        logp_x = target.log_unnorm(np.atleast_2d(x))
    return logp_xp + logq_x - logp_x - logq_xp


def loss_ar(target, proposal, P, x, eps, logp_x=None):
    """-mean min{1, ξ_k}, evaluated as exp(min(0, log ξ_k))."""
    r = log_ratios(target, proposal, P, x, eps, logp_x)
    return -ad.mean(ad.exp(ad.minimum0(r)))


def loss_arlb(target, proposal, P, x, eps, logp_x=None):
    """-mean log ξ_k; an unbiased estimate of the symmetrized KL."""
    return -ad.mean(log_ratios(target, proposal, P, x, eps, logp_x))


def loss_vi(target, proposal, P, eps):
    """mean[log q(x'_k) - log p̂(x'_k)]: reverse KL up to log Z."""
    xp, logq_xp = proposal.transform_noise(eps, P)
    return ad.mean(logq_xp - target.tape(xp))


def make_loss_program(kind, target, proposal):
    """Program ``(P, inputs) -> loss`` with inputs {'x', 'eps', optional 'logp_x'}."""
    kind = LossKind.parse(kind)

    def program(P, inputs):
        if kind is LossKind.VI:
            return loss_vi(target, proposal, P, inputs["eps"])
        fn = loss_ar if kind is LossKind.AR else loss_arlb
        return fn(target, proposal, P, inputs["x"], inputs["eps"], inputs.get("logp_x"))

    return program


# ----------------------------------------------------------------- Bayesian objective


def bayes_objective_terms(proposal, P, data, eps, batch_idx, posterior_samples, flip_bias_sign=False):
    """The three terms of the minibatch ARLB objective for a logistic posterior.

    Returns (neg. expected log-likelihood scaled by N/B, KL(q || prior) by
    Monte Carlo, -mean log q at the supplied posterior samples).
    """
    theta, logq_theta = proposal.transform_noise(eps, P)
    n_total = data.n
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    b = batch_idx.size
    if n_total == 0 or b == 0:
        nll = 0.0
    else:
        scale = n_total / b

        def f(t):
            return logistic_loglik(t, data, batch_idx, flip_bias_sign)

        def g(t):
            return logistic_loglik_grad(t, data, batch_idx, flip_bias_sign)

        nll = ad.mean(ad.extern(theta, f, g, name="loglik")) * -scale
    d = np.shape(ad._val(theta))[1]
    log_prior = ad.sum(ad.mul(theta, theta), axis=1) * -0.5 - 0.5 * d * LOG_2PI
    kl = ad.mean(logq_theta - log_prior)
    cross = -ad.mean(proposal.log_prob(posterior_samples, P))
    return nll, kl, cross


def bayes_objective(proposal, P, data, eps, batch_idx, posterior_samples, flip_bias_sign=False):
    nll, kl, cross = bayes_objective_terms(proposal, P, data, eps, batch_idx, posterior_samples, flip_bias_sign)
    return nll + kl + cross


# ----------------------------------------------------------------- sample-based setting


def generator_loss(kind, gen, disc, Pg, z, x_real=None):
    """Generator loss with the discriminator ratio d/(1-d) standing in for p/q.

    ARLB: mean[log(1 - d(x')) - log d(x')]. AR: -mean min{1, ratio} using the
    data batch ``x_real`` for the reverse term. Discriminator parameters are
    held fixed.
    """
    kind = LossKind.parse(kind)
    Pd = disc.params.views()
    xp = gen.transform_noise(z, Pg)
    lr_fake = disc.log_ratio(xp, Pd)
    if kind is LossKind.ARLB:
        return -ad.mean(lr_fake)
    if kind is LossKind.AR:
        if x_real is None:
            raise ValueError("AR generator loss needs a data batch")
        lr_real = disc.log_ratio(x_real, Pd)
        return -ad.mean(ad.exp(ad.minimum0(lr_fake - lr_real)))
    raise ValueError("VI is not available without a proposal density")
