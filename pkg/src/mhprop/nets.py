"""Implicit generator and density-ratio discriminators (desk-scale MLPs)."""
from __future__ import annotations

import numpy as np

from . import ad
from .ad import ParamVector

EPS = 1e-6


def mlp_arrays(sizes, rng, prefix: str, zero_last: bool = False) -> dict:
    arrays = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        bound = 1.0 / np.sqrt(n_in)
        if last and zero_last:
            arrays[f"{prefix}.w{i}"] = np.zeros((n_in, n_out))
            arrays[f"{prefix}.b{i}"] = np.zeros(n_out)
        else:
            arrays[f"{prefix}.w{i}"] = rng.uniform(-bound, bound, (n_in, n_out))
            arrays[f"{prefix}.b{i}"] = rng.uniform(-bound, bound, n_out)
    return arrays


def mlp_apply(x, P, prefix: str, n_layers: int, slope: float = 0.2):
    h = x
    for i in range(n_layers):
        h = ad.affine(h, P[f"{prefix}.w{i}"], P[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = ad.leaky_relu(h, slope)
    return h


def _views(P, default):
    if P is None:
        return default.views()
    return P.views() if isinstance(P, ParamVector) else P


class GeneratorNet:
    """Pushforward of N(0, I_L) through an MLP L -> H -> H -> D."""

    kind = "generator"

    def __init__(self, dim=2, latent=8, hidden=64, seed=0, params=None):
        self.dim, self.latent, self.hidden = dim, latent, hidden
        self.sizes = [latent, hidden, hidden, dim]
        self.params = params if params is not None else ParamVector.from_arrays(
            mlp_arrays(self.sizes, np.random.default_rng(seed), "g")
        )

    def transform_noise(self, z, P=None):
        return mlp_apply(z, _views(P, self.params), "g", len(self.sizes) - 1)

    def generate(self, n, rng, P=None):
        return self.transform_noise(rng.standard_normal((n, self.latent)), P)

    def metadata(self):
        return {"kind": self.kind, "dim": self.dim, "latent": self.latent, "hidden": self.hidden}


class ConditionalGeneratorNet(GeneratorNet):
    """Markov proposal x' = MLP(concat(x, z)) for low-dimensional problems."""

    kind = "conditional_generator"

    def __init__(self, dim=2, latent=8, hidden=64, seed=0, params=None):
        self.dim, self.latent, self.hidden = dim, latent, hidden
        self.sizes = [dim + latent, hidden, hidden, dim]
        self.params = params if params is not None else ParamVector.from_arrays(
            mlp_arrays(self.sizes, np.random.default_rng(seed), "g")
        )

    def propose(self, x, z, P=None):
        return mlp_apply(ad.concat_cols(x, z), _views(P, self.params), "g", len(self.sizes) - 1)

    def generate(self, n, rng, P=None, x=None):
        x = np.zeros((n, self.dim)) if x is None else x
        return self.propose(x, rng.standard_normal((n, self.latent)), P)


class DiscriminatorNet:
    """d(x) in (EPS, 1 - EPS): logistic of an MLP D -> H -> H -> 1."""

    kind = "discriminator"

    def __init__(self, dim=2, hidden=64, seed=0, params=None):
        self.dim, self.hidden = dim, hidden
        self.sizes = [dim, hidden, hidden, 1]
        self.params = params if params is not None else ParamVector.from_arrays(
            mlp_arrays(self.sizes, np.random.default_rng(seed), "d")
        )

    def logit(self, x, P=None):
        return ad.sum(mlp_apply(x, _views(P, self.params), "d", len(self.sizes) - 1), axis=1)

    def prob(self, x, P=None):
        return ad.clip(ad.logistic(self.logit(x, P)), EPS, 1.0 - EPS)

    def log_ratio(self, x, P=None):
        """log d(x) / (1 - d(x)), the estimate of log p(x)/q(x) at the optimum."""
        return ratio_estimate(self.prob(x, P))

    def metadata(self):
        return {"kind": self.kind, "dim": self.dim, "hidden": self.hidden}


def ratio_estimate(d):
    """log(d / (1 - d)) for discriminator outputs ``d``."""
    return ad.log(d) - ad.log(1.0 - d)


def disc_loss(disc: DiscriminatorNet, P, real, fake):
    """Binary cross-entropy -E_p log d(x) - E_q log(1 - d(x)).

    ``real`` and ``fake`` are constant arrays, so only ``P`` is differentiated.
    """
    return -ad.mean(ad.log(disc.prob(real, P))) - ad.mean(ad.log(1.0 - disc.prob(fake, P)))


class PairDiscriminator:
    """D(x, x') = softmax over (T(x, x'), T(x', x)) for one shared trunk T."""

    kind = "pair_discriminator"

    def __init__(self, dim=2, hidden=64, seed=0, params=None):
        self.dim, self.hidden = dim, hidden
        self.sizes = [2 * dim, hidden, hidden, 1]
        self.params = params if params is not None else ParamVector.from_arrays(
            mlp_arrays(self.sizes, np.random.default_rng(seed), "pd")
        )

    def trunk(self, x, xp, P=None):
        return ad.sum(mlp_apply(ad.concat_cols(x, xp), _views(P, self.params), "pd", 3), axis=1)

    def score(self, x, xp, P=None):
        """T(x, x') - T(x', x); antisymmetric in its arguments."""
        return self.trunk(x, xp, P) - self.trunk(xp, x, P)

    def forward(self, x, xp, P=None):
        return ad.logistic(self.score(x, xp, P))

    def loss(self, P, x, xp):
        """-E log D(x, x') - E log(1 - D(x', x)) over pairs x ~ p, x' ~ q(.|x)."""
        d_fwd = ad.clip(self.forward(x, xp, P), EPS, 1.0 - EPS)
        d_rev = ad.clip(self.forward(xp, x, P), EPS, 1.0 - EPS)
        return -ad.mean(ad.log(d_fwd)) - ad.mean(ad.log(1.0 - d_rev))

    def log_ratio(self, x, xp, P=None):
        """Estimate of log p(x) q(x'|x) / (p(x') q(x|x'))."""
        return self.score(x, xp, P)

    def metadata(self):
        return {"kind": self.kind, "dim": self.dim, "hidden": self.hidden}


def pair_disc_forward(pd: PairDiscriminator, x, xp, P=None):
    return pd.forward(np.atleast_2d(x), np.atleast_2d(xp), P)


def generate(gen: GeneratorNet, n, rng, P=None):
    return gen.generate(n, rng, P)
