"""Explicit, reparameterizable independent proposals.

``FlowProposal`` is a RealNVP stack of affine coupling layers over a standard
normal base; ``GaussianProposal`` is a diagonal Gaussian (used for 1-D work
where a coupling split does not exist). Both hold a current ``ParamVector``;
every method also accepts an explicit parameter mapping ``P`` so losses can
pass tape nodes through the same code.
"""
from __future__ import annotations

import numpy as np

from . import ad
from .ad import NonFiniteError, ParamVector

LOG_2PI = np.log(2.0 * np.pi)


def _resolve(P, default: ParamVector):
    if P is None:
        return default.views()
    if isinstance(P, ParamVector):
        return P.views()
    return P


def std_normal_logpdf(z):
    """Row-wise log N(z | 0, I) for a batch (n, D); tape-aware."""
    d = np.shape(ad._val(z))[1]
    return ad.sum(ad.mul(z, z), axis=1) * -0.5 - 0.5 * d * LOG_2PI


def _check(value, what, views=()):
    if not np.all(np.isfinite(ad._val(value))):
        raise NonFiniteError(what, views)


class FlowProposal:
    """RealNVP proposal with ``n_layers`` alternating half-split coupling layers.

    Layer k passes coordinates ``[0, d)`` through when k is even and ``[d, D)``
    when k is odd (``d = D // 2``); the other block is scaled by ``exp(s)`` and
    shifted by ``t``. ``s`` and ``t`` are separate two-layer tanh MLPs and the
    scale is softly clamped to ``[-s_clamp, s_clamp]``.
    """

    kind = "flow"

    def __init__(self, dim: int, hidden: int = 512, n_layers: int = 4, s_clamp: float = 5.0, params=None, seed=0):
        if dim < 2:
            raise ValueError("coupling layers need dim >= 2; use GaussianProposal in 1-D")
        self.dim = dim
        self.hidden = hidden
        self.n_layers = n_layers
        self.s_clamp = float(s_clamp)
        self.split = dim // 2
        self.params = params if params is not None else self.init_params(np.random.default_rng(seed))

    # -- structure
    def _blocks(self, k):
        """(pass-through slice, transformed slice) for layer k."""
        d, D = self.split, self.dim
        return ((0, d), (d, D)) if k % 2 == 0 else ((d, D), (0, d))

    def layer_shapes(self):
        shapes = {}
        for k in range(self.n_layers):
            (p0, p1), (t0, t1) = self._blocks(k)
            n_in, n_out = p1 - p0, t1 - t0
            for net in ("s", "t"):
                shapes[f"l{k}.{net}.w1"] = (n_in, self.hidden)
                shapes[f"l{k}.{net}.b1"] = (self.hidden,)
                shapes[f"l{k}.{net}.w2"] = (self.hidden, n_out)
                shapes[f"l{k}.{net}.b2"] = (n_out,)
        return shapes

    def init_params(self, rng) -> ParamVector:
        arrays = {}
        for name, shape in self.layer_shapes().items():
            if name.endswith(".w1"):
                bound = 1.0 / np.sqrt(shape[0])
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".b1"):
                bound = 1.0 / np.sqrt(self.layer_shapes()[name[:-2] + "w1"][0])
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            else:
                arrays[name] = np.zeros(shape)
        return ParamVector.from_arrays(arrays)

    @classmethod
    def affine(cls, shift, log_scale, hidden=8, n_layers=4, s_clamp=5.0, seed=0):
        """Flow realizing x = shift + exp(log_scale) * z exactly.

        Hidden layers keep their random init so every net still receives
        gradient; the output layers are zero apart from the biases that set
        constant s and t in the first two layers.
        """
        shift = np.asarray(shift, dtype=np.float64)
        log_scale = np.broadcast_to(np.asarray(log_scale, dtype=np.float64), shift.shape)
        if np.any(np.abs(log_scale) >= s_clamp):
            raise ValueError("log_scale must lie strictly inside the clamp")
        flow = cls(shift.shape[0], hidden=hidden, n_layers=n_layers, s_clamp=s_clamp, seed=seed)
        arrays = flow.params.views()
        for k in range(min(2, n_layers)):
            _, (t0, t1) = flow._blocks(k)
            arrays[f"l{k}.s.b2"] = s_clamp * np.arctanh(log_scale[t0:t1] / s_clamp)
            arrays[f"l{k}.t.b2"] = shift[t0:t1].copy()
        flow.params = ParamVector.from_arrays({k: np.array(v) for k, v in arrays.items()})
        return flow

    # -- maps
    def _st(self, k, a, P):
        c = self.s_clamp
        h = ad.tanh(ad.affine(a, P[f"l{k}.s.w1"], P[f"l{k}.s.b1"]))
        s_raw = ad.affine(h, P[f"l{k}.s.w2"], P[f"l{k}.s.b2"])
        s = ad.tanh(s_raw * (1.0 / c)) * c
        h = ad.tanh(ad.affine(a, P[f"l{k}.t.w1"], P[f"l{k}.t.b1"]))
        t = ad.affine(h, P[f"l{k}.t.w2"], P[f"l{k}.t.b2"])
        return s, t

    def _assemble(self, k, passed, moved):
        return ad.concat_cols(passed, moved) if k % 2 == 0 else ad.concat_cols(moved, passed)

    def forward(self, z, P=None):
        """Latent z (n, D) -> x; returns (x, log|det dx/dz|)."""
        P = _resolve(P, self.params)
        z = np.atleast_2d(z) if not isinstance(z, ad.Node) else z
        u, logdet = z, 0.0
        for k in range(self.n_layers):
            (p0, p1), (t0, t1) = self._blocks(k)
            a, b = ad.cols(u, p0, p1), ad.cols(u, t0, t1)
            s, t = self._st(k, a, P)
            u = self._assemble(k, a, ad.mul(b, ad.exp(s)) + t)
            _check(u, f"coupling layer {k} (forward)")
            logdet = logdet + ad.sum(s, axis=1)
        return u, logdet

    def inverse(self, x, P=None):
        """x (n, D) -> latent z; returns (z, log|det dz/dx|)."""
        P = _resolve(P, self.params)
        x = np.atleast_2d(x) if not isinstance(x, ad.Node) else x
        u, logdet = x, 0.0
        for k in reversed(range(self.n_layers)):
            (p0, p1), (t0, t1) = self._blocks(k)
            a, b = ad.cols(u, p0, p1), ad.cols(u, t0, t1)
            s, t = self._st(k, a, P)
            u = self._assemble(k, a, ad.mul(b - t, ad.exp(-s)))
            _check(u, f"coupling layer {k} (inverse)")
            logdet = logdet - ad.sum(s, axis=1)
        return u, logdet

    def log_prob(self, x, P=None):
        z, logdet = self.inverse(x, P)
        return std_normal_logpdf(z) + logdet

    def transform_noise(self, eps, P=None):
        """Reparameterized sample: returns (x, log q(x)) for base noise ``eps``."""
        x, logdet = self.forward(eps, P)
        return x, std_normal_logpdf(eps) - logdet

    def sample(self, n: int, rng, P=None):
        eps = rng.standard_normal((n, self.dim))
        return self.transform_noise(eps, P)

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "hidden": self.hidden,
            "n_layers": self.n_layers,
            "s_clamp": self.s_clamp,
            "layer_shapes": {k: list(v) for k, v in self.layer_shapes().items()},
        }

    @classmethod
    def from_metadata(cls, meta: dict, params: ParamVector) -> "FlowProposal":
        flow = cls(meta["dim"], meta["hidden"], meta["n_layers"], meta["s_clamp"], params=params)
        if flow.layer_shapes() != {k: tuple(v) for k, v in meta["layer_shapes"].items()}:
            raise ValueError("layer shapes in metadata disagree with the architecture")
        return flow


class GaussianProposal:
    """Diagonal Gaussian N(mean, exp(log_std)^2), reparameterized."""

    kind = "gaussian"

    def __init__(self, dim: int = 1, mean=None, log_std=None, params=None):
        self.dim = dim
        if params is None:
            mean = np.zeros(dim) if mean is None else np.broadcast_to(np.asarray(mean, float), (dim,))
            log_std = np.zeros(dim) if log_std is None else np.broadcast_to(np.asarray(log_std, float), (dim,))
            params = ParamVector.from_arrays({"mean": mean, "log_std": log_std})
        self.params = params

    @property
    def mean(self):
        return self.params.view("mean")

    @property
    def std(self):
        return np.exp(self.params.view("log_std"))

    def transform_noise(self, eps, P=None):
        P = _resolve(P, self.params)
        eps = np.atleast_2d(eps)
        x = ad.mul(eps, ad.exp(P["log_std"])) + P["mean"]
        logq = std_normal_logpdf(eps) - ad.sum(P["log_std"])
        return x, logq

    def forward(self, z, P=None):
        P = _resolve(P, self.params)
        z = np.atleast_2d(z) if not isinstance(z, ad.Node) else z
        return ad.mul(z, ad.exp(P["log_std"])) + P["mean"], ad.sum(P["log_std"]) + 0.0 * ad.sum(z, axis=1)

    def inverse(self, x, P=None):
        P = _resolve(P, self.params)
        x = np.atleast_2d(x) if not isinstance(x, ad.Node) else x
        z = ad.mul(x - P["mean"], ad.exp(-P["log_std"]))
        return z, 0.0 * ad.sum(z, axis=1) - ad.sum(P["log_std"])

    def log_prob(self, x, P=None):
        z, logdet = self.inverse(x, P)
        return std_normal_logpdf(z) + logdet

    def sample(self, n: int, rng, P=None):
        return self.transform_noise(rng.standard_normal((n, self.dim)), P)

    def metadata(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}

    @classmethod
    def from_metadata(cls, meta: dict, params: ParamVector) -> "GaussianProposal":
        return cls(meta["dim"], params=params)


def make_proposal(meta: dict, params: ParamVector):
    kinds = {"flow": FlowProposal, "gaussian": GaussianProposal}
    try:
        return kinds[meta["kind"]].from_metadata(meta, params)
    except KeyError:
        raise ValueError(f"not an explicit proposal kind: {meta.get('kind')}") from None
