import numpy as np
import pytest
from scipy.special import expit

from mhprop import ad
from mhprop.ad import AdamState, ParamVector
from mhprop.nets import DiscriminatorNet, GeneratorNet, PairDiscriminator, disc_loss, ratio_estimate


def zero_last(net, prefix, last):
    arrays = net.params.views()
    arrays[f"{prefix}.w{last}"] = np.zeros_like(arrays[f"{prefix}.w{last}"])
    arrays[f"{prefix}.b{last}"] = np.zeros_like(arrays[f"{prefix}.b{last}"])
    net.params = ParamVector.from_arrays({k: np.array(v) for k, v in arrays.items()})
    return net


def fit(loss, params, steps, lr, batches):
    state = AdamState.zeros(params.size)
    for i in range(steps):
        rec = ad.value_and_grad(loss, params, batches(i))
        params = ad.adam_step(params, rec.grad, state, lr)
    return params


# ----------------------------------------------------------------- generator


def test_generator_zero_final_layer_outputs_zero():
    gen = zero_last(GeneratorNet(2, 8, 16, seed=0), "g", 2)
    assert np.all(np.asarray(gen.generate(50, np.random.default_rng(0))) == 0)


def test_generator_deterministic_with_seed():
    gen = GeneratorNet(2, 8, 16, seed=3)
    a = gen.generate(20, np.random.default_rng(7))
    b = gen.generate(20, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


# ----------------------------------------------------------------- discriminator


def test_half_discriminator_loss_is_two_log_two():
    disc = zero_last(DiscriminatorNet(2, 16), "d", 2)
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert disc_loss(disc, disc.params.views(), x, x) == pytest.approx(2 * np.log(2), abs=1e-12)
    np.testing.assert_allclose(disc.log_ratio(x), 0.0, atol=1e-12)


def test_discriminator_output_clamped():
    disc = DiscriminatorNet(1, 4)
    arrays = disc.params.views()
    arrays["d.b2"] = np.array([1e3])
    disc.params = ParamVector.from_arrays({k: np.array(v) for k, v in arrays.items()})
    d = disc.prob(np.zeros((3, 1)))
    assert np.all(d < 1) and np.all(d > 0)


def test_ratio_arithmetic():
    assert float(ratio_estimate(np.array([0.5]))[0]) == 0.0
    log_acc = ratio_estimate(np.array([0.8]))[0] - ratio_estimate(np.array([0.5]))[0]
    assert np.exp(log_acc) == pytest.approx(4.0)


@pytest.fixture(scope="module")
def trained_gaussian_disc():
    """d trained to separate p = N(0,1) from q = N(1,1)."""
    disc = DiscriminatorNet(1, 32, seed=0)
    rng = np.random.default_rng(0)

    def batches(_):
        return rng.normal(0, 1, (256, 1)), rng.normal(1, 1, (256, 1))

    def loss(P, b):
        return disc_loss(disc, P, b[0], b[1])

    disc.params = fit(loss, disc.params, 3000, 3e-3, batches)
    return disc


def test_trained_disc_matches_optimal(trained_gaussian_disc):
    grid = np.linspace(-2, 3, 101)[:, None]
    d_star = expit(0.5 - grid[:, 0])  # p/(p+q) for these Gaussians
    assert np.max(np.abs(trained_gaussian_disc.prob(grid) - d_star)) < 0.05


def test_trained_disc_log_ratio_mae(trained_gaussian_disc):
    grid = np.linspace(-2, 3, 101)[:, None]
    assert np.mean(np.abs(trained_gaussian_disc.log_ratio(grid) - (0.5 - grid[:, 0]))) < 0.1


def test_disc_gradient_touches_only_disc_params():
    disc, gen = DiscriminatorNet(2, 8), GeneratorNet(2, 4, 8)
    rng = np.random.default_rng(0)
    fake = np.asarray(gen.generate(16, rng))
    rec = ad.value_and_grad(lambda P, _: disc_loss(disc, P, rng.normal(size=(16, 2)), fake), disc.params)
    assert rec.grad.shape == (disc.params.size,)


# ----------------------------------------------------------------- pair discriminator


def test_pair_symmetry():
    pd = PairDiscriminator(2, 16, seed=1)
    rng = np.random.default_rng(0)
    x, xp = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
    np.testing.assert_allclose(pd.forward(x, x), 0.5, atol=0)
    np.testing.assert_allclose(pd.forward(x, xp) + pd.forward(xp, x), 1.0, atol=1e-15)


def test_trained_pair_discriminator_ratio():
    """Pairs x ~ N(0,1), x' ~ N(1,1): log p(x)q(x')/(p(x')q(x)) = x' - x."""
    pd = PairDiscriminator(1, 32, seed=0)
    rng = np.random.default_rng(1)

    def batches(_):
        return rng.normal(0, 1, (256, 1)), rng.normal(1, 1, (256, 1))

    pd.params = fit(lambda P, b: pd.loss(P, b[0], b[1]), pd.params, 3000, 3e-3, batches)
    g = np.linspace(-1.0, 2.0, 16)  # where both densities have mass
    a, b = np.meshgrid(g, g, indexing="ij")
    x, xp = a.reshape(-1, 1), b.reshape(-1, 1)
    assert np.mean(np.abs(pd.log_ratio(x, xp) - (xp - x)[:, 0])) < 0.15
