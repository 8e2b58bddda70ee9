import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhprop import mh, targets
from mhprop.diagnostics import GridOracle, proposal_logpdf, quad_acceptance_rate, target_logpdf
from mhprop.flows import GaussianProposal
from mhprop.mh import ChainRecord, IndependentKernel, MixtureKernel, RandomWalkKernel

STD1 = targets.get_target("normal", dim=1)
LINE = GridOracle.line(-15, 15, 6001)


class TwoState:
    """Target and proposal on {0, 1}, encoded as 1-D states."""

    def __init__(self, probs):
        self.log_p = np.log(np.asarray(probs, dtype=float))
        self.dim = 1

    def log_unnorm(self, x):
        return self.log_p[np.asarray(x)[:, 0].astype(int)]

    log_prob = log_unnorm

    def logp(self, x):
        return float(self.log_p[int(np.asarray(x).ravel()[0])])

    def sample(self, n, rng):
        x = (rng.random(n) < np.exp(self.log_p[1])).astype(float)[:, None]
        return x, self.log_unnorm(x)


def test_imh_step_identity_always_accepts():
    q = GaussianProposal(1)
    rng = np.random.default_rng(0)
    x = np.array([0.3])
    for _ in range(50):
        x, acc, lr = mh.imh_step(x, STD1, q, rng)
        assert acc and lr == pytest.approx(0.0, abs=1e-12)


def test_identity_chain_accepts_everything():
    rec = mh.run_chain(IndependentKernel(GaussianProposal(1)), STD1, 1_000_000, seed=0)
    assert rec.empirical_ar == 1.0
    one = mh.run_chain(IndependentKernel(GaussianProposal(1)), STD1, 1, seed=0)
    assert len(one) == 1 and one.accepted.tolist() == [True]


def test_imh_ar_matches_theorem1_quadrature():
    q = GaussianProposal(1, mean=1.0)
    rec = mh.run_chain(IndependentKernel(q), STD1, 1_000_000, seed=1)
    quad = quad_acceptance_rate(target_logpdf(STD1), proposal_logpdf(q), LINE)
    assert abs(rec.empirical_ar - quad) < 5e-3


def test_chain_marginal_moments():
    q = GaussianProposal(1, mean=0.5, log_std=np.log(1.5))
    rec = mh.run_chain(IndependentKernel(q), STD1, 1_000_000, seed=2)
    x = rec.states[:, 0]
    # standard errors inflated by the integrated autocorrelation, via batch means
    batches = x.reshape(1000, 1000)
    se_mean = batches.mean(1).std() / np.sqrt(1000)
    se_var = (batches**2).mean(1).std() / np.sqrt(1000)
    assert abs(x.mean()) < 4 * se_mean
    assert abs(x.var() - 1) < 4 * se_var


def test_detailed_balance_two_states():
    target, proposal = TwoState([0.3, 0.7]), TwoState([0.6, 0.4])
    rec = mh.run_chain(IndependentKernel(proposal), target, 1_000_000, seed=3)
    s = rec.states[:, 0].astype(int)
    prev, nxt = s[:-1], s[1:]
    diff = ((prev == 0) & (nxt == 1)).astype(float) - ((prev == 1) & (nxt == 0))
    batches = diff[: 999 * 1000].reshape(999, 1000).mean(1)
    se = batches.std() / np.sqrt(len(batches))
    assert abs(diff.mean()) < 3 * se
    assert np.mean(s) == pytest.approx(0.7, abs=0.01)


def test_ar_invariant_to_target_scale():
    q = GaussianProposal(1, mean=0.7)
    shifted = targets.TargetDensity("shift", 1, lambda x: STD1.log_unnorm(x) + 123.0, STD1.grad_log_unnorm)
    a = mh.run_chain(IndependentKernel(q), STD1, 20_000, seed=4)
    b = mh.run_chain(IndependentKernel(q), shifted, 20_000, seed=4)
    assert a.empirical_ar == b.empirical_ar


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-1, 1))
def test_rejected_steps_repeat_state(seed, mu, log_sd):
    rec = mh.run_chain(IndependentKernel(GaussianProposal(1, mean=mu, log_std=log_sd)), STD1, 300, seed=seed)
    rej = np.flatnonzero(~rec.accepted[1:]) + 1
    np.testing.assert_array_equal(rec.states[rej], rec.states[rej - 1])
    assert rec.empirical_ar == np.mean(rec.accepted)


def test_chain_deterministic_given_seed():
    q = GaussianProposal(1, mean=1.0)
    a = mh.run_chain(IndependentKernel(q), STD1, 500, seed=9)
    b = mh.run_chain(IndependentKernel(q), STD1, 500, seed=9)
    np.testing.assert_array_equal(a.states, b.states)


def test_non_finite_ratio_rejected_and_counted():
    q = GaussianProposal(1)
    bad = targets.TargetDensity("bad", 1, lambda x: np.where(x[:, 0] > 0, np.nan, -0.5 * x[:, 0] ** 2), STD1.grad_log_unnorm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rec = mh.run_chain(IndependentKernel(q), bad, 2000, init=np.array([-1.0]), seed=5)
    assert rec.n_nonfinite > 0
    assert np.all(rec.states[:, 0] <= 0)


def test_run_chain_validations():
    with pytest.raises(ValueError):
        mh.run_chain(IndependentKernel(GaussianProposal(1)), STD1, 0)
    with pytest.raises(ValueError):
        mh.run_chain(RandomWalkKernel(0.5), STD1, 10)
    with pytest.raises(ValueError):
        MixtureKernel(1.5, GaussianProposal(1), 0.5)


# ----------------------------------------------------------------- mixture kernel


def test_mixture_lambda_one_is_imh():
    q = GaussianProposal(1, mean=0.4)
    kern = MixtureKernel(1.0, q, np.array([0.5]))
    r1, r2 = np.random.default_rng(6), np.random.default_rng(6)
    x1 = x2 = np.array([0.2])
    for _ in range(200):
        x1, a1, l1 = mh.mixture_step(x1, STD1, kern, r1)
        x2, a2, l2 = mh.imh_step(x2, STD1, q, r2)
        assert a1 == a2 and l1 == pytest.approx(l2, abs=1e-12)
        np.testing.assert_array_equal(x1, x2)


def test_mixture_lambda_zero_is_random_walk():
    kern = MixtureKernel(0.0, GaussianProposal(1, mean=3.0), np.array([0.5]))
    rng = np.random.default_rng(7)
    x = np.array([0.2])
    for _ in range(200):
        x_old = x
        x, acc, lr = mh.mixture_step(x, STD1, kern, rng)
        if acc:
            assert lr == pytest.approx(STD1.logp(x) - STD1.logp(x_old), abs=1e-12)


def test_mixture_chain_targets_p():
    kern = MixtureKernel(0.5, GaussianProposal(1, mean=1.0), np.array([0.8]))
    rec = mh.run_chain(kern, STD1, 100_000, seed=8)
    assert abs(rec.states.mean()) < 0.05 and abs(rec.states.var() - 1) < 0.05


# ----------------------------------------------------------------- rejection sampling


def test_rejection_identity():
    _, frac, viol = mh.rejection_sample(STD1, GaussianProposal(1), 1.0, 10_000, np.random.default_rng(0))
    assert frac == 1.0 and viol == 0


def test_rejection_half_and_imh_beats_it():
    q = GaussianProposal(1, log_std=np.log(2.0))
    _, frac, viol = mh.rejection_sample(STD1, q, 2.0, 1_000_000, np.random.default_rng(1))
    assert abs(frac - 0.5) < 0.01 and viol == 0
    rec = mh.run_chain(IndependentKernel(q), STD1, 1_000_000, seed=1)
    assert rec.empirical_ar >= 0.5 - 0.005


def test_rejection_envelope_warning():
    q = GaussianProposal(1, log_std=np.log(2.0))
    with pytest.warns(RuntimeWarning):
        mh.rejection_sample(STD1, q, 1.0, 1000, np.random.default_rng(2), check_points=LINE.axes[0][:, None])
    assert mh.estimate_envelope(STD1, q, LINE.axes[0][:, None], safety=1.0) == pytest.approx(2.0, rel=1e-9)


# ----------------------------------------------------------------- export


def test_csv_round_trip(tmp_path):
    rec = mh.run_chain(IndependentKernel(GaussianProposal(2, mean=0.3)), targets.get_target("normal", dim=2), 50, seed=0)
    rec.to_csv(tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "step,accepted,dim0,dim1"
    back = ChainRecord.from_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.states, rec.states)
    np.testing.assert_array_equal(back.accepted, rec.accepted)
    rec.save_summary(tmp_path / "s.json")
    assert "empirical_ar" in (tmp_path / "s.json").read_text()
