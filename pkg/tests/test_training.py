import dataclasses

import numpy as np
import pytest

from mhprop import checkpoint, targets, training
from mhprop.checkpoint import CheckpointError
from mhprop.flows import FlowProposal, GaussianProposal
from mhprop.nets import DiscriminatorNet, GeneratorNet
from mhprop.training import SampleBuffer, TrainConfig

STD2 = targets.get_target("normal", dim=2)


def small_cfg(**kw):
    base = dict(loss="ARLB", iterations=30, batch_size=16, buffer_refresh=16, burn_in=5, eval_every=5, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def strip_wall(metrics):
    return [{k: v for k, v in m.items() if k != "wall_s"} for m in metrics]


# ----------------------------------------------------------------- config and buffer


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(loss="nope")
    assert TrainConfig(loss="vi").loss == "VI"


def test_buffer_fifo_and_sampling():
    buf = SampleBuffer(4, 1)
    buf.push(np.arange(3.0)[:, None], tag=1)
    buf.push(np.arange(3.0, 6.0)[:, None], tag=2)
    states, tags = buf.ordered()
    assert states[:, 0].tolist() == [2, 3, 4, 5] and tags.tolist() == [1, 2, 2, 2]
    assert buf.fill == 4
    draw = buf.sample(4, np.random.default_rng(0))
    assert sorted(draw[:, 0].tolist()) == [2, 3, 4, 5]
    with pytest.raises(ValueError):
        SampleBuffer(4, 1).sample(1, np.random.default_rng(0))
    again = SampleBuffer.restore(4, states, tags)
    np.testing.assert_array_equal(again.ordered()[0], states)


# ----------------------------------------------------------------- density-based


def test_already_optimal_proposal_stays_put():
    flow = FlowProposal(2, hidden=16, seed=0)
    res = training.train_density_based(STD2, flow, small_cfg(iterations=50))
    # per-sample gradients are nonzero noise at the optimum, so Adam wanders by about lr per step
    assert all(abs(m["loss"]) < 0.05 for m in res.metrics)
    assert res.metrics[0]["ar_window"] > 0.95
    drift = np.max(np.abs(res.params.values - FlowProposal(2, hidden=16, seed=0).params.values))
    assert drift <= 50 * 1e-3 + 1e-12


def test_metrics_records():
    flow = FlowProposal.affine(np.ones(2), np.zeros(2), hidden=16)
    res = training.train_density_based(STD2, flow, small_cfg())
    assert [m["iter"] for m in res.metrics] == [5, 10, 15, 20, 25, 30]
    for m in res.metrics:
        assert set(m) == {"iter", "loss", "loss_kind", "ar_window", "arlb_est", "wall_s"}
        assert m["loss_kind"] == "ARLB" and 0 <= m["ar_window"] <= 1


def test_training_improves_shifted_gaussian():
    q = GaussianProposal(2, mean=1.5)
    training.train_density_based(STD2, q, small_cfg(iterations=400, lr=1e-2, batch_size=64, buffer_refresh=64))
    assert np.max(np.abs(q.mean)) < 0.2


def test_determinism_and_resume(tmp_path):
    cfg = small_cfg(iterations=40, checkpoint_every=20)
    mk = lambda: FlowProposal.affine(np.array([0.5, -0.5]), np.zeros(2), hidden=16)  # noqa: E731
    full = training.train_density_based(STD2, mk(), cfg, out_dir=tmp_path / "a")
    again = training.train_density_based(STD2, mk(), cfg)
    assert strip_wall(full.metrics) == strip_wall(again.metrics)

    half = training.train_density_based(STD2, mk(), dataclasses.replace(cfg, iterations=20), out_dir=tmp_path / "b")
    state, _ = training.load_training_checkpoint(tmp_path / "b" / "checkpoint", mk())
    assert state.iteration == 20 and strip_wall(state.metrics) == strip_wall(half.metrics)
    resumed = training.train_density_based(STD2, mk(), cfg, resume=state)
    assert strip_wall(resumed.metrics) == strip_wall(full.metrics)
    np.testing.assert_array_equal(resumed.params.values, full.params.values)
    assert (tmp_path / "a" / "metrics.jsonl").exists()
    assert strip_wall(training.read_metrics(tmp_path / "a" / "metrics.jsonl")) == strip_wall(full.metrics)


def test_checkpoint_bytes_round_trip(tmp_path):
    flow = FlowProposal.affine(np.zeros(2), np.zeros(2), hidden=8)
    cfg = small_cfg(iterations=10)
    res = training.train_density_based(STD2, flow, cfg, out_dir=tmp_path)
    first = (tmp_path / "checkpoint.bin").read_bytes(), (tmp_path / "checkpoint.json").read_bytes()
    state, _ = training.load_training_checkpoint(tmp_path / "checkpoint", flow)
    training.save_training_checkpoint(tmp_path / "again", flow, state, cfg)
    assert (tmp_path / "again.bin").read_bytes() == first[0]
    assert (tmp_path / "again.json").read_bytes() == first[1]
    np.testing.assert_array_equal(state.params.values, res.params.values)


def test_checkpoint_wrong_dimension(tmp_path):
    flow = FlowProposal.affine(np.zeros(2), np.zeros(2), hidden=8)
    training.train_density_based(STD2, flow, small_cfg(iterations=5), out_dir=tmp_path)
    with pytest.raises(CheckpointError, match="D=2"):
        training.load_training_checkpoint(tmp_path / "checkpoint", FlowProposal(3, hidden=8))
    with pytest.raises(CheckpointError, match="layout"):
        training.load_training_checkpoint(tmp_path / "checkpoint", FlowProposal(2, hidden=4))


def test_buffer_tags_record_producing_iteration():
    flow = FlowProposal.affine(np.ones(2), np.zeros(2), hidden=8)
    res = training.train_density_based(STD2, flow, small_cfg(iterations=12))
    _, tags = res.state.buffer.ordered()
    assert tags.min() >= 1 and tags.max() == 12 and np.all(np.diff(tags) >= 0)


def test_replica_chains():
    flow = FlowProposal.affine(np.ones(2), np.zeros(2), hidden=8)
    res = training.train_density_based(STD2, flow, small_cfg(iterations=5, n_chains=4))
    assert res.state.x_cur.shape == (4, 2)
    assert res.state.buffer.fill <= 5 * 16


def test_minibatch_bayes_objective():
    data = targets.synthesize_dataset("heart", seed=0)
    t = targets.logistic_posterior(data)
    q = GaussianProposal(data.d + 1, log_std=-1.0)
    res = training.train_density_based(t, q, small_cfg(iterations=10, minibatch=32))
    assert all(m["loss_kind"] == "BAYES" for m in res.metrics)
    assert all(np.isfinite(m["loss"]) for m in res.metrics)


def test_model_round_trip(tmp_path):
    for model in (FlowProposal(2, hidden=8, seed=1), GaussianProposal(3, mean=0.2), GeneratorNet(2, 4, 8), DiscriminatorNet(2, 8)):
        training.save_model(tmp_path / model.kind, model)
        back = training.load_model(tmp_path / model.kind)
        assert type(back) is type(model)
        np.testing.assert_array_equal(back.params.values, model.params.values)


def test_checkpoint_version_and_payload_errors(tmp_path):
    checkpoint.save(tmp_path / "c", {"a": np.arange(3.0)}, {"x": 1})
    arrays, meta = checkpoint.load(tmp_path / "c.bin")
    assert arrays["a"].tolist() == [0, 1, 2] and meta == {"x": 1}
    side = (tmp_path / "c.json").read_text()
    (tmp_path / "c.json").write_text(side.replace('"version": 1', '"version": 99'))
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.load(tmp_path / "c")
    (tmp_path / "c.json").write_text(side)
    (tmp_path / "c.bin").write_bytes((tmp_path / "c.bin").read_bytes() + b"\0" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint.load(tmp_path / "c")
    with pytest.raises(CheckpointError, match="sidecar"):
        checkpoint.load(tmp_path / "missing")


# ----------------------------------------------------------------- sample-based


def test_discriminator_is_half_when_data_is_generator_output():
    gen = GeneratorNet(2, 4, 16, seed=0)
    data = np.asarray(gen.generate(4000, np.random.default_rng(0)))
    disc = DiscriminatorNet(2, 16, seed=1)
    disc.params.view("d.b2")[:] += 2.0  # start far from 1/2
    probe = np.asarray(gen.generate(2000, np.random.default_rng(5)))
    assert float(np.mean(disc.prob(probe))) > 0.8
    frozen = gen.params.values.copy()
    training.fit_discriminator(disc, gen, data, small_cfg(batch_size=256), 300)
    np.testing.assert_array_equal(gen.params.values, frozen)
    assert abs(float(np.mean(disc.prob(probe))) - 0.5) < 0.01
    assert float(np.max(np.abs(disc.prob(probe) - 0.5))) < 0.1


def test_sample_based_metrics():
    gen, disc = GeneratorNet(2, 4, 8, seed=0), DiscriminatorNet(2, 8, seed=1)
    data = np.random.default_rng(0).standard_normal((500, 2))
    res = training.train_sample_based(data, gen, disc, small_cfg(iterations=4, eval_every=2, k_d=1, final_disc_steps=2))
    assert [m["iter"] for m in res.metrics] == [2, 4]
    assert set(res.metrics[-1]) >= {"loss", "disc_loss", "disc_acc"}


def test_sample_based_needs_enough_data():
    with pytest.raises(ValueError):
        training.train_sample_based(np.zeros((3, 2)), GeneratorNet(2, 4, 8), DiscriminatorNet(2, 8), small_cfg())
