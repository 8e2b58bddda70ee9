import json
import subprocess
import sys

import numpy as np
import pytest

from mhprop import cli, mh, pipelines, targets
from mhprop.flows import GaussianProposal

TINY = """
target: {name: normal, dim: 2}
proposal: {kind: flow, hidden: 8, init: affine, init_shift: 0.5}
loss: {kind: ARLB}
train: {iterations: 20, batch_size: 16, buffer_refresh: 16, burn_in: 5, eval_every: 5}
sampler: {n: 300}
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_verify_fast_passes(tmp_path, capsys):
    assert run("verify", "--fast", "--out", tmp_path) == cli.EXIT_OK
    report = json.loads((tmp_path / "verify.json").read_text())
    assert all({"check", "value", "bound", "pass"} <= set(r) for r in report)
    assert "PASS" in capsys.readouterr().out


def test_verify_failure_exit_code():
    assert run("verify", "--fast", "--tol", "theorem1_residual=1e-12") == cli.EXIT_VERIFY


def test_verify_bad_tol_is_config_error():
    assert run("verify", "--fast", "--tol", "nonsense=1") == cli.EXIT_CONFIG
    assert run("verify", "--fast", "--tol", "theorem1_residual=abc") == cli.EXIT_CONFIG


def test_train_db_then_sample_and_diagnose(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    assert run("train-db", "--config", tiny_cfg, "--out", out, "--seed", 1) == cli.EXIT_OK
    for name in ("proposal.bin", "proposal.json", "chain.csv", "ess.json", "summary.json", "metrics.jsonl",
                 "checkpoint.bin", "config.resolved.yaml"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["ess"] > 0 and 0 <= summary["empirical_ar"] <= 1

    s_out = tmp_path / "s"
    args = ("sample", "--config", tiny_cfg, "--checkpoint", out / "proposal", "--out", s_out, "--n", 200)
    assert run(*args) == cli.EXIT_OK
    assert "ar" in json.loads((s_out / "summary.json").read_text())
    assert run("sample", "--config", tiny_cfg, "--checkpoint", out / "checkpoint", "--out", s_out,
               "--sampler", "mixture", "--lambda", 0.5, "--sigma", 0.3, "--n", 100) == cli.EXIT_OK
    assert run("sample", "--checkpoint", out / "proposal", "--target", "mog2", "--out", s_out, "--n", 50) == cli.EXIT_OK
    assert run("sample", "--checkpoint", out / "proposal", "--target", "bimodal1d", "--out", s_out) == cli.EXIT_DATA

    d_out = tmp_path / "d"
    assert run("diagnose", "--config", tiny_cfg, "--chain", out / "chain.csv", "--out", d_out) == cli.EXIT_OK
    assert "ess_min" in json.loads((d_out / "diagnose.json").read_text())
    assert run("diagnose", "--chain", out / "chain.csv", "--target", "bimodal1d", "--out", d_out) == cli.EXIT_DATA


def test_diagnose_reports_mode_coverage(tmp_path):
    t = targets.get_target("mog6")
    rec = mh.run_chain(mh.IndependentKernel(GaussianProposal(2, log_std=np.log(1.5))), t, 2000, seed=0)
    rec.to_csv(tmp_path / "c.csv")
    assert run("diagnose", "--chain", tmp_path / "c.csv", "--target", "mog6", "--out", tmp_path) == cli.EXIT_OK
    report = json.loads((tmp_path / "diagnose.json").read_text())
    assert len(report["mode_coverage"]) == 6


def test_missing_files_are_data_errors(tmp_path):
    assert run("sample", "--checkpoint", tmp_path / "nothing", "--out", tmp_path) == cli.EXIT_DATA
    assert run("diagnose", "--chain", tmp_path / "nothing.csv", "--out", tmp_path) == cli.EXIT_DATA
    assert run("train-sb", "--data", tmp_path / "nothing.csv", "--out", tmp_path) == cli.EXIT_DATA


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {iterationz: 3}\n")
    assert run("train-db", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    bad.write_text("train: {batch_size: 0}\n")
    assert run("train-db", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    bad.write_text("proposal: {init: magic}\n")
    assert run("train-db", "--config", bad, "--out", tmp_path) == cli.EXIT_CONFIG
    assert run("train-db", "--config", tmp_path / "missing.yaml", "--out", tmp_path) == cli.EXIT_CONFIG


def test_bad_dataset_is_data_error(tmp_path):
    csv = tmp_path / "d.csv"
    csv.write_text("a,y\n1,0\n1,1\n")
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"target: {{name: logistic, dataset: heart, dataset_path: {csv}}}\ntrain: {{iterations: 1}}\n")
    assert run("train-db", "--config", cfg, "--out", tmp_path) == cli.EXIT_DATA


def test_train_sb_from_csv(tmp_path):
    data = targets.get_target("mog6").sample(500, np.random.default_rng(0))
    pipelines.write_samples_csv(tmp_path / "data.csv", data)
    cfg = tmp_path / "sb.yaml"
    cfg.write_text("proposal: {gen_hidden: 8, disc_hidden: 8}\n"
                   "train: {iterations: 3, k_d: 1, final_disc_steps: 5, batch_size: 32}\nsampler: {n: 200}\n")
    assert run("train-sb", "--config", cfg, "--data", tmp_path / "data.csv", "--out", tmp_path) == cli.EXIT_OK
    report = json.loads((tmp_path / "grid_kl.json").read_text())
    assert {"grid_kl_raw", "grid_kl_mh"} <= set(report)
    assert (tmp_path / "generator.bin").exists() or any(tmp_path.glob("*.bin"))


def test_landscape(tmp_path, capsys):
    assert run("landscape", "--objective", "arlb", "--resolution", 5, "--out", tmp_path) == cli.EXIT_OK
    lines = (tmp_path / "landscape_arlb.csv").read_text().splitlines()
    assert lines[0] == "mu,sigma,arlb" and len(lines) == 26
    assert "argmax_cell" in json.loads(capsys.readouterr().out)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "mhprop.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("verify", "train-db", "train-sb", "sample", "diagnose", "landscape"):
        assert sub in out.stdout
