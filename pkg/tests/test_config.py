import pytest
import yaml

from mhprop import config
from mhprop.config import ConfigError


def test_defaults_resolve():
    cfg = config.resolve()
    assert cfg["train"]["batch_size"] == 64 and cfg["train"]["lr"] == 1e-3
    assert cfg["diagnostics"]["ess_threshold"] == 0.05


def test_override_and_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  iterations: 7\nloss:\n  kind: AR\n")
    cfg = config.load(p, {"train": {"seed": 4}})
    assert cfg["train"]["iterations"] == 7 and cfg["train"]["seed"] == 4 and cfg["loss"]["kind"] == "AR"
    p.write_text("train:\n  iterationz: 7\n")
    with pytest.raises(ConfigError, match="train.iterationz"):
        config.load(p)
    p.write_text("train: 3\n")
    with pytest.raises(ConfigError, match="mapping"):
        config.load(p)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        config.load(tmp_path / "nope.yaml")
    (tmp_path / "bad.yaml").write_text("train: [\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        config.load(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(ConfigError, match="root"):
        config.load(tmp_path / "list.yaml")


def test_echo_round_trip(tmp_path):
    cfg = config.resolve({"target": {"name": "ring"}})
    path = config.echo(cfg, tmp_path / "out")
    assert yaml.safe_load(path.read_text()) == cfg


def test_defaults_not_mutated():
    config.resolve({"train": {"iterations": 3}})
    assert config.DEFAULTS["train"]["iterations"] == 2000


def test_shipped_configs_resolve():
    from pathlib import Path

    shipped = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert shipped
    for p in shipped:
        config.load(p)
