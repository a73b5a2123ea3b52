from __future__ import annotations

import pytest

from frba.config import ConfigError, RunConfig, apply_override, emit_config, load_config, parse_assignment, parse_config


def test_default_round_trip():
    cfg = RunConfig()
    assert parse_config(emit_config(cfg)) == cfg


def test_modified_round_trip(tmp_path):
    cfg = RunConfig(seed=7)
    for key, value in [
        ("train.l2_lambda", 1e-5),
        ("train.proximal_mu", 0.0),
        ("federation.participation_fraction", 0.2),
        ("data.path", "logins.csv"),
        ("data.max_users", 500),
        ("profile.bootstrap_first_login", True),
        ("risk.asset_criticality", 3),
    ]:
        cfg = apply_override(cfg, key, value)
    text = emit_config(cfg)
    assert parse_config(text) == cfg
    path = tmp_path / "run.yaml"
    path.write_text(text)
    assert load_config(path) == cfg


def test_partial_file_keeps_defaults():
    cfg = parse_config("seed: 3\ntrain:\n  epochs: 2\n")
    assert cfg.seed == 3 and cfg.train.epochs == 2
    assert cfg.train.learning_rate == RunConfig().train.learning_rate


def test_module_configs_built_from_sections():
    cfg = apply_override(RunConfig(seed=5), "federation.update_threshold", 30)
    sim = cfg.simulation_config()
    assert sim.train.update_threshold == 30 and sim.seed == 5
    assert cfg.experiment_config().alarm_level == 2
    assert cfg.profile_kwargs()["decay_alpha"] == 0.95


@pytest.mark.parametrize(
    "key,value",
    [
        ("train.learning_rate", 0.0),
        ("train.dropout_rate", 1.0),
        ("risk.asset_criticality", 4),
        ("federation.participation_fraction", 0.0),
        ("profile.decay_alpha", 1.5),
        ("data.synthetic.anomaly_rate", 1.0),
        ("workers", 0),
    ],
)
def test_validation_rejects(key, value):
    with pytest.raises(ConfigError):
        apply_override(RunConfig(), key, value).validate()


def test_type_and_key_errors():
    with pytest.raises(ConfigError):
        parse_config("train:\n  epochs: many\n")
    with pytest.raises(ConfigError):
        parse_config("bogus: 1\n")
    with pytest.raises(ConfigError):
        parse_config("format: something-else\n")
    with pytest.raises(ConfigError):
        apply_override(RunConfig(), "train", 3)
    with pytest.raises(ConfigError):
        apply_override(RunConfig(), "train.nope", 3)
    with pytest.raises(ConfigError):
        parse_assignment("novalue")
    assert parse_assignment("train.epochs=3") == ("train.epochs", 3)
    assert parse_assignment("data.path=a=b.csv") == ("data.path", "a=b.csv")
