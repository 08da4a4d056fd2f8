import json

import pytest

from autv import errors
from autv.config import ENV_PREFIX, PipelineConfig, config_hash, load_config
from autv.errors import AutvError, ConfigError


def test_defaults():
    cfg = load_config(env={})
    assert cfg.seed == 0
    assert cfg.schedule.num_steps == 1000
    assert cfg.schedule.beta_start == pytest.approx(1e-4)
    assert cfg.schedule.beta_end == pytest.approx(0.02)
    assert cfg.schedule.kind == "linear"
    assert cfg.generation.frame_shape == (32, 32)
    assert cfg.generation.num_inference_steps == 50
    assert cfg.generation.alignment_threshold == pytest.approx(0.2)
    assert cfg.generation.max_retries == 3
    assert cfg.backend.train_steps == 5000
    assert cfg.backend.latent_gain_budget == pytest.approx(7e-4)
    assert cfg.chain.num_frames == 7
    assert cfg.metrics.clip_len == 8
    assert cfg.metrics.audit_frames == (2, 6)


def test_file_layer(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 5, "schedule": {"num_steps": 10}}))
    cfg = load_config(path=path, env={})
    assert cfg.seed == 5
    assert cfg.schedule.num_steps == 10
    # untouched fields keep their defaults
    assert cfg.schedule.beta_end == pytest.approx(0.02)


def test_env_overrides_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"schedule": {"num_steps": 10}, "seed": 5}))
    env = {f"{ENV_PREFIX}SCHEDULE__NUM_STEPS": "20", f"{ENV_PREFIX}SEED": "9"}
    cfg = load_config(path=path, env=env)
    assert cfg.schedule.num_steps == 20
    assert cfg.seed == 9


def test_overrides_beat_env():
    env = {f"{ENV_PREFIX}SEED": "9"}
    cfg = load_config(env=env, overrides={"seed": 3})
    assert cfg.seed == 3


def test_env_value_coercion():
    env = {
        f"{ENV_PREFIX}SCHEDULE__BETA_END": "0.05",
        f"{ENV_PREFIX}SCHEDULE__KIND": "cosine",
        f"{ENV_PREFIX}CHAIN__NUM_FRAMES": "0",
    }
    cfg = load_config(env=env)
    assert cfg.schedule.beta_end == pytest.approx(0.05)
    assert cfg.schedule.kind == "cosine"
    assert cfg.chain.num_frames == 0


def test_env_unknown_section_and_shape():
    with pytest.raises(ConfigError):
        load_config(env={f"{ENV_PREFIX}NOPE__X": "1"})
    with pytest.raises(ConfigError):
        load_config(env={f"{ENV_PREFIX}JUSTONEWORD": "1"})


def test_unknown_section_and_field():
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"mystery": {}})
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"schedule": {"nope": 1}})


def test_seed_must_be_int():
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"seed": True})
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"seed": "zero"})


def test_section_must_be_object():
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"schedule": 3})


def test_bad_config_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path=path, env={})
    with pytest.raises(ConfigError):
        load_config(path=tmp_path / "missing.json", env={})
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(path=tmp_path / "list.json", env={})


def test_validation_in_sections():
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"generation": {"frame_height": 4}})
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"backend": {"latent_gain_budget": 0.0}})
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"backend": {"train_steps": 0}})
    with pytest.raises(ConfigError):
        load_config(env={}, overrides={"metrics": {"clip_len": 1}})


def test_config_hash_stable_and_sensitive():
    a = load_config(env={})
    b = load_config(env={})
    assert config_hash(a) == config_hash(b)
    c = load_config(env={}, overrides={"seed": 1})
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_to_dict_round_trips_through_loader():
    cfg = load_config(env={}, overrides={"seed": 7, "metrics": {"clip_len": 4}})
    again = load_config(env={}, overrides=cfg.to_dict())
    assert config_hash(cfg) == config_hash(again)


def test_error_hierarchy():
    public = [
        getattr(errors, name)
        for name in errors.__all__
        if isinstance(getattr(errors, name), type)
    ]
    assert all(issubclass(e, AutvError) for e in public)
    assert issubclass(errors.ProtocolError, errors.MetricError)
    assert issubclass(errors.CapabilityError, errors.BackendError)
    assert issubclass(errors.ChainError, errors.GenerationError)
    exc = errors.ChainError("boom", frame_index=3)
    assert exc.frame_index == 3
