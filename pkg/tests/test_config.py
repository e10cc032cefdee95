import json

import pytest

from siamsv.config import (
    ConfigError,
    RunConfig,
    apply_override,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


class TestRunConfig:
    def test_defaults(self):
        config = config_from_dict({})
        assert config.encoder.variant == "tiny"
        assert config.train.ssreg_weight == 0.08
        assert config.train.lr_initial == 3e-3
        assert config.augment.snr_db_range == (3.0, 15.0)

    def test_lambda_alias(self, tmp_path):
        path = write_config(tmp_path, {"train": {"lambda": 0.5}})
        assert load_config(path).train.ssreg_weight == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"train": {"warmup_steps": 10}})

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown config section"):
            config_from_dict({"optimizer": {}})

    def test_schema_version_checked(self):
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict({"schema_version": 2})

    def test_invalid_field_value_reported_with_section(self):
        with pytest.raises(ConfigError, match="train"):
            config_from_dict({"train": {"batch_utterances": 1}})

    def test_head_config_derivation(self):
        config = config_from_dict({"encoder": {"variant": "tiny", "embedding_dim": 64}})
        assert config.head_config() is None  # derived inside the model
        explicit = config_from_dict(
            {
                "encoder": {"variant": "tiny", "embedding_dim": 64},
                "heads": {"reg_bottleneck": 8},
            }
        )
        head = explicit.head_config()
        assert head.embedding_dim == 64
        assert head.projection_hidden == 64
        assert head.reg_bottleneck == 8

    def test_augmentation_policy_composition(self):
        config = config_from_dict(
            {
                "train": {"strategy": 4},
                "augment": {"snr_db_range": [0.0, 5.0], "noise_prob": 0.7},
            }
        )
        policy = config.augmentation_policy()
        assert policy.reverb_enabled and policy.noise_enabled
        assert not policy.speed_enabled
        assert policy.snr_db_range == (0.0, 5.0)
        assert policy.noise_prob == 0.7

    def test_roundtrip(self, tmp_path):
        config = config_from_dict({"train": {"lambda": 0.3, "seed": 9}})
        path = str(tmp_path / "echo.json")
        save_config(path, config)
        back = load_config(path)
        assert back == config
        data = json.loads(open(path).read())
        assert data["train"]["lambda"] == 0.3  # external name preserved

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(str(path))


class TestOverrides:
    def test_set_value(self):
        data = apply_override({}, "train.seed=3")
        assert data["train"]["seed"] == 3

    def test_set_json_values(self):
        data = apply_override({}, "augment.snr_db_range=[0, 9]")
        assert data["augment"]["snr_db_range"] == [0, 9]
        data = apply_override(data, "encoder.variant=tiny")
        assert data["encoder"]["variant"] == "tiny"

    def test_existing_section_merged(self):
        data = apply_override({"train": {"seed": 1}}, "train.total_steps=7")
        assert data["train"] == {"seed": 1, "total_steps": 7}

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            apply_override({}, "train.seed")
        with pytest.raises(ConfigError):
            apply_override({}, "seed=3")

    def test_load_with_overrides(self, tmp_path):
        path = write_config(tmp_path, {"train": {"seed": 1}})
        config = load_config(path, ["train.seed=2", "train.lambda=0"])
        assert config.train.seed == 2
        assert config.train.ssreg_weight == 0

    def test_config_to_dict_lists(self):
        data = config_to_dict(RunConfig())
        assert data["augment"]["speed_factors"] == [0.9, 1.0, 1.1]
