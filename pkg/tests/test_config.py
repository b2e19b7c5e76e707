"""Config schema validation tests."""

import json

import pytest

from graphmoe.config import apply_overrides, default_config, load_config, merge_config
from graphmoe.errors import ConfigError


class TestMerge:
    def test_defaults_validate(self):
        merge_config({})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="'bogus'"):
            merge_config({"bogus": 1})

    def test_unknown_nested_key_names_path(self):
        with pytest.raises(ConfigError, match="train.momentum"):
            merge_config({"train": {"momentum": 0.9}})

    def test_partial_sections_keep_defaults(self):
        cfg = merge_config({"train": {"epochs": 3}})
        assert cfg["train"]["epochs"] == 3
        assert cfg["train"]["lr"] == default_config()["train"]["lr"]

    def test_bad_values_rejected(self):
        cases = [
            {"task": "clustering"},
            {"train": {"epochs": 0}},
            {"train": {"lr": -1}},
            {"train": {"alpha": 2.0}},
            {"train": {"prune_type": "magic"}},
            {"gate": {"gating_mode": "dense"}},
            {"gate": {"gate_init": "ones"}},
            {"model": {"dropout": 1.0}},
            {"model": {"pe_dim": 0}},
            {"model": {"expert_kinds": []}},
            {"model": {"expert_kinds": ["GCN", "Perceptron"]}},
            {"data": {"source": "network"}},
            {"data": {"p_in": 1.5}},
        ]
        for user in cases:
            with pytest.raises(ConfigError):
                merge_config(user)

    def test_pe_mode_needs_checkpoint_paths(self):
        with pytest.raises(ConfigError, match="expert_checkpoints"):
            merge_config({"train": {"pe_mode": True}})


class TestOverrides:
    def test_dotted_override(self):
        cfg = apply_overrides(default_config(), ["train.lr=0.5", "seed=9"])
        assert cfg["train"]["lr"] == 0.5
        assert cfg["seed"] == 9

    def test_json_values_parse(self):
        cfg = apply_overrides(default_config(),
                              ['model.expert_kinds=["GCN","GIN"]',
                               "train.pruning=false"])
        assert cfg["model"]["expert_kinds"] == ["GCN", "GIN"]
        assert cfg["train"]["pruning"] is False

    def test_unknown_override_path(self):
        with pytest.raises(ConfigError, match="train.magic"):
            apply_overrides(default_config(), ["train.magic=1"])

    def test_override_must_have_equals(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides(default_config(), ["train.lr"])


class TestFileLoading:
    def test_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 7}))
        assert load_config(str(path))["seed"] == 7

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{seed: 7")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(str(path))
