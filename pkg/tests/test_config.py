import json

import pytest

from spectralign import ConfigError, PipelineConfig, load_config


class TestPipelineConfig:
    def test_empty_config_is_valid(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{}")
        cfg = load_config(str(p))
        assert cfg == PipelineConfig()

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"w10": 1.0}))
        with pytest.raises(ConfigError, match="w10"):
            load_config(str(p))

    def test_typo_of_weight_name_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"W1": 5.0}))
        with pytest.raises(ConfigError, match="W1"):
            load_config(str(p))

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError, match="w6"):
            PipelineConfig(w6=-1.0)

    def test_k_minimum(self):
        with pytest.raises(ConfigError, match="K"):
            PipelineConfig(K=1)

    def test_bad_refine_mode(self):
        with pytest.raises(ConfigError, match="refine"):
            PipelineConfig(refine="cubic")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(str(p))

    def test_round_trip_and_hash_stability(self):
        cfg = PipelineConfig(K=20, w6=3.0, refine="linear")
        clone = PipelineConfig.from_dict(cfg.to_dict())
        assert clone == cfg
        assert clone.content_hash() == cfg.content_hash()
        assert clone.content_hash() != PipelineConfig().content_hash()

    def test_replace(self):
        cfg = PipelineConfig()
        assert cfg.replace(refine="none").refine == "none"
        assert cfg.refine == "neural"

    def test_mlp_widths(self):
        cfg = PipelineConfig(hidden_width=64, hidden_layers=3)
        assert cfg.mlp_widths(10, 3) == [10, 64, 64, 64, 3]
