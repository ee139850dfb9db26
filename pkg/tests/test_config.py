import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spherepeft.config import CLIP_LIKE_PRESET, ConfigError, RunConfig, load_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert (cfg.b_v, cfg.b_e, cfg.n_slices, cfg.embed_dim) == (2, 2, 4, 4)
        assert cfg.uses_dcrc

    def test_clip_like_preset(self):
        assert (CLIP_LIKE_PRESET.b_v, CLIP_LIKE_PRESET.b_e, CLIP_LIKE_PRESET.embed_dim) == (6, 4, 512)

    @pytest.mark.parametrize(
        "changes",
        [{"q": 3}, {"d_v": 0}, {"L": 1.5}, {"tau": 0.0}, {"relation_variant": "conv"},
         {"activation": "gelu"}, {"batch_size": 1}, {"beta1": 1.0}, {"d_s": 0}, {"m": True}],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            RunConfig(**changes)

    def test_unknown_key_is_fatal(self):
        with pytest.raises(ConfigError, match="unknown"):
            RunConfig.from_dict({"d_v": 8, "learning_rate": 0.1})

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict([1, 2])

    def test_integer_floats_accepted(self):
        assert RunConfig.from_dict({"lr": 1}).lr == 1.0

    def test_hash_ignores_run_length(self):
        assert RunConfig(iterations=5).config_hash() == RunConfig(iterations=50).config_hash()
        assert RunConfig(seed=1).config_hash() != RunConfig(seed=2).config_hash()

    @settings(max_examples=40, deadline=None)
    @given(
        st.sampled_from([1, 2, 4]),
        st.integers(1, 4),
        st.integers(1, 3),
        st.sampled_from(["linear", "mlp", "none"]),
        st.integers(0, 10**6),
        st.floats(1e-4, 1.0),
    )
    def test_roundtrip_idempotent(self, q, mult, L, variant, seed, lr):
        cfg = RunConfig(d_v=q * mult, d_e=q * 2, q=q, L=L, relation_variant=variant, seed=seed, lr=lr)
        once = RunConfig.from_dict(json.loads(cfg.to_json()))
        assert once == cfg
        assert once.to_json() == RunConfig.from_dict(json.loads(once.to_json())).to_json()


class TestShippedConfigs:
    @pytest.mark.parametrize("name", ["toy.json", "toy_mlp.json", "toy_pop_only.json", "clip_like.json"])
    def test_loads(self, name, validate):
        cfg = load_config(CONFIG_DIR / name)
        validate(json.loads((CONFIG_DIR / name).read_text()), "config")
        validate(cfg.to_dict(), "config")

    def test_toy_matches_defaults(self):
        assert load_config(CONFIG_DIR / "toy.json") == RunConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)
