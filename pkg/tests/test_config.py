"""Config precedence, env overrides, and stage hashing."""

import json

import pytest

from symbolkit.config import ConfigError, PipelineConfig, config_hash


def test_defaults_resolve():
    cfg = PipelineConfig.load(None, {"seed": 5})
    assert cfg["seed"] == 5
    assert cfg.section("embed")["n_neighbors"] == 50
    assert cfg.section("embed")["seed"] == 5  # inherits master seed
    assert cfg.section("cluster")["k_max"] == 1000


def test_file_then_env_then_cli(tmp_path):
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps({"seed": 1, "embed": {"n_neighbors": 10}}))
    env = {"SYMBOLKIT_SEED": "2", "SYMBOLKIT_EMBED_N_NEIGHBORS": "20",
           "SYMBOLKIT_CLUSTER_K_MAX": "64"}
    cfg = PipelineConfig.load(f, {"seed": 3}, environ=env)
    assert cfg["seed"] == 3  # cli wins
    assert cfg.section("embed")["n_neighbors"] == 20  # env beats file
    assert cfg.section("cluster")["k_max"] == 64


def test_env_json_values():
    env = {"SYMBOLKIT_LAYERS": "[1, 3]", "SYMBOLKIT_SYNTH_SIGMA": "0.2"}
    cfg = PipelineConfig.load(None, {"seed": 0}, environ=env)
    assert cfg["layers"] == [1, 3]
    assert cfg.section("synth")["sigma"] == 0.2


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        PipelineConfig.load(None, {"seed": 0, "bogus": 1})
    with pytest.raises(ConfigError, match="embed.bogus"):
        PipelineConfig.load(None, {"seed": 0, "embed": {"bogus": 1}})


def test_explicit_seed_required():
    with pytest.raises(ConfigError, match="seed"):
        PipelineConfig.load(None, {"seed": None})


def test_missing_bundle_path(tmp_path):
    cfg = PipelineConfig.load(None, {"seed": 0, "bundle": str(tmp_path / "no")})
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.validate_paths()


def test_hash_stability_and_sensitivity():
    a = config_hash({"x": 1, "y": [1, 2]})
    b = config_hash({"y": [1, 2], "x": 1})
    assert a == b  # key order free
    assert len(a) == 12
    assert config_hash({"x": 2, "y": [1, 2]}) != a


def test_stage_hash_chains(tmp_path, tiny_bundle):
    from symbolkit import pipeline
    base = {"seed": 0, "bundle": str(tiny_bundle), "out": str(tmp_path)}
    cfg1 = PipelineConfig.load(None, base)
    cfg2 = PipelineConfig.load(None, dict(base, seed=1))
    # a different master seed propagates into embed and cluster hashes
    assert pipeline.stage_dir(cfg1, "pool") == pipeline.stage_dir(cfg2, "pool")
    assert pipeline.stage_dir(cfg1, "embed") != pipeline.stage_dir(cfg2, "embed")
    assert pipeline.stage_dir(cfg1, "cluster") != pipeline.stage_dir(cfg2, "cluster")
