#!/usr/bin/env python3
"""
Tests for the sectioned config file
"""

import sys
import os
from dataclasses import replace

import pytest

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.utils.config import PipelineConfig, dump_config, load_config, parse_config
from src.utils.errors import ConfigError


def test_parse_overrides_and_defaults():
    config = parse_config(
        "[sampler]\n"
        "switch_step = 4\n"
        "mock = oracle\n"
        "latent_shape = 2, 3, 4, 5\n"
        "\n"
        "[tsdf]\n"
        "origin = -1.0, 0.5, 2\n"
    )
    assert config.sampler.switch_step == 4
    assert config.sampler.mock == "oracle"
    assert config.sampler.latent_shape == (2, 3, 4, 5)
    assert config.tsdf.origin == (-1.0, 0.5, 2.0)
    assert config.sampler.guidance_scale == 6.0
    assert config.loss == PipelineConfig().loss


def test_parse_errors_name_the_key():
    with pytest.raises(ConfigError, match="sampler.bogus"):
        parse_config("[sampler]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="nowhere"):
        parse_config("[nowhere]\nkey = 1\n")
    with pytest.raises(ConfigError, match="sampler.inference_steps"):
        parse_config("[sampler]\ninference_steps = many\n")
    with pytest.raises(ConfigError, match="tsdf.dims"):
        parse_config("[tsdf]\ndims = 1, 2\n")
    with pytest.raises(ConfigError):
        parse_config("key without section = 1\n")


def test_dump_round_trip():
    config = PipelineConfig()
    config = replace(config, tsdf=replace(config.tsdf, origin=(-0.1, 0.25, 3.0), voxel_size=0.015),
                     refine=replace(config.refine, repeats=3)).with_seed(17)
    parsed = parse_config(dump_config(config))
    assert parsed == config
    assert parsed.config_hash() == config.config_hash()


def test_shipped_config_matches_defaults(monkeypatch):
    monkeypatch.delenv("DFORGE_THREADS", raising=False)
    path = os.path.join(project_root, "config", "dforge.conf")
    assert load_config(path) == PipelineConfig()


def test_thread_override(monkeypatch, tmp_path):
    monkeypatch.setenv("DFORGE_THREADS", "3")
    assert load_config().run.threads == 3

    monkeypatch.setenv("DFORGE_THREADS", "lots")
    with pytest.raises(ConfigError):
        load_config()

    monkeypatch.delenv("DFORGE_THREADS")
    with pytest.raises(ConfigError) as info:
        load_config(str(tmp_path / "missing.conf"))
    assert info.value.exit_code == 2


def test_hash_and_seed():
    base = PipelineConfig()
    assert base.with_seed(None) is base
    assert base.with_seed(0).config_hash() == base.config_hash()
    assert base.with_seed(1).config_hash() != base.config_hash()
    assert base.with_seed(1).run.seed == 1


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
