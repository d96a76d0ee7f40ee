#!/usr/bin/env python3

import os

import pytest

from hand.config import RunConfig
from hand.lib.errors import ConfigError
from hand.msap import FactorParams

CONF_DIR = os.path.join(os.path.dirname(__file__), "..", "conf")


def test_defaults():
    cfg = RunConfig()
    assert cfg.model.d_model == 128
    assert cfg.training.levels[0] == "line"
    assert cfg.msap.alpha == FactorParams()
    assert cfg.data.use_synthetic


@pytest.mark.parametrize("data,key", [
    ({"modle": {}}, "modle"),
    ({"model": {"dmodel": 8}}, "model.dmodel"),
    ({"msap": {"omega": {"thta": 0.1}}}, "msap.omega.thta"),
    ({"training": {"text_modulation": {"x": 1}}},
     "training.text_modulation.x"),
])
def test_unknown_key_reports_path(data, key):
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict(data)
    assert e.value.key == key
    assert key in str(e.value)


@pytest.mark.parametrize("data", [
    {"model": 3},
    {"training": {"levels": ["poster"]}},
    {"training": {"batch_gamma": 1.5}},
])
def test_bad_values(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_nested_sections_are_built():
    cfg = RunConfig.from_dict({"msap": {"omega": {"base": 2.0}}})
    assert cfg.msap.omega == FactorParams(base=2.0)
    assert cfg.msap.scaling_params().omega.base == 2.0


def test_override():
    cfg = RunConfig()
    assert cfg.override("training.lr=0.5").training.lr == 0.5
    assert cfg.override("model.stem_channels=[1, 2, 3]").model \
        .stem_channels == [1, 2, 3]
    assert cfg.override("training.out_dir=runs/x").training.out_dir == \
        "runs/x"
    assert cfg.override("msap.alpha.base=3").msap.alpha.base == 3
    # The original is left untouched.
    assert cfg.training.lr == 1e-3
    with pytest.raises(ConfigError):
        cfg.override("training.bogus=1")
    with pytest.raises(ConfigError):
        cfg.override("nosuch.lr=1")
    with pytest.raises(ConfigError):
        cfg.override("training.lr")


def test_json_roundtrip(micro_cfg):
    again = RunConfig.from_dict(micro_cfg.to_dict())
    assert again == micro_cfg


@pytest.mark.parametrize("name", ["micro.json", "desk.json", "smoke.json"])
def test_shipped_configs_load(name):
    cfg = RunConfig.load(os.path.join(CONF_DIR, name))
    assert cfg.training.levels[0] == "line"
    assert cfg.model.d_model % cfg.model.num_heads == 0


def test_load_rejects_broken_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"model\": ")
    with pytest.raises(ConfigError):
        RunConfig.load(str(path))
