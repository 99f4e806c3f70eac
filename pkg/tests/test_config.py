import json

import pytest

from clrnet.config import ExperimentConfig, from_dict, load_config
from clrnet.errors import ConfigError


def test_defaults_and_required_out_dir():
    cfg = from_dict({"out_dir": "r"}, env={})
    assert isinstance(cfg, ExperimentConfig)
    assert (cfg.clr.variant, cfg.train.epochs, cfg.global_seed) == ("standard", 5, 0)
    with pytest.raises(ConfigError, match="out_dir"):
        from_dict({}, env={})


@pytest.mark.parametrize("doc,where", [
    ({"out_dir": "r", "epochs": 3}, "epochs"),
    ({"out_dir": "r", "train": {"epoch": 3}}, "train"),
    ({"out_dir": "r", "backbone": {"dataset": {"format": "idx", "train_imgs": "x"}}}, "backbone.dataset"),
    ({"out_dir": "r", "report": {"bootstrap": {"resamples": 10}}}, "report.bootstrap"),
])
def test_unknown_keys_are_errors(doc, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        from_dict(doc, env={})


@pytest.mark.parametrize("doc", [
    {"out_dir": "r", "train": {"epochs": "3"}},
    {"out_dir": "r", "train": {"momentum": 1.0}},
    {"out_dir": "r", "deterministic": 1},
    {"out_dir": "r", "backbone": {"dataset": {"format": "png"}}},
    {"out_dir": "r", "tasks": {"datasets": [{"name": "a"}, {"name": "a"}]}},
])
def test_invalid_values(doc):
    with pytest.raises(ConfigError):
        from_dict(doc, env={})


def test_precedence_flag_over_env_over_file():
    env = {"CLR_OUT_DIR": "from_env", "CLR_SEED": "5"}
    cfg = from_dict({"out_dir": "from_file", "global_seed": 1}, env=env)
    assert (cfg.out_dir, cfg.global_seed) == ("from_env", 5)
    cfg = from_dict({"out_dir": "from_file"}, out_dir="from_flag", seed=9, env=env)
    assert (cfg.out_dir, cfg.global_seed) == ("from_flag", 9)
    with pytest.raises(ConfigError):
        from_dict({"out_dir": "x"}, env={"CLR_SEED": "abc"})


def test_load_config_round_trip(tmp_path):
    doc = {"out_dir": "r", "clr": {"variant": "mixed"}, "train": {"lr": 1}}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    cfg = load_config(tmp_path / "c.json", env={})
    assert cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)
    assert from_dict(cfg.to_dict(), env={}) == cfg
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json", env={})
