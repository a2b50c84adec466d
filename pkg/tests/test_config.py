import json

import pytest

from segue.config import config_hash, load_config, merge, shipped
from segue.errors import ConfigError


def test_shipped_defaults():
    cfg = load_config()
    t = cfg["train"]
    assert t["epsilon"] == pytest.approx(8 / 255) and t["distortion"]["rho_d"] == pytest.approx(1 / 255)
    assert (t["epochs"], t["cycle"], t["lr_f"], t["lr_g"], t["alpha"], t["beta"]) == (20, 5, 5e-4, 5e-4, 1.0, 1e-3)
    assert t["stop_loss"] == 1e-3 and t["bits"] == 16
    assert cfg["attack"]["arch"] == "resnet" and cfg["attack"]["epochs"] == 30


def test_base_inheritance(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('base = "paper_defaults"\n[train]\nepochs = 3\n[train.distortion]\nrho_d = "2/255"\n')
    cfg = load_config(p)
    assert cfg["train"]["epochs"] == 3 and cfg["train"]["distortion"]["rho_d"] == pytest.approx(2 / 255)
    assert cfg["train"]["cycle"] == 5


def test_strict_config_names_missing_key(tmp_path):
    doc = shipped("paper_defaults")
    del doc["train"]["epsilon"]
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.key == "epsilon" and "epsilon" in str(exc.value)


def test_strict_config_complete_is_accepted(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(shipped("paper_defaults")))
    assert load_config(p) == load_config()


def test_unknown_key_and_bad_base(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('base = "paper_defaults"\n[train]\nepsilonn = 0.1\n')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.key == "train.epsilonn"
    p.write_text('base = "nope"\n')
    with pytest.raises(ConfigError):
        load_config(p)


def test_bad_fraction_and_parse_errors(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('base = "paper_defaults"\n[train]\nepsilon = "8/0"\n')
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[[[")
    with pytest.raises(ConfigError):
        load_config(p)


def test_merge_and_hash():
    assert merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}}) == {"a": {"b": 1, "c": 3}}
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
