from __future__ import annotations

import pytest

from ifdl.config import ConfigError, RunConfig, load_config, parse_override, to_plain


def _write(tmp_path, text: str):
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_round_trip_through_plain_dicts():
    loaded = load_config()
    assert loaded.config == RunConfig()
    assert to_plain(loaded.config)["stage1"]["train"]["schedule"]["total_steps"] == 500


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(_write(tmp_path, "[stage1.train]\nlearning_rat = 1.0\n"))
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(overrides=["eval.nope=1"])


def test_bad_types_and_values_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(overrides=["seed=\"eleven\""])
    with pytest.raises(ConfigError):
        load_config(overrides=["data.split=[0.5, 0.5, 0.5]"])
    with pytest.raises(ConfigError):
        load_config(overrides=["eval.perturb=[\"open:1\"]"])
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")


def test_precedence_flag_over_file_over_default(tmp_path):
    path = _write(tmp_path, "seed = 3\noutput_dir = \"runs/x\"\n[eval]\nalpha = 0.3\n")
    loaded = load_config(path, ["seed=5"])
    assert loaded.config.seed == 5
    assert loaded.config.output_dir == "runs/x"
    assert loaded.config.eval.alpha == 0.3
    assert loaded.config.eval.threshold == 0.5
    assert loaded.sources["seed"] == "flag" and loaded.sources["eval.alpha"] == "config"
    text = loaded.describe()
    assert "seed = 5  [flag]" in text and "eval.alpha = 0.3  [config]" in text


def test_warmup_form_switch():
    loaded = load_config(overrides=["stage1.train.schedule.warmup_fraction=0.1"])
    sched = loaded.config.stage1.train.schedule
    assert sched.warmup_steps is None and sched.warmup == 50


def test_parse_override_values():
    assert parse_override("a.b=3") == (["a", "b"], 3)
    assert parse_override("a=[1, 2]") == (["a"], [1, 2])
    assert parse_override("name=runs/x") == (["name"], "runs/x")
    assert parse_override("flag=true") == (["flag"], True)
    with pytest.raises(ConfigError):
        parse_override("novalue")
