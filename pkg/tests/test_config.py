import pytest

from semmtl.config import find_preset, list_presets, load_config, parse_override, resolve_path
from semmtl.layers import ConfigError


def test_all_sixteen_presets_load():
    names = list_presets()
    assert len(names) == 16
    for name in names:
        cfg = load_config(name)
        assert cfg.run.topology == name.split("-")[1].upper()


def test_dep_lws_preset():
    run = load_config("presets/dep-lws").run
    assert run.lam == 0.5 and run.model_config().layers == 4
    assert run.model_config().topology == "LWS"


def test_overrides_are_type_checked():
    cfg = load_config("upos-fsn", ["training.epochs=3", "model.shared_dim=none", "training.eval_train=yes"])
    assert cfg.run.epochs == 3 and cfg.run.model.shared_dim is None and cfg.run.eval_train is True
    with pytest.raises(ConfigError, match="expected int"):
        load_config("upos-fsn", ["training.epochs=three"])
    with pytest.raises(ConfigError, match="unknown key"):
        load_config("upos-fsn", ["training.bogus=1"])
    with pytest.raises(ConfigError, match="unknown config section"):
        load_config("upos-fsn", ["nope.x=1"])
    with pytest.raises(ConfigError):
        parse_override("training.epochs")


def test_unknown_key_in_file_rejected(tmp_path):
    (tmp_path / "c.ini").write_text("[training]\nepoch = 3\n")
    with pytest.raises(ConfigError, match="training.epoch"):
        load_config(tmp_path / "c.ini")


def test_semantic_validation_names_source(tmp_path):
    (tmp_path / "c.ini").write_text("[training]\nlam = -1\n")
    with pytest.raises(ConfigError, match="c.ini"):
        load_config(tmp_path / "c.ini")


def test_missing_config():
    with pytest.raises(ConfigError, match="not found"):
        find_preset("no-such-preset")


def test_fixture_prefix_and_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SEMMTL_FIXTURES", str(tmp_path))
    assert resolve_path("fixtures:a.tsv") == tmp_path / "a.tsv"
    assert resolve_path(None) is None


def test_echo_round_trips(tmp_path):
    cfg = load_config("snli-psn", ["training.lam=0.25"])
    (tmp_path / "echo.ini").write_text(cfg.to_ini())
    again = load_config(tmp_path / "echo.ini")
    assert again.run == cfg.run and again.data == cfg.data
