import json

import pytest

from seqnav.config import ConfigError, RunConfig, load_config, parse_config


def test_defaults_validate():
    cfg = RunConfig()
    assert cfg.step_cap == 200 and cfg.eav.init == 0.30 and cfg.phi_lambda == 0.65


def test_unknown_field_names_its_path():
    with pytest.raises(ConfigError, match=r"eav\.bogus"):
        parse_config({"eav": {"bogus": 1}})


def test_range_error_names_its_path():
    with pytest.raises(ConfigError, match=r"scene\.n_rooms"):
        parse_config({"scene": {"n_rooms": 0}})


def test_fixed_threshold_needs_value():
    with pytest.raises(ConfigError, match="fixed_value"):
        parse_config({"eav": {"threshold_mode": "fixed"}})


def test_room_bounds_ordered():
    with pytest.raises(ConfigError):
        parse_config({"scene": {"room_min": 12, "room_max": 10}})


def test_segmentation_aliases():
    assert parse_config({"segmentation": "II"}).segmentation == "commas"


def test_digest_tracks_content():
    a, b = RunConfig(), RunConfig(seed=1)
    assert a.digest() == RunConfig().digest() != b.digest()


def test_with_updates_revalidates():
    cfg = RunConfig().with_updates(**{"eav.term1": False, "phi_lambda": 0.45})
    assert cfg.eav.term1 is False and cfg.phi_lambda == 0.45
    with pytest.raises(Exception):
        RunConfig().with_updates(**{"phi_lambda": 2.0})


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 5, "suite": {"n_tours": 2}}))
    cfg = load_config(str(p))
    assert cfg.seed == 5 and cfg.suite.n_tours == 2
    assert load_config(None) == RunConfig()


@pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
def test_load_config_bad_documents(tmp_path, text):
    p = tmp_path / "c.json"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(p))
