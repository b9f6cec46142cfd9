import json

import pytest

from energy_patchtst.config import ExperimentConfig, load_config, parse_config
from energy_patchtst.errors import ConfigError


def test_empty_document_gives_defaults():
    cfg = parse_config({})
    assert cfg == ExperimentConfig()
    assert cfg.data.lookback == 336 and cfg.data.horizon == 96
    assert cfg.model.loss_weight == 0.5 and cfg.training.lr == 1e-4 and cfg.training.batch_size == 32
    assert cfg.training.patience == 5 and cfg.training.max_epochs == 100
    assert cfg.uncertainty.mc_samples == 50 and cfg.uncertainty.level == 0.95
    assert cfg.data.split == [0.7, 0.1, 0.2]


@pytest.mark.parametrize("raw, where", [
    ({"modle": {}}, "config"),
    ({"model": {"dmodel": 8}}, "model"),
    ({"data": {"synthetic": {"amp": 1}}}, "data.synthetic"),
    ({"corpus": [{"name": "a", "wieght": 1.0}]}, "corpus[0]"),
])
def test_unknown_keys_rejected(raw, where):
    with pytest.raises(ConfigError, match=rf"{where.replace('[', '.').replace(']', '.')}.*unknown"):
        parse_config(raw)


@pytest.mark.parametrize("raw", [
    {"seed": "1"},
    {"model": {"d_model": 8.5}},
    {"ablation": {"pretraining": 1}},
    {"training": {"lr": "fast"}},
    {"data": {"split": 0.7}},
    {"uncertainty": {"interval": "bootstrap"}},
    {"data": {"source": "parquet"}},
    {"uncertainty": {"level": 1.0}},
    {"uncertainty": {"mc_samples": 1}},
    {"data": {"lookback": 0}},
    {"model": "small"},
])
def test_type_and_range_errors(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_int_accepted_for_float():
    assert parse_config({"training": {"lr": 1}}).training.lr == 1.0


def test_toml_and_json_agree(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text('seed = 4\n[model]\nd_model = 16\nwindows = [1, 24]\n'
                    '[[corpus]]\nname = "a"\nweight = 0.5\n')
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"seed": 4, "model": {"d_model": 16, "windows": [1, 24]},
                              "corpus": [{"name": "a", "weight": 0.5}]}))
    a, b = load_config(toml), load_config(js)
    assert a == b and a.corpus[0].weight == 0.5 and a.model.windows == [1, 24]


def test_snapshot_round_trip(tmp_path):
    cfg = parse_config({"seed": 9, "data": {"horizon": 12}})
    path = tmp_path / "snap.json"
    path.write_text(cfg.to_json())
    assert load_config(path) == cfg
    assert load_config(path).to_json() == cfg.to_json()


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(bad)


def test_eval_horizons_default_to_training_horizon():
    assert parse_config({"data": {"horizon": 12}}).eval_horizons() == [12]
    assert parse_config({"evaluate": {"horizons": [6, 12]}}).eval_horizons() == [6, 12]
