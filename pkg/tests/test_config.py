import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histsas import kv
from histsas.config import DatasetConfig, ExperimentConfig, deep_experiment, shallow_experiment
from histsas.errors import ConfigurationError
from histsas.models import ModelConfig
from histsas.training import TrainConfig


@pytest.mark.parametrize(
    "cfg",
    [ExperimentConfig(), shallow_experiment("shallow_cnn"), deep_experiment("deep_series", bins=8)],
)
def test_roundtrip_presets(cfg):
    assert ExperimentConfig.parse(cfg.serialize()) == cfg


@settings(max_examples=50, deadline=None)
@given(
    lr=st.floats(1e-6, 1.0, allow_nan=False),
    epochs=st.integers(1, 500),
    patience=st.one_of(st.none(), st.integers(1, 50)),
    seeds=st.lists(st.integers(0, 10**6), min_size=1, max_size=5),
    bins=st.integers(1, 32),
    per_class=st.integers(1, 500),
    out=st.from_regex(r"[a-z][a-z0-9_/]{0,20}", fullmatch=True),
)
def test_roundtrip_property(lr, epochs, patience, seeds, bins, per_class, out):
    cfg = ExperimentConfig(
        dataset=DatasetConfig(per_class=per_class, statistical_params=("binomial.p:0.25",)),
        model=ModelConfig(kind="shallow_hist", bins=bins),
        train=TrainConfig(epochs=epochs, learning_rate=lr, patience=patience),
        out_dir=out,
        seeds=tuple(seeds),
    )
    assert ExperimentConfig.parse(cfg.serialize()) == cfg


def test_unknown_key_is_named():
    with pytest.raises(ConfigurationError, match="model.colour"):
        ExperimentConfig.parse("model.colour = red\n")
    with pytest.raises(ConfigurationError, match="widget.size"):
        ExperimentConfig.parse("widget.size = 3\n")
    with pytest.raises(ConfigurationError, match="experiment.name"):
        ExperimentConfig.parse("experiment.name = x\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigurationError, match="train.epochs"):
        ExperimentConfig.parse("train.epochs = 3\ntrain.epochs = 4\n")


def test_bad_value_names_key():
    with pytest.raises(ConfigurationError, match="train.epochs"):
        ExperimentConfig.parse("train.epochs = many\n")


def test_comments_and_blank_lines_ignored():
    cfg = ExperimentConfig.parse("# comment\n\nmodel.kind = shallow_cnn\nexperiment.seeds = 4, 5\n")
    assert cfg.model.kind == "shallow_cnn" and cfg.seeds == (4, 5)


def test_unknown_structural_kind_named():
    with pytest.raises(ConfigurationError, match="blobs"):
        ExperimentConfig.parse("dataset.structural = blobs\n")


def test_custom_preset_needs_both_factors():
    with pytest.raises(ConfigurationError):
        DatasetConfig(preset="custom", structural=("stripe",)).class_specs()


def test_overrides_reach_texture_specs():
    ds = DatasetConfig(
        preset="grid",
        structural_params=("stripe.period:4",),
        statistical_params=("multinomial.levels:0.1/0.5/0.9",),
    )
    specs = {(s.structural, s.statistical): s for s in ds.class_specs()}
    assert specs[("stripe", "constant")].structural_params == {"period": 4}
    assert specs[("cross", "multinomial")].statistical_params == {"levels": (0.1, 0.5, 0.9)}
    assert len(specs) == 9


@pytest.mark.parametrize("item", ["stripe:4", "blobs.size:3", "stripe.period"])
def test_bad_override_rejected(item):
    with pytest.raises(ConfigurationError):
        DatasetConfig(structural_params=(item,))


def test_multisite_preset_counts():
    ds = DatasetConfig(preset="multisite", size=(16, 16))
    train, val, test = ds.build()
    assert (len(train), len(val), len(test)) == (94, 12, 12)


def test_save_and_load(tmp_path):
    cfg = deep_experiment("deep_parallel")
    assert ExperimentConfig.load(cfg.save(tmp_path / "c.txt")) == cfg
    with pytest.raises(FileNotFoundError):
        ExperimentConfig.load(tmp_path / "missing.txt")


def test_value_formatting_is_shortest_roundtrip():
    assert kv.format_value(0.7) == "0.7"
    assert kv.format_value((0.7, 0.1)) == "0.7, 0.1"
    assert kv.format_value(None) == "none"
    assert kv.parse_value("inf", float) == float("inf")
