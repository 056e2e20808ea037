import dataclasses

import numpy as np
import pytest

from histsas.autograd import ops
from histsas.autograd.gradcheck import grad_check
from histsas.autograd.tensor import Tensor
from histsas.errors import ConfigurationError, DimensionError, InputError
from histsas.models import (
    Backbone,
    ModelConfig,
    build_model,
    forward,
    histogram_branch_channels,
    load_checkpoint,
    save_checkpoint,
)
from histsas.nn import Conv2d, Linear

TINY_DEEP = dict(input_size=(8, 8), backbone_channels=(2, 2, 4, 4), blocks_per_stage=1, stem_pool=False, bins=2)


def _deep(kind, **kw):
    return build_model(ModelConfig(kind=kind, num_classes=4, **{**TINY_DEEP, **kw}))


def test_shallow_hist_features_are_bins_times_channels():
    m = build_model(ModelConfig(kind="shallow_hist", input_size=(64, 64)))
    logits, feats = m.forward_features(Tensor(np.zeros((2, 1, 64, 64))))
    assert feats.shape == (2, 3) and logits.shape == (2, 6)
    assert m.num_parameters() == 3 + 3 + 3 * 6 + 6


def test_shallow_cnn_logits_shape():
    m = build_model(ModelConfig(kind="shallow_cnn", input_size=(64, 64), num_classes=5))
    assert forward(m, np.zeros((3, 64, 64))).shape == (3, 5)
    assert m.num_parameters() == 3 * 49 + 3 + 3 * 5 + 5


def test_shallow_input_size_mismatch():
    m = build_model(ModelConfig(kind="shallow_hist", input_size=(32, 32)))
    with pytest.raises(DimensionError):
        m(Tensor(np.zeros((1, 1, 30, 32))))


def test_window_larger_than_input_rejected():
    with pytest.raises(ConfigurationError):
        build_model(ModelConfig(kind="shallow_cnn", input_size=(5, 5)))


def test_branch_channels_wide_backbone():
    cfg = ModelConfig(kind="deep_parallel", input_size=(32, 32), backbone_channels=(64, 128, 256, 512), bins=16)
    assert Backbone.output_size(cfg) == (2, 2)
    assert histogram_branch_channels(cfg) == (8, (2, 2))
    assert histogram_branch_channels(dataclasses.replace(cfg, bins=4)) == (32, (2, 2))


def test_branch_channels_unsatisfiable_names_constraint():
    cfg = ModelConfig(kind="deep_series", input_size=(32, 32), bins=3)
    with pytest.raises(ConfigurationError, match="R\\*C\\*bins\\*D' = F"):
        build_model(cfg)


def test_backbone_padding_keeps_tiny_inputs_alive():
    cfg = ModelConfig(kind="deep_baseline", input_size=(3, 3), backbone_channels=(2, 2, 2, 2))
    assert Backbone.output_size(cfg) == (1, 1)
    assert build_model(cfg)(Tensor(np.zeros((2, 1, 3, 3)))).shape == (2, 6)


def test_baseline_has_no_histogram_parameters():
    names = [n for n, _ in _deep("deep_baseline").named_parameters()]
    assert not any("hist" in n or "reduce" in n for n in names)


def test_zero_input_gives_finite_logits():
    m = build_model(ModelConfig(kind="deep_baseline", num_classes=4, input_size=(32, 32)))
    out = m(Tensor(np.zeros((2, 1, 32, 32))))
    assert out.shape == (2, 4) and np.all(np.isfinite(out.data))


@pytest.mark.parametrize("kind,factor", [("deep_parallel", 2), ("deep_series", 1), ("deep_baseline", 1)])
def test_deep_feature_lengths(kind, factor):
    m = build_model(ModelConfig(kind=kind, num_classes=4, input_size=(32, 32), bins=16))
    _, feats = m.forward_features(Tensor(np.random.default_rng(0).uniform(0, 1, (2, 1, 32, 32))))
    assert feats.shape == (2, factor * 128) == (2, m.feature_length)


def test_init_is_seed_determined():
    a, b, c = (build_model(ModelConfig(kind="deep_parallel", num_classes=4, input_size=(32, 32), bins=16, seed=s))
               for s in (3, 3, 4))
    for (n, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        np.testing.assert_array_equal(x, y, err_msg=n)
    assert any(not np.array_equal(x, y) for x, y in zip(a.state_dict().values(), c.state_dict().values()))


def test_glorot_limits_and_symmetry():
    rng = np.random.default_rng(0)
    lin = Linear(500, 400)
    lin.reset_parameters(rng)
    limit = np.sqrt(6 / 900)
    assert np.abs(lin.weight.data).max() <= limit
    assert abs(lin.weight.data.mean()) <= 0.01
    assert np.all(lin.bias.data == 0)
    conv = Conv2d(3, 4, 3)
    conv.reset_parameters(rng)
    assert np.abs(conv.weight.data).max() <= np.sqrt(6 / (27 + 36))


def test_histogram_params_start_evenly_spaced():
    m = build_model(ModelConfig(kind="shallow_hist", input_size=(16, 16), seed=9))
    np.testing.assert_allclose(m.hist.centers.data[:, 0], [1 / 6, 1 / 2, 5 / 6])
    np.testing.assert_allclose(m.hist.width_coeffs.data, 3.0)


def test_batchnorm_train_and_eval_modes_differ():
    m = _deep("deep_baseline")
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (4, 1, 8, 8)))
    train_out = m(x).data
    m.eval()
    eval_out = m(x).data
    assert not np.allclose(train_out, eval_out)
    m.eval()
    np.testing.assert_array_equal(m(x).data, eval_out)


@pytest.mark.parametrize("kind", ["shallow_hist", "shallow_cnn", "deep_parallel", "deep_series", "deep_baseline"])
def test_model_gradients(kind):
    if kind.startswith("shallow"):
        cfg = ModelConfig(kind=kind, num_classes=3, input_size=(12, 12), kernel=(4, 4), stride=(2, 2))
    else:
        cfg = ModelConfig(kind=kind, num_classes=3, **TINY_DEEP)
    m = build_model(cfg)
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(0, 1, (4, 1, *cfg.input_size)))
    labels = np.arange(4) % 3
    params = m.parameters()
    assert grad_check(lambda *ps: ops.softmax_cross_entropy(m(x), labels), params) <= 1e-4


def test_composed_and_direct_models_match():
    x = Tensor(np.random.default_rng(3).uniform(0, 1, (2, 1, 8, 8)))
    a = _deep("deep_parallel", hist_impl="composed")
    b = _deep("deep_parallel", hist_impl="direct")
    assert np.abs(a(x).data - b(x).data).max() <= 1e-12


def test_checkpoint_roundtrip(tmp_path):
    m = _deep("deep_parallel", seed=5)
    m(Tensor(np.random.default_rng(4).uniform(0, 1, (4, 1, 8, 8))))  # move running stats
    save_checkpoint(m, tmp_path / "ck", {"note": "x", "epoch": 3})
    back, meta = load_checkpoint(tmp_path / "ck")
    assert back.config == m.config
    assert meta == {"note": "x", "epoch": "3"}
    for (n, a), (_, b) in zip(m.state_dict().items(), back.state_dict().items()):
        np.testing.assert_array_equal(a, b, err_msg=n)
    # byte-identical when saved again
    save_checkpoint(back, tmp_path / "ck2", {"note": "x", "epoch": 3})
    for f in (tmp_path / "ck").iterdir():
        assert f.read_bytes() == (tmp_path / "ck2" / f.name).read_bytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "none")
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "manifest.txt").write_text("hello\n")
    with pytest.raises(InputError):
        load_checkpoint(tmp_path / "bad")


def test_load_state_dict_rejects_shape_mismatch():
    a = _deep("deep_series")
    state = a.state_dict()
    key = next(iter(state))
    state[key] = np.zeros((1,))
    with pytest.raises((DimensionError, InputError)):
        a.load_state_dict(state)


def test_config_rejects_unknown_kind():
    with pytest.raises(ConfigurationError):
        ModelConfig(kind="transformer")
