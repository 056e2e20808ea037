import math

import numpy as np
import pytest

from histsas.autograd.tensor import Tensor
from histsas.datasets import ClassInfo, DatasetSplit
from histsas.errors import ConfigurationError, DivergenceError, InputError
from histsas.models import ModelConfig, build_model
from histsas.optim import Adam, AdamState, adam_step
from histsas.training import RunReport, TrainConfig, deep_protocol, mean_std, shallow_protocol, train

CLASSES = [ClassInfo("dark", "flat", "low"), ClassInfo("bright", "flat", "high")]


def _toy(partition, n, size=8, seed=0, swap=False):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    level = np.where(labels == 1, 0.8, 0.2)
    images = level[:, None, None] + rng.uniform(-0.05, 0.05, (n, size, size))
    if swap:
        labels = 1 - labels
    return DatasetSplit(partition, images, labels, np.arange(n, dtype=np.uint64), CLASSES)


def _tiny_hist(seed=0):
    return build_model(ModelConfig(kind="shallow_hist", num_classes=2, input_size=(8, 8), kernel=(4, 4), stride=(4, 4), seed=seed))


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    p = np.array([1.0, -2.0])
    state = AdamState([p])
    for _ in range(5):
        adam_step([p], [np.zeros(2)], state, lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_formula():
    g = np.array([0.3, -2.0, 1e-3])
    p = np.zeros(3)
    lr, eps = 0.01, 1e-8
    adam_step([p], [g], AdamState([p]), lr=lr, eps=eps)
    # bias-corrected moments after one step are g and g**2
    np.testing.assert_allclose(p, -lr * g / (np.abs(g) + eps), rtol=0, atol=1e-12)


def test_adam_constant_gradient_step_tends_to_lr():
    p = np.zeros(2)
    state = AdamState([p])
    g = np.array([5.0, -0.2])
    prev = p.copy()
    for _ in range(2000):
        prev = p.copy()
        adam_step([p], [g], state, lr=0.001)
    np.testing.assert_allclose(p - prev, -0.001 * np.sign(g), rtol=1e-6)


def test_adam_matches_unrolled_textbook_updates():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(6, 4))
    p = rng.normal(size=4)
    ref = p.copy()
    state = AdamState([p])
    m = np.zeros(4)
    v = np.zeros(4)
    b1, b2, lr, eps = 0.9, 0.999, 0.05, 1e-8
    for t, g in enumerate(grads, start=1):
        adam_step([p], [g], state, lr, (b1, b2), eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    np.testing.assert_allclose(p, ref, rtol=1e-13, atol=1e-15)


def test_adam_wrapper_skips_missing_grads():
    a = Tensor([1.0], requires_grad=True)
    opt = Adam([a], lr=0.1)
    opt.step()
    assert a.data.tolist() == [1.0]


# -- configuration ----------------------------------------------------------

def test_protocol_defaults():
    s = shallow_protocol()
    assert (s.epochs, s.patience, s.batch_size) == (300, 10, 128)
    assert shallow_protocol("shallow_cnn").learning_rate < s.learning_rate
    d = deep_protocol()
    assert (d.epochs, d.learning_rate, d.batch_size, d.patience) == (100, 0.001, 16, None)
    assert d.augmentation == "random_crop"


@pytest.mark.parametrize(
    "kwargs",
    [dict(epochs=0), dict(learning_rate=0.0), dict(batch_size=0), dict(patience=0),
     dict(augmentation="flip"), dict(augmentation="random_crop")],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwargs)


# -- training loop ----------------------------------------------------------

def test_separable_toy_reaches_full_train_accuracy():
    from histsas.metrics import evaluate

    train_split, val_split = _toy("train", 40), _toy("val", 10, seed=1)
    model, report = train(_tiny_hist(), (train_split, val_split), TrainConfig(epochs=50, learning_rate=0.05, batch_size=8, patience=None))
    acc, _ = evaluate(model, train_split)
    assert acc >= 99.0
    assert len(report.train_loss) == 50
    assert report.train_loss[-1] < report.train_loss[0]


def test_early_stopping_restores_best_epoch():
    train_split = _toy("train", 40)
    val_split = _toy("val", 10, seed=1, swap=True)  # learning the task only hurts validation
    snapshots = []
    model = _tiny_hist()

    def remember(epoch, tl, vl):
        snapshots.append(model.state_dict())

    model, report = train(
        model, (train_split, val_split), TrainConfig(epochs=30, learning_rate=0.05, batch_size=8, patience=1),
        on_epoch=remember,
    )
    assert report.val_loss[1] > report.val_loss[0]
    assert report.stop_epoch == 2 and report.best_epoch == 1
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, snapshots[0][name])


def test_training_is_deterministic(tmp_path):
    data = (_toy("train", 30), _toy("val", 6, seed=1), _toy("test", 6, seed=2))
    cfg = TrainConfig(epochs=5, learning_rate=0.05, batch_size=7, seed=3)
    _, a = train(_tiny_hist(), data, cfg)
    _, b = train(_tiny_hist(), data, cfg)
    assert a.write(tmp_path / "a.txt").read_bytes() == b.write(tmp_path / "b.txt").read_bytes()


def test_divergence_is_reported_with_epoch():
    train_split, val_split = _toy("train", 20), _toy("val", 4, seed=1)
    train_split.images[0, 0, 0] = np.nan
    with pytest.raises(DivergenceError, match="epoch 1"):
        train(_tiny_hist(), (train_split, val_split), TrainConfig(epochs=3, learning_rate=0.01))


def test_class_count_mismatch_raises():
    model = build_model(ModelConfig(kind="shallow_hist", num_classes=3, input_size=(8, 8), kernel=(4, 4), stride=(4, 4)))
    with pytest.raises(InputError):
        train(model, (_toy("train", 10), _toy("val", 4)), TrainConfig(epochs=1))


def test_random_crop_training_runs():
    data = (_toy("train", 12, size=10), _toy("val", 4, size=10, seed=1), _toy("test", 4, size=10, seed=2))
    model = build_model(ModelConfig(kind="shallow_hist", num_classes=2, input_size=(8, 8), kernel=(4, 4), stride=(4, 4)))
    cfg = TrainConfig(epochs=2, learning_rate=0.01, batch_size=4, augmentation="random_crop", crop_size=(8, 8))
    _, report = train(model, data, cfg)
    assert report.test_size == 4


# -- reports ----------------------------------------------------------------

def test_report_roundtrip(tmp_path):
    rep = RunReport("shallow_hist", 3, 2, [1.0, 0.5], [1.1, 0.7], 2, 2, 0.7, 6,
                    {"both": 50.0}, {"both": float("inf")}, {"both": np.array([[1, 2], [0, 3]])})
    back = RunReport.read(rep.write(tmp_path / "r.txt"))
    assert back.lines() == rep.lines()
    assert math.isinf(back.calinski_harabasz["both"])


def test_report_leaves_out_wall_time(tmp_path):
    rep = RunReport("shallow_cnn", wall_seconds=12.5)
    assert "12.5" not in "\n".join(rep.lines())


def test_mean_std_uses_sample_deviation():
    mean, std = mean_std([1.0, 2.0, 3.0])
    assert mean == 2.0 and std == pytest.approx(1.0)
    assert mean_std([4.0]) == (4.0, 0.0)
