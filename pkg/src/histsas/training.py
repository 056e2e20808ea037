"""Mini-batch training with early stopping, and the run report it produces."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import kv
from .autograd import ops
from .autograd.tensor import Tensor, no_grad
from .datasets import DatasetSplit, factor_names
from .errors import ConfigurationError, DivergenceError, InputError
from .metrics import calinski_harabasz, factor_accuracy, predict, prepare_batch
from .optim import Adam
from .textures import random_crop

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    batch_size: int = 128
    patience: Optional[int] = 10
    augmentation: str = "none"
    crop_size: Optional[tuple[int, int]] = None
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigurationError("patience must be >= 1 when set")
        if self.augmentation not in ("none", "random_crop"):
            raise ConfigurationError(f"unknown augmentation {self.augmentation!r}")
        if self.augmentation == "random_crop" and self.crop_size is None:
            raise ConfigurationError("random_crop augmentation needs crop_size")
        if self.crop_size is not None:
            self.crop_size = tuple(int(v) for v in self.crop_size)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)

    def lines(self) -> list[str]:
        return kv.dataclass_lines(self, "train")

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        return kv.dataclass_from_items(cls, items, "train")


# picked by validation loss on seed 0 over {0.001, 0.003, 0.01, 0.03}
SHALLOW_LEARNING_RATES = {"shallow_cnn": 0.003, "shallow_hist": 0.03}


def shallow_protocol(kind: str = "shallow_hist", **overrides) -> TrainConfig:
    """300 epochs, patience 10, batch 128, learning rate chosen per model kind."""
    base = dict(epochs=300, learning_rate=SHALLOW_LEARNING_RATES[kind], batch_size=128, patience=10)
    base.update(overrides)
    return TrainConfig(**base)


def deep_protocol(**overrides) -> TrainConfig:
    """100 epochs, Adam lr 0.001, batch 16, random crops, no early stopping."""
    base = dict(
        epochs=100, learning_rate=0.001, batch_size=16, patience=None,
        augmentation="random_crop", crop_size=(32, 32),
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class RunReport:
    model_kind: str = ""
    bins: int = 0
    seed: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf
    test_size: int = 0
    accuracy: dict[str, float] = field(default_factory=dict)
    calinski_harabasz: dict[str, float] = field(default_factory=dict)
    confusion: dict[str, np.ndarray] = field(default_factory=dict)
    factor_names: dict[str, list[str]] = field(default_factory=dict)
    wall_seconds: float = 0.0  # kept out of the serialized report

    def lines(self) -> list[str]:
        out = [
            f"model_kind = {self.model_kind}",
            f"bins = {self.bins}",
            f"seed = {self.seed}",
            f"epochs_run = {len(self.train_loss)}",
            f"stop_epoch = {self.stop_epoch}",
            f"best_epoch = {self.best_epoch}",
            f"best_val_loss = {kv.format_value(float(self.best_val_loss))}",
            f"train_loss = {kv.format_value([float(v) for v in self.train_loss])}",
            f"val_loss = {kv.format_value([float(v) for v in self.val_loss])}",
            f"test_size = {self.test_size}",
        ]
        for factor, acc in self.accuracy.items():
            out.append(f"accuracy.{factor} = {kv.format_value(float(acc))}")
        for factor, ch in self.calinski_harabasz.items():
            out.append(f"calinski_harabasz.{factor} = {kv.format_value(float(ch))}")
        for factor, cm in self.confusion.items():
            flat = ";".join(",".join(str(int(v)) for v in row) for row in cm)
            out.append(f"confusion.{factor} = {flat}")
        return out

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.lines()) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunReport":
        rep = cls()
        for key, value in kv.parse_lines(Path(path).read_text().splitlines()):
            section, _, sub = key.partition(".")
            if section == "accuracy":
                rep.accuracy[sub] = float(value)
            elif section == "calinski_harabasz":
                rep.calinski_harabasz[sub] = float(value)
            elif section == "confusion":
                rep.confusion[sub] = np.array(
                    [[int(v) for v in row.split(",")] for row in value.split(";")]
                )
            elif key in ("train_loss", "val_loss"):
                setattr(rep, key, [float(v) for v in value.split(",") if v.strip()])
            elif key == "best_val_loss":
                rep.best_val_loss = float(value)
            elif key in ("bins", "seed", "stop_epoch", "best_epoch", "test_size"):
                setattr(rep, key, int(value))
            elif key == "model_kind":
                rep.model_kind = value
        return rep


def _as_splits(data) -> tuple[DatasetSplit, DatasetSplit, Optional[DatasetSplit]]:
    if isinstance(data, dict):
        return data["train"], data["val"], data.get("test")
    if len(data) == 2:
        return data[0], data[1], None
    return data[0], data[1], data[2]


def _loss_over(model, split: DatasetSplit, crop_size) -> float:
    logits, _ = predict(model, split, crop_size)
    with no_grad():
        return ops.softmax_cross_entropy(Tensor(logits), split.labels).item()


def train(model, data, config: TrainConfig, on_epoch=None):
    """Fit ``model`` and return ``(model, RunReport)``.

    Stops after ``config.epochs`` or once the validation loss has failed to
    improve on its best value for ``config.patience`` consecutive epochs; the
    parameters from the best validation epoch are restored before returning.
    When a test split is supplied the report also carries test metrics.
    """
    train_split, val_split, test_split = _as_splits(data)
    if len(train_split) == 0 or len(val_split) == 0:
        raise InputError("training needs non-empty train and val partitions")
    if train_split.num_classes != model.config.num_classes:
        raise InputError(
            f"dataset has {train_split.num_classes} classes, model expects {model.config.num_classes}"
        )
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.learning_rate, config.adam_betas, config.adam_eps)
    crop = config.crop_size
    report = RunReport(model.config.kind, model.config.bins, config.seed)
    best_state = model.state_dict()
    best = math.inf
    stale = 0
    n = len(train_split)

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            imgs = train_split.images[idx]
            if config.augmentation == "random_crop":
                imgs = np.stack([random_crop(im, crop, rng) for im in imgs])
                x = Tensor(imgs[:, None])
            else:
                x = prepare_batch(imgs, crop)
            loss = ops.softmax_cross_entropy(model(x), train_split.labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * len(idx)
        train_loss = total / n
        val_loss = _loss_over(model, val_split, crop)
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, val_loss)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        log.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        report.stop_epoch = epoch
        if val_loss < best:
            best = val_loss
            best_state = model.state_dict()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break

    model.load_state_dict(best_state)
    report.best_val_loss = best
    if test_split is not None and len(test_split):
        fill_test_metrics(model, test_split, report, crop)
    report.wall_seconds = time.perf_counter() - start
    return model, report


def fill_test_metrics(model, split: DatasetSplit, report: RunReport, crop_size=None) -> RunReport:
    """Accuracy, confusion and Calinski-Harabasz for every usable label factor."""
    logits, feats = predict(model, split, crop_size)
    pred = logits.argmax(axis=1)
    report.test_size = len(split)
    for factor in ("both", "statistical", "structural"):
        names = factor_names(split.classes, factor)
        if factor != "both" and len(names) < 2:
            continue
        acc, cm = factor_accuracy(pred, split.labels, split.classes, factor)
        report.accuracy[factor] = acc
        report.confusion[factor] = cm
        report.factor_names[factor] = names
        labels = split.factor_labels(factor)
        if len(np.unique(labels)) >= 2 and len(labels) > len(np.unique(labels)):
            report.calinski_harabasz[factor] = calinski_harabasz(feats, labels)
    return report


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0
