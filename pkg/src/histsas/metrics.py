"""Accuracy by label factor, confusion matrices, Calinski-Harabasz, feature export."""

from __future__ import annotations

import csv
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autograd.tensor import Tensor, no_grad
from .datasets import DatasetSplit, factor_names, project_labels
from .errors import InputError
from .textures import center_crop


def prepare_batch(images: np.ndarray, crop_size: Optional[Sequence[int]] = None) -> Tensor:
    """(n, H, W) images -> (n, 1, h, w) tensor, center-cropped when asked."""
    if crop_size is not None and tuple(crop_size) != tuple(images.shape[-2:]):
        images = center_crop(images, crop_size)
    return Tensor(images[:, None])


def predict(
    model, split: DatasetSplit, crop_size=None, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """(logits, penultimate features) for every image, in eval mode."""
    was_training = model.training
    model.eval()
    logits, feats = [], []
    try:
        with no_grad():
            for start in range(0, len(split), batch_size):
                x = prepare_batch(split.images[start : start + batch_size], crop_size)
                out, f = model.forward_features(x)
                logits.append(out.data)
                feats.append(f.data)
    finally:
        model.train(was_training)
    if not logits:
        return np.zeros((0, model.config.num_classes)), np.zeros((0, model.feature_length))
    return np.concatenate(logits), np.concatenate(feats)


def confusion_matrix(true: np.ndarray, pred: np.ndarray, k: int) -> np.ndarray:
    """Rows are true labels, columns predictions."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def factor_accuracy(
    pred: np.ndarray, true: np.ndarray, classes, factor: str
) -> tuple[float, np.ndarray]:
    """Accuracy (percent) and confusion matrix after projecting onto ``factor``."""
    p = project_labels(pred, classes, factor)
    t = project_labels(true, classes, factor)
    k = len(factor_names(classes, factor))
    cm = confusion_matrix(t, p, k)
    acc = 100.0 * np.trace(cm) / cm.sum() if cm.sum() else float("nan")
    return float(acc), cm


def evaluate(model, split: DatasetSplit, label_factor: str = "both", crop_size=None):
    """(accuracy %, confusion matrix) of argmax predictions on ``split``."""
    if label_factor not in ("both", "statistical", "structural"):
        raise InputError(f"unknown label factor {label_factor!r}")
    logits, _ = predict(model, split, crop_size)
    return factor_accuracy(logits.argmax(axis=1), split.labels, split.classes, label_factor)


def calinski_harabasz(features, labels) -> float:
    """Between/within dispersion ratio, each normalized by its degrees of freedom.

    Larger is better.  Zero within-class dispersion yields ``inf`` (with a
    warning) instead of raising.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    n = x.shape[0]
    if labels.shape[0] != n:
        raise InputError(f"{labels.shape[0]} labels for {n} feature rows")
    uniq, inverse = np.unique(labels, return_inverse=True)
    k = uniq.size
    if k < 2:
        raise InputError("Calinski-Harabasz needs at least two distinct labels")
    if n <= k:
        raise InputError(f"Calinski-Harabasz needs more samples ({n}) than classes ({k})")
    overall = x.mean(axis=0)
    between = 0.0
    within = 0.0
    for j in range(k):
        members = x[inverse == j]
        centroid = members.mean(axis=0)
        between += members.shape[0] * float(np.sum((centroid - overall) ** 2))
        within += float(np.sum((members - centroid) ** 2))
    if within == 0.0:
        warnings.warn("zero within-class dispersion; Calinski-Harabasz is infinite", RuntimeWarning)
        return float("inf")
    return (between / (k - 1)) / (within / (n - k))


def export_features(model, split: DatasetSplit, path, crop_size=None) -> Path:
    """CSV: image id, joint/structural/statistical labels, penultimate features."""
    _, feats = predict(model, split, crop_size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["image_id", "joint", "structural", "statistical"]
            + [f"f{i}" for i in range(feats.shape[1])]
        )
        for i in range(len(split)):
            c = split.classes[split.labels[i]]
            writer.writerow(
                [f"{split.partition}-{i:05d}", c.name, c.structural, c.statistical]
                + [repr(float(v)) for v in feats[i]]
            )
    return path


def read_features(path) -> tuple[np.ndarray, dict[str, list[str]]]:
    """Load an exported feature CSV: (features, {'joint': [...], ...})."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    feats = np.array([[float(v) for v in r[4:]] for r in body], dtype=np.float64)
    labels = {
        "joint": [r[1] for r in body],
        "structural": [r[2] for r in body],
        "statistical": [r[3] for r in body],
    }
    return feats, labels


def write_confusion_csv(cm: np.ndarray, names: Sequence[str], path) -> Path:
    """Raw counts followed by row-normalized percentages, both labelled."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["counts"] + list(names))
        for name, row in zip(names, cm):
            writer.writerow([name] + [int(v) for v in row])
        writer.writerow(["row_percent"] + list(names))
        for name, row in zip(names, cm):
            total = row.sum()
            writer.writerow(
                [name] + [repr(100.0 * float(v) / float(total) if total else 0.0) for v in row]
            )
    return path
