"""Labelled texture datasets with stratified, seed-determined splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .textures import TextureSpec, derive_seed, render_texture

PARTITIONS = ("train", "val", "test")
FACTORS = ("both", "statistical", "structural")

# figure-style short codes for the sonar-like proxy classes
PISAS_CODES = {
    "sandripple": "T1",
    "rocky": "T10",
    "binomial": "S1",
    "multinomial": "S2",
    "constant": "S3",
}


@dataclass(frozen=True)
class ClassInfo:
    name: str
    structural: str
    statistical: str


@dataclass
class DatasetSplit:
    """One partition: images (n, H, W) in [0, 1] with joint labels and seeds."""

    partition: str
    images: np.ndarray
    labels: np.ndarray
    seeds: np.ndarray
    classes: list[ClassInfo]

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def factor_names(self, factor: str) -> list[str]:
        return factor_names(self.classes, factor)

    def factor_labels(self, factor: str) -> np.ndarray:
        return project_labels(self.labels, self.classes, factor)

    @property
    def structural_labels(self) -> np.ndarray:
        return self.factor_labels("structural")

    @property
    def statistical_labels(self) -> np.ndarray:
        return self.factor_labels("statistical")


def factor_names(classes: Sequence[ClassInfo], factor: str) -> list[str]:
    if factor == "both":
        return [c.name for c in classes]
    if factor not in ("statistical", "structural"):
        raise InputError(f"unknown label factor {factor!r}")
    names: list[str] = []
    for c in classes:
        v = getattr(c, factor)
        if not v:
            raise InputError(f"class {c.name!r} has no {factor} label")
        if v not in names:
            names.append(v)
    return names


def project_labels(labels: np.ndarray, classes: Sequence[ClassInfo], factor: str) -> np.ndarray:
    """Map joint class indices onto indices of a coarser label factor."""
    labels = np.asarray(labels, dtype=np.int64)
    if factor == "both":
        return labels
    names = factor_names(classes, factor)
    table = np.array([names.index(getattr(c, factor)) for c in classes], dtype=np.int64)
    return table[labels]


def class_info(spec: TextureSpec, name: Optional[str] = None) -> ClassInfo:
    return ClassInfo(name or f"{spec.structural}-{spec.statistical}", spec.structural, spec.statistical)


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor the val/test shares of ``n``; the remainder goes to train."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigurationError(f"split ratios must be three non-negative numbers, got {ratios!r}")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigurationError(f"split ratios must sum to 1, got {sum(ratios)}")
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    for count, ratio, part in zip((n_train, n_val, n_test), ratios, PARTITIONS):
        if ratio > 0 and count == 0:
            raise ConfigurationError(
                f"ratio {ratio} leaves the {part} partition empty with {n} images per class"
            )
    return n_train, n_val, n_test


def stratified_counts(totals: Sequence[int], num_classes: int) -> list[tuple[int, int, int]]:
    """Spread per-partition totals across classes; earlier classes take remainders."""
    per_class = []
    for c in range(num_classes):
        row = []
        for total in totals:
            base, extra = divmod(int(total), num_classes)
            row.append(base + (1 if c < extra else 0))
        per_class.append(tuple(row))
    return per_class


def _assemble(
    class_specs: Sequence[TextureSpec],
    counts: Sequence[tuple[int, int, int]],
    master_seed: int,
    names: Optional[Sequence[str]] = None,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    classes = [class_info(s, names[i] if names else None) for i, s in enumerate(class_specs)]
    if len({c.name for c in classes}) != len(classes):
        raise ConfigurationError("class names must be unique")
    buckets = {p: ([], [], []) for p in PARTITIONS}
    for c, (spec, row) in enumerate(zip(class_specs, counts)):
        index = 0
        for part, n in zip(PARTITIONS, row):
            imgs, labs, seeds = buckets[part]
            for _ in range(n):
                seed = derive_seed(master_seed, c, index)
                imgs.append(render_texture(spec.with_seed(seed)))
                labs.append(c)
                seeds.append(seed)
                index += 1
    h, w = class_specs[0].size
    out = []
    for part in PARTITIONS:
        imgs, labs, seeds = buckets[part]
        out.append(
            DatasetSplit(
                part,
                np.stack(imgs) if imgs else np.zeros((0, h, w)),
                np.asarray(labs, dtype=np.int64),
                np.asarray(seeds, dtype=np.uint64),
                classes,
            )
        )
    return tuple(out)


def build_dataset(
    class_specs: Sequence[TextureSpec],
    per_class: int,
    split_ratios: Sequence[float] = (0.7, 0.1, 0.2),
    master_seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Render ``per_class`` images of every class and split them stratified.

    Image ``i`` of class ``c`` is seeded with ``derive_seed(master_seed, c, i)``;
    the first images of each class go to train, then val, then test.
    """
    if per_class < 1:
        raise ConfigurationError("per_class must be >= 1")
    if not class_specs:
        raise ConfigurationError("at least one class is required")
    if len({tuple(s.size) for s in class_specs}) != 1:
        raise ConfigurationError("all classes must share one image size")
    row = split_counts(per_class, split_ratios)
    return _assemble(class_specs, [row] * len(class_specs), master_seed, names)


def build_dataset_with_totals(
    class_specs: Sequence[TextureSpec],
    totals: Sequence[int],
    master_seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Like :func:`build_dataset` but with absolute (train, val, test) totals."""
    if len(totals) != 3 or any(int(t) < 0 for t in totals) or int(totals[0]) < 1:
        raise ConfigurationError(f"invalid partition totals {totals!r}")
    return _assemble(class_specs, stratified_counts(totals, len(class_specs)), master_seed, names)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def pisas_proxy_specs(size=(64, 64)) -> list[TextureSpec]:
    """Sand ripple / rocky structure x binomial / multinomial / constant foreground."""
    return [
        TextureSpec(struct, stat, size)
        for struct in ("sandripple", "rocky")
        for stat in ("binomial", "multinomial", "constant")
    ]


def grid_specs(size=(64, 64)) -> list[TextureSpec]:
    """Checkerboard / cross / stripe x the three foreground distributions."""
    return [
        TextureSpec(struct, stat, size)
        for struct in ("checkerboard", "cross", "stripe")
        for stat in ("binomial", "multinomial", "constant")
    ]


MULTISITE_CLASSES = ("craters", "flat", "rocky", "sandripple")
MULTISITE_TOTALS = (94, 12, 12)


def multisite_specs(size=(40, 40)) -> list[TextureSpec]:
    """Four seafloor-like classes sharing one foreground distribution.

    Only the structure (and hence foreground coverage) tells them apart.
    """
    return [TextureSpec(kind, "binomial", size) for kind in MULTISITE_CLASSES]


def build_multisite(size=(40, 40), scale: int = 1, master_seed: int = 0):
    totals = [t * int(scale) for t in MULTISITE_TOTALS]
    return build_dataset_with_totals(
        multisite_specs(size), totals, master_seed, names=list(MULTISITE_CLASSES)
    )
