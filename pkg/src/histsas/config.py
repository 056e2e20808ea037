"""Experiment configuration in ``section.key = value`` text form.

Sections: ``dataset``, ``model``, ``train`` and ``experiment``.  Example::

    dataset.preset = pisas
    dataset.per_class = 150
    model.kind = shallow_hist
    train.epochs = 100
    experiment.seeds = 0, 1, 2
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import kv
from .datasets import (
    MULTISITE_CLASSES,
    MULTISITE_TOTALS,
    build_dataset,
    build_dataset_with_totals,
)
from .errors import ConfigurationError
from .models import ModelConfig
from .textures import STATISTICAL_KINDS, STRUCTURAL_KINDS, TextureSpec
from .training import TrainConfig

PRESETS = ("pisas", "grid", "multisite", "custom")
_PRESET_FACTORS = {
    "pisas": (("sandripple", "rocky"), ("binomial", "multinomial", "constant")),
    "grid": (("checkerboard", "cross", "stripe"), ("binomial", "multinomial", "constant")),
    "multisite": (MULTISITE_CLASSES, ("binomial",)),
}


@dataclass
class DatasetConfig:
    preset: str = "pisas"
    structural: tuple[str, ...] = ()
    statistical: tuple[str, ...] = ()
    size: tuple[int, int] = (64, 64)
    per_class: int = 150
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    totals: Optional[tuple[int, int, int]] = None
    scale: int = 1
    seed: int = 0
    bits: int = 16
    manifest: Optional[str] = None
    # items like "sandripple.wavelength:8" or "multinomial.levels:0.3/0.6/0.9"
    structural_params: tuple[str, ...] = ()
    statistical_params: tuple[str, ...] = ()

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown dataset preset {self.preset!r}")
        for kind in self.structural:
            if kind not in STRUCTURAL_KINDS:
                raise ConfigurationError(f"unknown structural kind {kind!r}")
        for kind in self.statistical:
            if kind not in STATISTICAL_KINDS:
                raise ConfigurationError(f"unknown statistical kind {kind!r}")
        if self.bits not in (8, 16):
            raise ConfigurationError("dataset.bits must be 8 or 16")
        if self.scale < 1:
            raise ConfigurationError("dataset.scale must be >= 1")
        self.structural_overrides()
        self.statistical_overrides()

    def factors(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        if self.preset == "custom":
            if not self.structural or not self.statistical:
                raise ConfigurationError("custom preset needs dataset.structural and dataset.statistical")
            return self.structural, self.statistical
        structural, statistical = _PRESET_FACTORS[self.preset]
        return self.structural or structural, self.statistical or statistical

    def structural_overrides(self) -> dict[str, dict]:
        return _parse_overrides(self.structural_params, STRUCTURAL_KINDS, "structural_params")

    def statistical_overrides(self) -> dict[str, dict]:
        return _parse_overrides(self.statistical_params, STATISTICAL_KINDS, "statistical_params")

    def class_specs(self) -> list[TextureSpec]:
        structural, statistical = self.factors()
        s_over, t_over = self.structural_overrides(), self.statistical_overrides()
        if self.preset == "multisite":
            pairs = [(s, statistical[0]) for s in structural]
        else:
            pairs = [(s, t) for s in structural for t in statistical]
        return [
            TextureSpec(s, t, self.size, 0, dict(s_over.get(s, {})), dict(t_over.get(t, {})))
            for s, t in pairs
        ]

    def class_names(self) -> Optional[list[str]]:
        if self.preset == "multisite":
            return list(self.factors()[0])
        return None

    def build(self):
        """Render (train, val, test) splits."""
        specs = self.class_specs()
        names = self.class_names()
        totals = self.totals
        if totals is None and self.preset == "multisite":
            totals = MULTISITE_TOTALS
        if totals is not None:
            totals = tuple(t * self.scale for t in totals)
            return build_dataset_with_totals(specs, totals, self.seed, names)
        return build_dataset(specs, self.per_class * self.scale, self.split, self.seed, names)


def _coerce(text: str):
    if "/" in text:
        return tuple(float(v) for v in text.split("/"))
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _parse_overrides(items, kinds, what) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for item in items:
        try:
            target, value = item.split(":", 1)
            kind, key = target.strip().split(".", 1)
        except ValueError:
            raise ConfigurationError(f"dataset.{what}: expected 'kind.key:value', got {item!r}") from None
        if kind not in kinds:
            raise ConfigurationError(f"dataset.{what}: unknown kind {kind!r}")
        out.setdefault(kind, {})[key.strip()] = _coerce(value.strip())
    return out


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs/experiment"
    seeds: tuple[int, ...] = (0,)
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"experiment.dtype must be float64 or float32, got {self.dtype!r}")
        self.seeds = tuple(int(s) for s in self.seeds)

    def serialize(self) -> str:
        lines = kv.dataclass_lines(self.dataset, "dataset")
        lines += self.model.lines()
        lines += self.train.lines()
        lines += [
            f"experiment.out_dir = {self.out_dir}",
            f"experiment.seeds = {kv.format_value(self.seeds)}",
            f"experiment.dtype = {self.dtype}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        sections: dict[str, dict[str, str]] = {"dataset": {}, "model": {}, "train": {}, "experiment": {}}
        for key, value in kv.parse_lines(text.splitlines()):
            section, dot, name = key.partition(".")
            if not dot or section not in sections:
                raise ConfigurationError(f"unknown key '{key}'")
            if name in sections[section]:
                raise ConfigurationError(f"duplicate key '{key}'")
            sections[section][name] = value
        exp = sections["experiment"]
        unknown = set(exp) - {"out_dir", "seeds", "dtype"}
        if unknown:
            raise ConfigurationError(f"unknown key 'experiment.{sorted(unknown)[0]}'")
        seeds = kv.parse_value(exp["seeds"], tuple[int, ...]) if "seeds" in exp else (0,)
        return cls(
            dataset=kv.dataclass_from_items(DatasetConfig, sections["dataset"], "dataset"),
            model=ModelConfig.from_items(sections["model"]),
            train=TrainConfig.from_items(sections["train"]),
            out_dir=exp.get("out_dir", "runs/experiment"),
            seeds=seeds,
            dtype=exp.get("dtype", "float64"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.parse(path.read_text())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.serialize())
        return path


def shallow_experiment(kind: str = "shallow_hist", epochs: int = 100, **dataset) -> ExperimentConfig:
    """Sand-ripple/rocky proxy with the shallow protocol (epochs capped)."""
    from .training import shallow_protocol

    return ExperimentConfig(
        dataset=DatasetConfig(preset="pisas", **dataset),
        model=ModelConfig(kind=kind, num_classes=6, input_size=dataset.get("size", (64, 64))),
        train=shallow_protocol(kind, epochs=epochs),
        seeds=(0, 1, 2),
    )


def deep_experiment(kind: str = "deep_parallel", bins: int = 16, epochs: int = 100, scale: int = 5) -> ExperimentConfig:
    """Four-class seafloor proxy with the deep protocol."""
    from .training import deep_protocol

    return ExperimentConfig(
        dataset=DatasetConfig(preset="multisite", size=(40, 40), scale=scale),
        model=ModelConfig(kind=kind, num_classes=4, input_size=(32, 32), bins=bins),
        train=deep_protocol(epochs=epochs),
        seeds=(0, 1, 2),
    )
