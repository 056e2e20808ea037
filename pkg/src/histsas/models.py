"""Shallow and residual-backbone classifiers with optional histogram branches.

Shallow models follow "feature extractor -> global average pool -> linear".
Deep models share a small residual backbone shaped like ResNet18 (stem, four
stages of basic blocks, global average pooling) and differ only in the head:

* ``deep_baseline``: classifier on the pooled backbone vector (length F).
* ``deep_parallel``: pooled vector concatenated with flattened histogram
  features of the last stage (length 2F).
* ``deep_series``: classifier on the flattened histogram features only (F).

The histogram branch squeezes the last-stage map to D' channels with a 1x1
convolution, squashes it into (0, 1) with a sigmoid and bins it; D' is chosen
so that R*C*bins*D' == F.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import kv
from .autograd import ops
from .autograd.tensor import Tensor, get_default_dtype
from .errors import ConfigurationError, DimensionError, InputError
from .histogram import HistogramLayer
from .histogram import output_size as hist_output_size
from .nn import BatchNorm2d, Conv2d, Linear, Module

SHALLOW_KINDS = ("shallow_cnn", "shallow_hist")
DEEP_KINDS = ("deep_baseline", "deep_parallel", "deep_series")
CHECKPOINT_HEADER = "# histsas-checkpoint v1"


@dataclass
class ModelConfig:
    kind: str = "shallow_hist"
    num_classes: int = 6
    in_channels: int = 1
    input_size: tuple[int, int] = (64, 64)
    bins: int = 3
    filters: int = 3
    kernel: tuple[int, int] = (7, 7)
    stride: tuple[int, int] = (3, 3)
    backbone_channels: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: int = 2
    stem_kernel: int = 3
    stem_stride: int = 1
    stem_pool: bool = True
    hist_kernel: tuple[int, int] = (1, 1)
    hist_stride: tuple[int, int] = (1, 1)
    hist_impl: str = "composed"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHALLOW_KINDS + DEEP_KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        for name in ("input_size", "kernel", "stride", "hist_kernel", "hist_stride"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        self.backbone_channels = tuple(int(v) for v in self.backbone_channels)
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.kind in DEEP_KINDS and len(self.backbone_channels) < 1:
            raise ConfigurationError("backbone_channels must list at least one stage width")

    def lines(self) -> list[str]:
        return kv.dataclass_lines(self, "model")

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "ModelConfig":
        return kv.dataclass_from_items(cls, items, "model")


class Model(Module):
    config: ModelConfig

    def forward_features(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """(logits, penultimate feature vector)."""
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_features(x)[0]

    def _check_input(self, x: Tensor) -> None:
        c = self.config
        if x.ndim != 4 or x.shape[1] != c.in_channels or tuple(x.shape[2:]) != c.input_size:
            raise DimensionError(
                f"{c.kind} expects (batch, {c.in_channels}, {c.input_size[0]}, "
                f"{c.input_size[1]}) input, got {x.shape}"
            )

    @property
    def feature_length(self) -> int:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# shallow models
# ---------------------------------------------------------------------------

class ShallowCNN(Model):
    def __init__(self, config: ModelConfig):
        self.config = config
        _window_output(config.input_size, config.kernel, config.stride)
        self.conv = Conv2d(config.in_channels, config.filters, config.kernel, config.stride)
        self.fc = Linear(config.filters, config.num_classes)

    @property
    def feature_length(self) -> int:
        return self.config.filters

    def forward_features(self, x):
        self._check_input(x)
        feats = ops.global_average_pool(ops.relu(self.conv(x)))
        return self.fc(feats), feats


class ShallowHist(Model):
    def __init__(self, config: ModelConfig):
        self.config = config
        _window_output(config.input_size, config.kernel, config.stride)
        self.hist = HistogramLayer(
            config.in_channels, config.bins, config.kernel, config.stride, (0.0, 1.0), config.hist_impl
        )
        self.fc = Linear(self.feature_length, config.num_classes)

    @property
    def feature_length(self) -> int:
        return self.config.bins * self.config.in_channels

    def forward_features(self, x):
        self._check_input(x)
        feats = ops.global_average_pool(self.hist(x))
        return self.fc(feats), feats


def _window_output(size, kernel, stride) -> tuple[int, int]:
    (h, w), (kh, kw), (sh, sw) = size, kernel, stride
    if kh > h or kw > w:
        raise ConfigurationError(f"window {kh}x{kw} larger than input {h}x{w}")
    return (h - kh) // sh + 1, (w - kw) // sw + 1


def build_shallow(kind: str, config: ModelConfig) -> Model:
    if kind not in SHALLOW_KINDS:
        raise ConfigurationError(f"{kind!r} is not a shallow model kind")
    config = dataclasses.replace(config, kind=kind)
    model = ShallowCNN(config) if kind == "shallow_cnn" else ShallowHist(config)
    init_parameters(model, config.seed)
    return model


# ---------------------------------------------------------------------------
# residual backbone
# ---------------------------------------------------------------------------

def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


class BasicBlock(Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        self.conv1 = Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.down_conv = Conv2d(c_in, c_out, 1, stride, 0, bias=False)
            self.down_bn = BatchNorm2d(c_out)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return ops.relu(ops.add(out, skip))


class Backbone(Module):
    def __init__(self, config: ModelConfig):
        c = config
        widths = c.backbone_channels
        self.stem_conv = Conv2d(c.in_channels, widths[0], c.stem_kernel, c.stem_stride, c.stem_kernel // 2, bias=False)
        self.stem_bn = BatchNorm2d(widths[0])
        self.stem_pool = c.stem_pool
        blocks = []
        c_in = widths[0]
        for i, width in enumerate(widths):
            for j in range(c.blocks_per_stage):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(c_in, width, stride))
                c_in = width
        self.blocks = blocks
        self.out_channels = c_in
        self.out_size = self.output_size(c)

    @staticmethod
    def output_size(c: ModelConfig) -> tuple[int, int]:
        h, w = c.input_size
        k, s = c.stem_kernel, c.stem_stride
        h, w = _conv_out(h, k, s, k // 2), _conv_out(w, k, s, k // 2)
        if c.stem_pool:
            h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
        for _ in c.backbone_channels[1:]:
            h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
        if h < 1 or w < 1:
            raise ConfigurationError(f"input {c.input_size} too small for the backbone")
        return h, w

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.stem_bn(self.stem_conv(x)))
        if self.stem_pool:
            out = ops.pool2d(out, "max", 3, 2, 1)
        for block in self.blocks:
            out = block(out)
        return out


def histogram_branch_channels(config: ModelConfig) -> tuple[int, tuple[int, int]]:
    """(D', (R, C)) such that R*C*bins*D' equals the backbone width F."""
    f = config.backbone_channels[-1]
    r, c = hist_output_size(Backbone.output_size(config), config.hist_kernel, config.hist_stride)
    denom = r * c * config.bins
    if f % denom:
        raise ConfigurationError(
            f"histogram size contract unsatisfiable: need R*C*bins*D' = F with "
            f"R*C = {r}*{c}, bins = {config.bins}, F = {f}; {f} is not divisible by {denom}"
        )
    return f // denom, (r, c)


class DeepModel(Model):
    def __init__(self, config: ModelConfig):
        self.config = config
        self.backbone = Backbone(config)
        f = self.backbone.out_channels
        if config.kind == "deep_baseline":
            self.reduce = None
            self.hist = None
        else:
            d_red, _ = histogram_branch_channels(config)
            self.reduce = Conv2d(f, d_red, 1, 1, 0, bias=True)
            self.hist = HistogramLayer(
                d_red, config.bins, config.hist_kernel, config.hist_stride, (0.0, 1.0), config.hist_impl
            )
        self.fc = Linear(self.feature_length, config.num_classes)

    @property
    def feature_length(self) -> int:
        f = self.config.backbone_channels[-1]
        return 2 * f if self.config.kind == "deep_parallel" else f

    def forward_features(self, x):
        self._check_input(x)
        fmap = self.backbone(x)
        kind = self.config.kind
        if kind == "deep_baseline":
            feats = ops.global_average_pool(fmap)
        else:
            hist = ops.flatten(self.hist(ops.sigmoid(self.reduce(fmap))))
            if kind == "deep_series":
                feats = hist
            else:
                feats = ops.concat([ops.global_average_pool(fmap), hist], axis=1)
        return self.fc(feats), feats


def build_deep(kind: str, config: ModelConfig) -> Model:
    if kind not in DEEP_KINDS:
        raise ConfigurationError(f"{kind!r} is not a deep model kind")
    config = dataclasses.replace(config, kind=kind)
    model = DeepModel(config)
    init_parameters(model, config.seed)
    return model


def build_model(config: ModelConfig) -> Model:
    if config.kind in SHALLOW_KINDS:
        return build_shallow(config.kind, config)
    return build_deep(config.kind, config)


def init_parameters(model: Module, seed: int) -> None:
    """Glorot-uniform conv/linear weights, zero biases, evenly spaced bins.

    Modules are visited in a fixed order from one generator, so ``seed``
    alone determines every initial value.
    """
    rng = np.random.default_rng(seed)
    for m in model.modules():
        reset = getattr(m, "reset_parameters", None)
        if reset is not None:
            reset(rng)


def forward(model: Model, batch: Union[Tensor, np.ndarray]) -> Tensor:
    if not isinstance(batch, Tensor):
        batch = np.asarray(batch)
        if batch.ndim == 3:
            batch = batch[:, None]
        batch = Tensor(batch)
    return model(batch)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _safe_name(name: str) -> str:
    return name.replace("/", "_")


def save_checkpoint(model: Model, path, metadata: Optional[dict] = None) -> Path:
    """Directory with ``manifest.txt`` plus one raw little-endian float64 file per array."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [CHECKPOINT_HEADER, *model.config.lines()]
    for key, value in (metadata or {}).items():
        lines.append(f"meta.{key} = {kv.format_value(value)}")
    for name, arr in model.state_dict().items():
        fname = _safe_name(name) + ".f64"
        np.asarray(arr, dtype="<f8").tofile(path / fname)
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"array.{name} = {shape} {fname}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> tuple[Model, dict[str, str]]:
    """Rebuild the model described by a checkpoint; returns (model, raw metadata)."""
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest}")
    text = manifest.read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_HEADER:
        raise InputError(f"{manifest}: unsupported checkpoint header")
    model_items, meta, arrays = {}, {}, {}
    for key, value in kv.parse_lines(text[1:]):
        section, _, rest = key.partition(".")
        if section == "model":
            model_items[rest] = value
        elif section == "meta":
            meta[rest] = value
        elif section == "array":
            shape_txt, fname = value.split()
            shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
            data = np.fromfile(path / fname, dtype="<f8")
            arrays[rest] = data.reshape(shape).astype(get_default_dtype())
        else:
            raise InputError(f"{manifest}: unknown section in key {key!r}")
    model = build_model(ModelConfig.from_items(model_items))
    model.load_state_dict(arrays)
    return model, meta
