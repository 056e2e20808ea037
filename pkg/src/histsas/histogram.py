"""Local RBF histogram layer.

For an input window of size S x T, bin ``b`` of channel ``d`` responds with

    Y[r, c, b, d] = 1/(S*T) * sum_{s,t} exp(-width[b, d]**2 * (x[r+s, c+t, d] - center[b, d])**2)

so every output lies in (0, 1] and counts, softly, the fraction of the window
that falls near the bin center.  ``width`` is a coefficient (inverse value
units): larger means narrower bins.

Output channels are laid out channel-major, bins fastest: channel ``d*B + b``
holds bin ``b`` of input channel ``d``.

Two implementations are provided.  :func:`histogram_forward` evaluates the
formula directly as a fused op with a hand-written backward rule.
:func:`histogram_forward_composed` builds the same thing from stock layers
(a grouped 1x1 convolution whose bias subtracts the centers, a square, a
depthwise 1x1 scaling by ``-width**2``, an exp and an average pool).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import ops
from .autograd.tensor import Tensor, get_default_dtype
from .errors import ConfigurationError, DimensionError
from .nn import Module


@dataclass
class HistogramLayerParams:
    centers: Tensor  # (bins, channels)
    width_coeffs: Tensor  # (bins, channels)
    kernel: tuple[int, int]
    stride: tuple[int, int]

    def __post_init__(self):
        if self.centers.shape != self.width_coeffs.shape or self.centers.ndim != 2:
            raise DimensionError(
                f"centers {self.centers.shape} and width_coeffs {self.width_coeffs.shape} "
                "must share a (bins, channels) shape"
            )
        self.kernel = ops._pair(self.kernel, "kernel")
        self.stride = ops._pair(self.stride, "stride")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigurationError(f"kernel {self.kernel} and stride {self.stride} must be >= 1")

    @property
    def bins(self) -> int:
        return self.centers.shape[0]

    @property
    def channels(self) -> int:
        return self.centers.shape[1]

    def diagnostics(self) -> list[str]:
        """Human-readable warnings about degenerate bins."""
        notes = []
        w = self.width_coeffs.data
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(self.centers.data)):
            notes.append("non-finite histogram parameters")
        for b, d in zip(*np.nonzero(w == 0)):
            notes.append(f"bin {b} of channel {d} has zero width coefficient (flat response)")
        return notes


def init_bins(
    bins: int,
    value_range: Sequence[float] = (0.0, 1.0),
    channels: int = 1,
    kernel=(1, 1),
    stride=None,
) -> HistogramLayerParams:
    """Equally spaced centers over ``value_range``; width coefficient 1/spacing.

    With spacing ``delta = (hi - lo) / bins`` the centers sit at
    ``lo + (k + 0.5) * delta``.  A neighbour one spacing away then responds
    with exp(-1).
    """
    if int(bins) < 1:
        raise ConfigurationError(f"bins must be >= 1, got {bins}")
    lo, hi = (float(v) for v in value_range)
    if not lo < hi:
        raise ConfigurationError(f"degenerate value range ({lo}, {hi})")
    if int(channels) < 1:
        raise ConfigurationError(f"channels must be >= 1, got {channels}")
    delta = (hi - lo) / bins
    centers = lo + (np.arange(bins) + 0.5) * delta
    dtype = get_default_dtype()
    centers = np.repeat(centers[:, None], channels, axis=1).astype(dtype)
    widths = np.full((bins, channels), 1.0 / delta, dtype=dtype)
    return HistogramLayerParams(
        centers=Tensor(centers, requires_grad=True, name="centers"),
        width_coeffs=Tensor(widths, requires_grad=True, name="width_coeffs"),
        kernel=kernel,
        stride=stride if stride is not None else kernel,
    )


def output_size(in_size: Sequence[int], kernel, stride) -> tuple[int, int]:
    (m, n), (s, t), (sr, sc) = in_size, ops._pair(kernel, "kernel"), ops._pair(stride, "stride")
    if s > m or t > n:
        raise ConfigurationError(f"histogram window {s}x{t} exceeds input {m}x{n}")
    return (m - s) // sr + 1, (n - t) // sc + 1


def _check(x: Tensor, params: HistogramLayerParams) -> tuple[int, int]:
    if x.ndim != 4:
        raise DimensionError(f"histogram layer expects (batch, channels, M, N), got {x.shape}")
    if x.shape[1] != params.channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, histogram parameters expect {params.channels}"
        )
    return output_size(x.shape[2:], params.kernel, params.stride)


def histogram_forward(x: Tensor, params: HistogramLayerParams) -> Tensor:
    """Direct evaluation of the local RBF histogram as one fused op."""
    r_out, c_out = _check(x, params)
    bsz, d, _, _ = x.shape
    nb = params.bins
    s, t = params.kernel
    sr, sc = params.stride
    mu = params.centers.data.T[None, :, :, None, None]  # 1, D, B, 1, 1
    gamma = params.width_coeffs.data.T[None, :, :, None, None]
    # only the rows/cols covered by some window take part
    m_used, n_used = (r_out - 1) * sr + s, (c_out - 1) * sc + t
    xu = x.data[:, :, :m_used, :n_used]
    diff = xu[:, :, None] - mu  # Bt, D, B, M', N'
    resp = np.exp(-(gamma**2) * diff**2)
    resp5 = resp.reshape(bsz, d * nb, m_used, n_used)
    win = ops._windows(resp5, s, t, sr, sc, r_out, c_out)
    out = win.mean(axis=(4, 5))

    def backward(g):
        g = ops._fault("histogram", g)
        scale = 1.0 / (s * t)
        gcols = np.broadcast_to((g * scale)[..., None, None], g.shape + (s, t))
        gresp = ops._scatter_windows(gcols, resp5.shape, sr, sc).reshape(resp.shape)
        common = gresp * resp  # d/d(-gamma^2 diff^2)
        gdiff = common * (-2.0) * gamma**2 * diff
        gx = np.zeros_like(x.data)
        gx[:, :, :m_used, :n_used] = gdiff.sum(axis=2)
        gmu = -gdiff.sum(axis=(0, 3, 4)).T
        ggamma = (common * (-2.0) * gamma * diff**2).sum(axis=(0, 3, 4)).T
        return gx, gmu, ggamma

    return Tensor._from_op(
        out, (x, params.centers, params.width_coeffs), backward, "histogram"
    )


def histogram_forward_composed(x: Tensor, params: HistogramLayerParams) -> Tensor:
    """Same output as :func:`histogram_forward`, assembled from stock layers."""
    _check(x, params)
    d = x.shape[1]
    nb = params.bins
    dtype = x.data.dtype
    # channel d -> maps d*B .. d*B+B-1, each shifted by -center[b, d]
    replicate = Tensor(np.ones((d * nb, 1, 1, 1), dtype=dtype))
    neg_centers = ops.reshape(ops.negate(_channel_major(params.centers)), (d * nb,))
    shifted = ops.conv2d(x, replicate, neg_centers, groups=d)
    sq = ops.square(shifted)
    scale = ops.reshape(ops.negate(ops.square(_channel_major(params.width_coeffs))), (d * nb, 1, 1, 1))
    scaled = ops.conv2d(sq, scale, None, groups=d * nb)
    resp = ops.exp(scaled)
    return ops.pool2d(resp, "average", params.kernel, params.stride)


def _channel_major(p: Tensor) -> Tensor:
    # (B, D) -> (D, B) flattened order d*B + b, as a differentiable transpose
    nb, d = p.shape
    if d == 1:
        return ops.reshape(p, (nb, 1))
    idx = np.arange(nb * d).reshape(nb, d).T.reshape(-1)
    return _gather(p, idx)


def _gather(p: Tensor, flat_index: np.ndarray) -> Tensor:
    src_shape = p.shape

    def backward(g):
        out = np.zeros(int(np.prod(src_shape)), dtype=g.dtype)
        np.add.at(out, flat_index, g.reshape(-1))
        return (out.reshape(src_shape),)

    return Tensor._from_op(p.data.reshape(-1)[flat_index], (p,), backward, "gather")


class HistogramLayer(Module):
    """Trainable local histogram layer.

    ``impl`` selects ``"composed"`` (default, built from stock layers) or the
    fused ``"direct"`` op; both give the same values and gradients.
    """

    def __init__(
        self,
        channels: int,
        bins: int,
        kernel=(7, 7),
        stride=None,
        value_range: Sequence[float] = (0.0, 1.0),
        impl: str = "composed",
    ):
        if impl not in ("composed", "direct"):
            raise ConfigurationError(f"unknown histogram implementation {impl!r}")
        p = init_bins(bins, value_range, channels, kernel, stride)
        self.centers = p.centers
        self.width_coeffs = p.width_coeffs
        self.kernel = p.kernel
        self.stride = p.stride
        self.value_range = tuple(float(v) for v in value_range)
        self.impl = impl

    @property
    def params(self) -> HistogramLayerParams:
        return HistogramLayerParams(self.centers, self.width_coeffs, self.kernel, self.stride)

    @property
    def bins(self) -> int:
        return self.centers.shape[0]

    def reset_parameters(self, rng=None) -> None:
        fresh = init_bins(self.bins, self.value_range, self.centers.shape[1])
        self.centers.data[...] = fresh.centers.data
        self.width_coeffs.data[...] = fresh.width_coeffs.data

    def forward(self, x: Tensor) -> Tensor:
        if self.impl == "direct":
            return histogram_forward(x, self.params)
        return histogram_forward_composed(x, self.params)
