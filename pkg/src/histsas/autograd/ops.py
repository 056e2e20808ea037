"""Differentiable primitives.

Image tensors use (batch, channel, height, width) layout.  Windowed ops work on
strided views from :func:`numpy.lib.stride_tricks.sliding_window_view` and
scatter their gradients back with fixed-order loops over kernel offsets, so
results are reproducible bit for bit.
"""

from __future__ import annotations

import contextlib
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError, InputError
from .tensor import Tensor, as_tensor, get_default_dtype

Pair = Union[int, Sequence[int]]

# op name -> multiplier applied to that op's backward output; used only by the
# verification harness to prove gradient checking catches a broken rule.
_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def inject_fault(op: str, factor: float = 1.5):
    _FAULTS[op] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


def _fault(op: str, g: np.ndarray) -> np.ndarray:
    factor = _FAULTS.get(op)
    return g if factor is None else g * factor


def _pair(value: Pair, what: str) -> tuple[int, int]:
    if isinstance(value, (int, np.integer)):
        pair = (int(value), int(value))
    else:
        pair = tuple(int(v) for v in value)
        if len(pair) != 2:
            raise ConfigurationError(f"{what} must be an int or a pair, got {value!r}")
    return pair


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary_operands(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar broadcasting is allowed, so either shapes match or target is size 1
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def backward(g):
        g = _fault("add", g)
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def backward(g):
        g = _fault("sub", g)
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def backward(g):
        g = _fault("mul", g)
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (_fault("scalar_mul", g * c),)

    return Tensor._from_op(a.data * c, (a,), backward, "scalar_mul")


def negate(a: Tensor) -> Tensor:
    def backward(g):
        return (_fault("negate", -g),)

    return Tensor._from_op(-a.data, (a,), backward, "negate")


def square(a: Tensor) -> Tensor:
    def backward(g):
        return (_fault("square", 2.0 * a.data * g),)

    return Tensor._from_op(a.data * a.data, (a,), backward, "square")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (_fault("exp", out_data * g),)

    return Tensor._from_op(out_data, (a,), backward, "exp")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # derivative at exactly 0 is taken as 0

    def backward(g):
        return (_fault("relu", g * mask),)

    return Tensor._from_op(a.data * mask, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (_fault("sigmoid", g * out_data * (1.0 - out_data)),)

    return Tensor._from_op(out_data, (a,), backward, "sigmoid")


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name, e.g. ``elementwise("relu", x)``."""
    table = {
        "relu": relu,
        "exp": exp,
        "square": square,
        "negate": negate,
        "sigmoid": sigmoid,
        "add": add,
        "sub": sub,
        "mul": mul,
        "scalar_mul": scalar_mul,
    }
    try:
        fn = table[op]
    except KeyError:
        raise ConfigurationError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        return (_fault("sum", np.broadcast_to(g, a.shape).copy()),)

    return Tensor._from_op(np.asarray(a.data.sum()), (a,), backward, "sum")


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        return (_fault("mean", np.full(a.shape, g / n, dtype=a.data.dtype)),)

    return Tensor._from_op(np.asarray(a.data.mean()), (a,), backward, "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out_data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(out_data, (a,), backward, "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse everything but the leading batch axis."""
    return reshape(a, (a.shape[0], -1))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(out, tensors, backward, "concat")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad(x: np.ndarray, ph: int, pw: int, value: float = 0.0) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    # (B, C, Ho, Wo, kh, kw) strided view
    view = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return view[:, :, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _scatter_windows(
    gcols: np.ndarray, padded_shape: tuple[int, ...], sh: int, sw: int
) -> np.ndarray:
    """Adjoint of :func:`_windows`: sum (B,C,Ho,Wo,kh,kw) back onto the input."""
    _, _, ho, wo, kh, kw = gcols.shape
    gx = np.zeros(padded_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += gcols[
                :, :, :, :, i, j
            ]
    return gx


def _unpad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return x[:, :, ph : x.shape[2] - ph, pw : x.shape[3] - pw]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: Pair = 1,
    padding: Pair = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation (no kernel flip) with optional channel groups.

    ``weight`` has shape (F, C/groups, Kh, Kw); output is (B, F, H', W') with
    H' = floor((H + 2*pad_h - Kh) / stride_h) + 1.
    """
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    bsz, c, h, w = x.shape
    f, cg, kh, kw = weight.shape
    if groups < 1 or c % groups or f % groups:
        raise DimensionError(f"conv2d: groups={groups} does not divide channels {c} / filters {f}")
    if cg != c // groups:
        raise DimensionError(
            f"conv2d: weight expects {cg} channels per group, input gives {c // groups}"
        )
    if bias is not None and bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({f},)")
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ConfigurationError(f"conv2d: invalid stride {stride!r} or padding {padding!r}")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}"
        )
    ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ConfigurationError("conv2d: configuration yields an empty output")

    xp = _pad(x.data, ph, pw)
    fg = f // groups
    k = cg * kh * kw
    win = _windows(xp, kh, kw, sh, sw, ho, wo)  # B,C,Ho,Wo,kh,kw
    # (G, B*Ho*Wo, Cg*kh*kw) column matrix, one per group
    cols = (
        win.reshape(bsz, groups, cg, ho, wo, kh, kw)
        .transpose(1, 0, 3, 4, 2, 5, 6)
        .reshape(groups, bsz * ho * wo, k)
    )
    wmat = weight.data.reshape(groups, fg, k).transpose(0, 2, 1)  # G, K, Fg
    out = np.matmul(cols, wmat)  # G, BHW, Fg
    out = out.reshape(groups, bsz, ho, wo, fg).transpose(1, 0, 4, 2, 3).reshape(bsz, f, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    def backward(g):
        g = _fault("conv2d", g)
        gmat = g.reshape(bsz, groups, fg, ho, wo).transpose(1, 0, 3, 4, 2).reshape(
            groups, bsz * ho * wo, fg
        )
        gw = np.matmul(cols.transpose(0, 2, 1), gmat)  # G, K, Fg
        gw = gw.transpose(0, 2, 1).reshape(f, cg, kh, kw)
        gcols = np.matmul(gmat, wmat.transpose(0, 2, 1))  # G, BHW, K
        gcols = (
            gcols.reshape(groups, bsz, ho, wo, cg, kh, kw)
            .transpose(1, 0, 4, 2, 3, 5, 6)
            .reshape(bsz, c, ho, wo, kh, kw)
        )
        gx = _unpad(_scatter_windows(gcols, xp.shape, sh, sw), ph, pw)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def pool2d(
    x: Tensor,
    kind: str,
    kernel: Pair,
    stride: Optional[Pair] = None,
    padding: Pair = 0,
) -> Tensor:
    """Window max or mean.

    Max backward routes each window's gradient to its first maximal element in
    row-major order.  Average pooling counts padded zeros in the divisor.
    """
    if kind not in ("max", "average"):
        raise ConfigurationError(f"pool2d: unknown kind {kind!r}")
    kh, kw = _pair(kernel, "kernel")
    sh, sw = _pair(stride if stride is not None else kernel, "stride")
    ph, pw = _pair(padding, "padding")
    if x.ndim != 4:
        raise DimensionError(f"pool2d expects a 4-d input, got {x.shape}")
    bsz, c, h, w = x.shape
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ConfigurationError(
            f"pool2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {ph},{pw}"
        )
    ho, wo = _out_size(h, kh, sh, ph), _out_size(w, kw, sw, pw)
    fill = -np.inf if kind == "max" else 0.0
    xp = _pad(x.data, ph, pw, fill)
    win = _windows(xp, kh, kw, sh, sw, ho, wo)

    if kind == "average":
        out = win.mean(axis=(4, 5))
        scale = 1.0 / (kh * kw)

        def backward(g):
            g = _fault("pool2d", g)
            gcols = np.broadcast_to((g * scale)[..., None, None], (bsz, c, ho, wo, kh, kw))
            return (_unpad(_scatter_windows(gcols, xp.shape, sh, sw), ph, pw),)

        return Tensor._from_op(out, (x,), backward, "avg_pool2d")

    flat = win.reshape(bsz, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=4)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]

    def backward(g):
        g = _fault("pool2d", g)
        onehot = (arg[..., None] == np.arange(kh * kw)) * g[..., None]
        gcols = onehot.reshape(bsz, c, ho, wo, kh, kw)
        return (_unpad(_scatter_windows(gcols, xp.shape, sh, sw), ph, pw),)

    return Tensor._from_op(out, (x,), backward, "max_pool2d")


def global_average_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_average_pool expects a 4-d input, got {x.shape}")
    bsz, c, h, w = x.shape
    if h < 1 or w < 1:
        raise DimensionError("global_average_pool: empty spatial extent")
    scale = 1.0 / (h * w)

    def backward(g):
        g = _fault("global_average_pool", g)
        return (np.broadcast_to((g * scale)[:, :, None, None], x.shape).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), backward, "global_average_pool")


# ---------------------------------------------------------------------------
# dense layers and normalization
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for x (B, N), weight (O, N), bias (O,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g = _fault("linear", g)
        gb = g.sum(axis=0) if bias is not None else None
        return g @ weight.data, g.T @ x.data, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "linear")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of a (B, C, H, W) tensor.

    In training mode the batch statistics are used and the running buffers are
    updated in place; otherwise the running buffers normalize the input.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    axes = (0, 2, 3)
    if training:
        n = x.size // x.shape[1]
        if n < 2:
            raise InputError("batch_norm needs more than one value per channel in training")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        g = _fault("batch_norm", g)
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            m = x.size // x.shape[1]
            gx = (
                inv[None, :, None, None]
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=axes)[None, :, None, None]
                    - xhat * (gxhat * xhat).sum(axis=axes)[None, :, None, None]
                )
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects (B, K) logits, got {logits.shape}")
    bsz, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != bsz:
        raise DimensionError(f"got {labels.shape[0]} labels for a batch of {bsz}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsumexp[:, None]
    rows = np.arange(bsz)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (_fault("softmax_cross_entropy", grad * (g / bsz)),)

    return Tensor._from_op(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward, "cross_entropy")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax over the last axis (no graph)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)
