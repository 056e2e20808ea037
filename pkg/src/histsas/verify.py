"""Self-check suite: gradient checks, loop-oracle comparisons, histogram equivalence."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autograd import ops
from .autograd.gradcheck import grad_check
from .autograd.tensor import Tensor, default_dtype
from .histogram import (
    HistogramLayerParams,
    histogram_forward,
    histogram_forward_composed,
    init_bins,
)
from .models import ModelConfig, build_model
from .oracles import naive_conv2d, naive_histogram, naive_linear, naive_pool2d

PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4
ORACLE_TOL = 1e-12
EPS = 1e-6


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _linear_probe(fn: Callable[..., Tensor], out_shape, rng) -> Callable[..., Tensor]:
    """Wrap ``fn`` as sum(fn(...) * fixed random weights) for gradient checks."""
    w = _probe(rng, out_shape)
    return lambda *xs: ops.sum(ops.mul(fn(*xs), w))


def primitive_cases(rng: np.random.Generator):
    """(name, function, inputs) triples covering every differentiable op."""
    def t(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, size=shape))

    img = (2, 3, 6, 6)
    cases = []
    for name, fn in [
        ("exp", ops.exp),
        ("square", ops.square),
        ("negate", ops.negate),
        ("relu", ops.relu),
        ("sigmoid", ops.sigmoid),
        ("scalar_mul", lambda a: ops.scalar_mul(a, 2.5)),
        ("reshape", lambda a: ops.reshape(a, (4, 3))),
    ]:
        cases.append((name, _linear_probe(fn, (3, 4) if name != "reshape" else (4, 3), rng), [t(3, 4)]))
    for name, fn in [("add", ops.add), ("sub", ops.sub), ("mul", ops.mul)]:
        cases.append((name, _linear_probe(fn, (3, 4), rng), [t(3, 4), t(3, 4)]))
    cases.append(("square_sub_chain", _linear_probe(lambda a, b: ops.square(ops.sub(a, b)), (3, 4), rng), [t(3, 4), t(3, 4)]))
    cases.append(("sum", lambda a: ops.sum(ops.square(a)), [t(3, 4)]))
    cases.append(("mean", lambda a: ops.mean(ops.square(a)), [t(3, 4)]))
    cases.append(("concat", _linear_probe(lambda a, b: ops.concat([a, b], axis=1), (2, 7), rng), [t(2, 3), t(2, 4)]))
    cases.append((
        "conv2d",
        _linear_probe(lambda x, w, b: ops.conv2d(x, w, b, 1, 1), (2, 4, 6, 6), rng),
        [t(*img), t(4, 3, 3, 3), t(4)],
    ))
    cases.append((
        "conv2d_strided_grouped",
        _linear_probe(lambda x, w: ops.conv2d(x, w, None, 2, 0, groups=3), (2, 6, 2, 2), rng),
        [t(*img), t(6, 1, 3, 3)],
    ))
    cases.append(("pool2d_max", _linear_probe(lambda x: ops.pool2d(x, "max", 2, 2), (2, 3, 3, 3), rng), [t(*img)]))
    cases.append(("pool2d_average", _linear_probe(lambda x: ops.pool2d(x, "average", 3, 2), (2, 3, 2, 2), rng), [t(*img)]))
    cases.append(("global_average_pool", _linear_probe(ops.global_average_pool, (2, 3), rng), [t(*img)]))
    cases.append(("linear", _linear_probe(ops.linear, (4, 3), rng), [t(4, 8), t(3, 8), t(3)]))
    labels = rng.integers(0, 6, size=5)
    cases.append(("softmax_cross_entropy", lambda z: ops.softmax_cross_entropy(z, labels), [t(5, 6, lo=-2, hi=2)]))
    for training in (True, False):
        rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)

        def bn(x, g, b, training=training, rm=rm, rv=rv):
            return ops.batch_norm(x, g, b, rm.copy(), rv.copy(), training)

        cases.append((f"batch_norm_{'train' if training else 'eval'}", _linear_probe(bn, img, rng), [t(*img), t(3), t(3)]))

    for impl, fn in (("direct", histogram_forward), ("composed", histogram_forward_composed)):
        def hist(x, mu, gamma, fn=fn):
            return fn(x, HistogramLayerParams(mu, gamma, (3, 3), (2, 2)))

        cases.append((
            f"histogram_{impl}",
            _linear_probe(hist, (2, 6, 3, 3), rng),
            [Tensor(rng.uniform(0, 1, (2, 2, 7, 7))), Tensor(rng.uniform(0, 1, (3, 2))), Tensor(rng.uniform(1, 4, (3, 2)))],
        ))
    return cases


def check_primitives(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        CheckResult(f"grad:{name}", grad_check(fn, inputs, EPS), PRIMITIVE_TOL)
        for name, fn, inputs in primitive_cases(rng)
    ]


def tiny_model_config(kind: str) -> ModelConfig:
    if kind == "shallow_hist":
        return ModelConfig(kind=kind, num_classes=3, input_size=(12, 12), bins=3, kernel=(4, 4), stride=(2, 2))
    return ModelConfig(
        kind=kind, num_classes=3, input_size=(8, 8), bins=2,
        backbone_channels=(2, 2, 4, 4), blocks_per_stage=1, stem_pool=False,
    )


def model_grad_check(kind: str, seed: int = 0, eps: float = EPS) -> float:
    """Max relative error over every parameter coordinate of a tiny model."""
    cfg = tiny_model_config(kind)
    cfg.seed = seed
    model = build_model(cfg)
    rng = np.random.default_rng(seed + 1)
    h, w = cfg.input_size
    x = Tensor(rng.uniform(0, 1, (4, 1, h, w)))
    labels = np.arange(4) % cfg.num_classes
    names, params = zip(*model.named_parameters())

    def loss(*ps):
        return ops.softmax_cross_entropy(model(x), labels)

    # grad_check perturbs the parameter arrays in place; model reads them directly
    return grad_check(loss, list(params), eps)


def check_models(seed: int = 0) -> list[CheckResult]:
    return [
        CheckResult(f"grad:model:{kind}", model_grad_check(kind, seed), MODEL_TOL)
        for kind in ("shallow_hist", "deep_parallel")
    ]


def check_oracles(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), 1, 1).data
    out.append(CheckResult("oracle:conv2d", float(np.abs(got - naive_conv2d(x, w, b, (1, 1), (1, 1))).max()), ORACLE_TOL))
    x = rng.normal(size=(1, 2, 6, 6))
    for kind in ("max", "average"):
        got = ops.pool2d(Tensor(x), kind, 2, 2).data
        out.append(CheckResult(f"oracle:pool2d_{kind}", float(np.abs(got - naive_pool2d(x, kind, (2, 2), (2, 2))).max()), ORACLE_TOL))
    x, w, b = rng.normal(size=(4, 8)), rng.normal(size=(3, 8)), rng.normal(size=3)
    got = ops.linear(Tensor(x), Tensor(w), Tensor(b)).data
    out.append(CheckResult("oracle:linear", float(np.abs(got - naive_linear(x, w, b)).max()), ORACLE_TOL))
    x = rng.uniform(0, 1, (1, 2, 9, 9))
    p = init_bins(3, (0, 1), 2, (3, 3), (3, 3))
    p.centers.data[...] = rng.uniform(0, 1, p.centers.shape)
    p.width_coeffs.data[...] = rng.uniform(0.5, 5, p.width_coeffs.shape)
    ref = naive_histogram(x, p.centers.data, p.width_coeffs.data, (3, 3), (3, 3))
    out.append(CheckResult("oracle:histogram_direct", float(np.abs(histogram_forward(Tensor(x), p).data - ref).max()), ORACLE_TOL))
    out.append(CheckResult("oracle:histogram_composed", float(np.abs(histogram_forward_composed(Tensor(x), p).data - ref).max()), ORACLE_TOL))
    return out


def check_histogram_equivalence(trials: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(1, 4))
        bins = int(rng.choice([1, 3, 8]))
        m, n = (int(v) for v in rng.integers(4, 17, size=2))
        k = int(rng.integers(1, min(m, n) + 1))
        s = int(rng.integers(1, k + 1))
        x = Tensor(rng.uniform(-0.5, 1.5, (2, d, m, n)))
        p = init_bins(bins, (0, 1), d, (k, k), (s, s))
        p.centers.data[...] += rng.normal(0, 0.2, p.centers.shape)
        p.width_coeffs.data[...] *= rng.uniform(0.5, 2.0, p.width_coeffs.shape)
        diff = np.abs(histogram_forward(x, p).data - histogram_forward_composed(x, p).data).max()
        worst = max(worst, float(diff))
    return CheckResult("histogram:composed_vs_direct", worst, ORACLE_TOL)


def run_all(seed: int = 0, fault: Optional[str] = None) -> list[CheckResult]:
    """Run every check in float64; ``fault`` corrupts that op's backward rule."""
    ctx = ops.inject_fault(fault) if fault else contextlib.nullcontext()
    with default_dtype("float64"), ctx:
        results = check_primitives(seed)
        results += check_models(seed)
        results += check_oracles(seed)
        results.append(check_histogram_equivalence(seed=seed))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  {'max error':>12}  {'tolerance':>9}  result"]
    for r in results:
        lines.append(
            f"{r.name.ljust(width)}  {r.error:12.3e}  {r.tolerance:9.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
