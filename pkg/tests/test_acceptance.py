"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line straight to the terminal (bypassing
capture) and then asserts. The shallow and deep experiments take several
minutes each; deselect them with ``-m "not slow"`` for a quick run.
"""

import dataclasses
import shutil
import time

import numpy as np
import pytest

import hist_properties as props
from histsas import verify
from histsas.autograd.tensor import Tensor
from histsas.cli import cmd_train, run_name
from histsas.config import deep_experiment, shallow_experiment
from histsas.histogram import histogram_forward_composed
from histsas.metrics import calinski_harabasz, read_features
from histsas.oracles import naive_histogram
from histsas.training import RunReport, mean_std

SEEDS = (0, 1, 2)
DEEP_EPOCHS = 40


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
        return passed

    return emit


def _run(kind, out_dir, seeds=SEEDS, make=shallow_experiment, **kw):
    cfg = make(kind, **kw)
    cfg = dataclasses.replace(cfg, seeds=tuple(seeds), out_dir=str(out_dir))
    cmd_train(cfg)
    runs = out_dir / "runs"
    return {s: runs / run_name(kind, cfg.model.bins, s) for s in seeds}


@pytest.fixture(scope="module")
def shallow_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("shallow")
    start = time.perf_counter()
    runs = {kind: _run(kind, root / kind) for kind in ("shallow_cnn", "shallow_hist")}
    return runs, time.perf_counter() - start


def test_histogram_matches_loop_oracle(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        n, d = int(rng.integers(1, 3)), int(rng.integers(1, 5))
        m, w = (int(v) for v in rng.integers(1, 17, size=2))
        bins = (1, 3, 8)[i % 3]
        kernel = (int(rng.integers(1, m + 1)), int(rng.integers(1, w + 1)))
        stride = (int(rng.integers(1, kernel[0] + 1)), int(rng.integers(1, kernel[1] + 1)))
        x = rng.uniform(-0.5, 1.5, (n, d, m, w))
        p = props.random_params(rng, bins, d, kernel, stride)
        got = histogram_forward_composed(Tensor(x), p).data
        ref = naive_histogram(x, p.centers.data, p.width_coeffs.data, kernel, stride)
        worst = max(worst, float(np.abs(got - ref).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    assert report(1, ok, f"max |composed - loop| = {worst:.2e} (<= 1e-12), {elapsed:.1f} s")


def test_gradient_checks(report):
    start = time.perf_counter()
    results = verify.run_all(seed=0)
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    prim = max(r.error for r in results if r.name.startswith("grad:") and "model:" not in r.name)
    model = max(r.error for r in results if r.name.startswith("grad:model:"))
    ok = not failed and elapsed < 120
    detail = f"primitives {prim:.2e} (<= 1e-5), models {model:.2e} (<= 1e-4), {elapsed:.0f} s"
    assert report(2, ok, detail + (f", failed {failed}" if failed else ""))


@pytest.mark.slow
def test_shallow_accuracy_direction(shallow_runs, report):
    runs, elapsed = shallow_runs
    acc = {
        kind: {f: mean_std([RunReport.read(d / "report.txt").accuracy[f] for d in dirs.values()])[0]
               for f in ("statistical", "structural")}
        for kind, dirs in runs.items()
    }
    hist, cnn = acc["shallow_hist"], acc["shallow_cnn"]
    ok = (
        hist["statistical"] >= 95
        and hist["statistical"] - cnn["statistical"] >= 10
        and cnn["structural"] >= 90
        and cnn["structural"] > hist["structural"]
        and elapsed < 15 * 60
    )
    detail = (
        f"statistical Hist {hist['statistical']:.1f} vs CNN {cnn['statistical']:.1f}; "
        f"structural CNN {cnn['structural']:.1f} vs Hist {hist['structural']:.1f}; {elapsed:.0f} s"
    )
    assert report(3, ok, detail)


@pytest.mark.slow
def test_shallow_feature_separability_direction(shallow_runs, report):
    runs, _ = shallow_runs
    start = time.perf_counter()
    wins = 0
    per_seed = []
    for seed in SEEDS:
        ch = {}
        for kind, dirs in runs.items():
            feats, labels = read_features(dirs[seed] / "features_test.csv")
            ch[kind] = {f: calinski_harabasz(feats, labels[f]) for f in ("statistical", "structural")}
        hist, cnn = ch["shallow_hist"], ch["shallow_cnn"]
        won = hist["statistical"] > cnn["statistical"] and cnn["structural"] > hist["structural"]
        wins += won
        per_seed.append(f"seed {seed} {'ok' if won else 'no'}")
    elapsed = time.perf_counter() - start
    ok = wins >= 2 and elapsed < 60
    assert report(4, ok, f"ordering holds in {wins}/3 seeds ({', '.join(per_seed)})")


@pytest.mark.slow
def test_deep_accuracy_direction(tmp_path, report):
    start = time.perf_counter()
    acc = {}
    for kind in ("deep_baseline", "deep_parallel", "deep_series"):
        dirs = _run(kind, tmp_path / kind, make=deep_experiment, epochs=DEEP_EPOCHS)
        acc[kind] = mean_std([RunReport.read(d / "report.txt").accuracy["both"] for d in dirs.values()])[0]
    elapsed = time.perf_counter() - start
    par, ser, base = acc["deep_parallel"], acc["deep_series"], acc["deep_baseline"]
    ok = par >= ser and par >= base - 2 and elapsed < 45 * 60
    detail = f"parallel {par:.2f}, series {ser:.2f}, baseline {base:.2f} ({DEEP_EPOCHS} epochs, {elapsed:.0f} s)"
    assert report(5, ok, detail)


def test_ch_hand_value(report):
    value = calinski_harabasz([0.0, 1.0, 10.0, 11.0], ["a", "a", "b", "b"])
    assert report(6, value == 200.0, f"CH = {value!r} (expected 200.0)")


@pytest.mark.slow
def test_train_is_byte_deterministic(tmp_path, report):
    # same config both times, out_dir included, so the tree is wiped in between
    root = tmp_path / "exp"
    trees = []
    for _ in range(2):
        _run("shallow_hist", root, seeds=(0,))
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
        shutil.rmtree(root)
    differing = sorted(k for k in trees[0].keys() | trees[1].keys() if trees[0].get(k) != trees[1].get(k))
    assert report(7, not differing, f"{len(trees[0])} files compared, {len(differing)} differ")


def test_histogram_invariants(report):
    checks = {
        "range": (props.range_violation, 0.0),
        "translation": (props.translation_violation, 1e-9),
        "window average": (props.window_average_violation, 1e-12),
        "argmax bin": (props.argmax_violation, 0.0),
    }
    start = time.perf_counter()
    worst = {}
    for i, (name, (fn, _)) in enumerate(checks.items()):
        rng = np.random.default_rng(100 + i)
        worst[name] = max(fn(rng) for _ in range(1000))
    elapsed = time.perf_counter() - start
    ok = all(worst[n] <= checks[n][1] for n in checks) and elapsed < 30
    detail = ", ".join(f"{n} {v:.1e}" for n, v in worst.items())
    assert report(8, ok, f"worst violations over 1000 trials each: {detail}; {elapsed:.1f} s")
