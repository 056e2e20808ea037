"""``histsas`` command line: gen-data, train, eval, export-features, verify, config.

Exit codes: 0 success, 1 failed verification, 2 configuration, 3 I/O,
4 numerical failure, 5 input/shape mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, kv
from .autograd.tensor import default_dtype
from .config import ExperimentConfig, deep_experiment, shallow_experiment
from .datasets import FACTORS, DatasetSplit, factor_names
from .errors import (
    ConfigurationError,
    DimensionError,
    InputError,
    NumericalError,
    UsageError,
)
from .metrics import calinski_harabasz, export_features, predict, factor_accuracy, write_confusion_csv
from .models import DEEP_KINDS, build_model, load_checkpoint, save_checkpoint
from .pgm import load_manifest, save_dataset
from .training import RunReport, mean_std, train
from . import verify as verify_mod

log = logging.getLogger("histsas")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_INPUT = 5

CONFIG_LABELS = {
    "shallow_cnn": "CNN",
    "shallow_hist": "Hist",
    "deep_baseline": "baseline",
    "deep_parallel": "parallel",
    "deep_series": "series",
}


def configuration_label(kind: str) -> str:
    return CONFIG_LABELS[kind]


def run_name(kind: str, bins: int, seed: int) -> str:
    return f"{kind}_b{bins}_seed{seed}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _print_counts(splits: Sequence[DatasetSplit], out=None) -> None:
    out = out or sys.stdout
    classes = splits[0].classes
    print("class\t" + "\t".join(s.partition for s in splits), file=out)
    for i, c in enumerate(classes):
        counts = [int(np.sum(s.labels == i)) for s in splits]
        print(f"{c.name}\t" + "\t".join(map(str, counts)), file=out)
    print("total\t" + "\t".join(str(len(s)) for s in splits), file=out)


def cmd_gen_data(config: ExperimentConfig, out_dir) -> Path:
    """Render the configured dataset to PGM files plus a manifest."""
    splits = config.dataset.build()
    manifest = save_dataset(splits, out_dir, config.dataset.bits)
    _print_counts(splits)
    print(f"manifest: {manifest}")
    return manifest


def _load_splits(config: ExperimentConfig, manifest: Optional[str]) -> tuple[DatasetSplit, ...]:
    path = manifest or config.dataset.manifest
    if path:
        loaded = load_manifest(path)
        return loaded["train"], loaded["val"], loaded["test"]
    return config.dataset.build()


def _eval_crop(model, split: DatasetSplit):
    size = tuple(split.images.shape[-2:])
    want = tuple(model.config.input_size)
    return None if size == want else want


def _write_run_outputs(run_dir: Path, model, report: RunReport, test: DatasetSplit, crop) -> None:
    report.write(run_dir / "report.txt")
    for factor, cm in report.confusion.items():
        write_confusion_csv(cm, report.factor_names[factor], run_dir / f"confusion_{factor}.csv")
    if len(test):
        export_features(model, test, run_dir / "features_test.csv", crop)


def summarize(reports: Sequence[RunReport]) -> list[str]:
    """Mean and sample standard deviation of every test metric across seeds."""
    first = reports[0]
    lines = [
        f"configuration = {configuration_label(first.model_kind)}",
        f"model_kind = {first.model_kind}",
        f"bins = {first.bins}",
        f"seeds = {kv.format_value([r.seed for r in reports])}",
    ]
    for section in ("accuracy", "calinski_harabasz"):
        keys = getattr(first, section).keys()
        for key in keys:
            values = [getattr(r, section).get(key, float("nan")) for r in reports]
            mean, std = mean_std(values)
            lines.append(f"{section}.{key}.mean = {kv.format_value(mean)}")
            lines.append(f"{section}.{key}.std = {kv.format_value(std)}")
    return lines


def cmd_train(config: ExperimentConfig, manifest: Optional[str] = None) -> Path:
    """One training run per seed; returns the path of ``summary.txt``."""
    if not config.seeds:
        raise ConfigurationError("experiment.seeds is empty; give at least one seed")
    train_split, val_split, test_split = _load_splits(config, manifest)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.txt")
    reports = []
    for seed in config.seeds:
        model_cfg = dataclasses.replace(config.model, seed=seed)
        train_cfg = dataclasses.replace(config.train, seed=seed)
        model = build_model(model_cfg)
        name = run_name(model_cfg.kind, model_cfg.bins, seed)
        log.info("training %s", name)
        model, report = train(model, (train_split, val_split, test_split), train_cfg)
        run_dir = out / "runs" / name
        run_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, run_dir / "checkpoint", {"train_seed": seed, "best_epoch": report.best_epoch})
        _write_run_outputs(run_dir, model, report, test_split, _eval_crop(model, test_split))
        reports.append(report)
        accs = ", ".join(f"{k} {v:.2f}" for k, v in report.accuracy.items())
        print(f"{name}: stopped at epoch {report.stop_epoch} (best {report.best_epoch}); test accuracy {accs}")
    lines = summarize(reports)
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    label = configuration_label(config.model.kind)
    print(f"configuration {label}, bins {config.model.bins}, {len(reports)} seed(s)")
    for key in reports[0].accuracy:
        mean, std = mean_std([r.accuracy[key] for r in reports])
        print(f"  accuracy {key}: {mean:.2f} ± {std:.2f}")
    print(f"summary: {summary}")
    return summary


def _factors(requested: str, split: DatasetSplit) -> list[str]:
    wanted = list(FACTORS) if requested == "all" else [requested]
    out = []
    for f in wanted:
        if f != "both" and len(factor_names(split.classes, f)) < 2:
            if requested != "all":
                raise InputError(f"dataset has a single {f} class; that factor cannot be scored")
            continue
        out.append(f)
    return out


def cmd_eval(checkpoint, manifest, factor: str = "all", split: str = "test", out_dir=None) -> dict:
    """Accuracy, confusion CSV and Calinski-Harabasz per requested factor."""
    model, _ = load_checkpoint(checkpoint)
    data = load_manifest(manifest)[split]
    if data.num_classes != model.config.num_classes:
        raise InputError(
            f"checkpoint expects {model.config.num_classes} classes, manifest declares {data.num_classes}"
        )
    if not len(data):
        raise InputError(f"manifest has no {split} images")
    crop = _eval_crop(model, data)
    logits, feats = predict(model, data, crop)
    pred = logits.argmax(axis=1)
    results = {}
    for f in _factors(factor, data):
        acc, cm = factor_accuracy(pred, data.labels, data.classes, f)
        ch = calinski_harabasz(feats, data.factor_labels(f))
        results[f] = (acc, ch)
        print(f"{split} {f}: accuracy {acc:.2f}%  calinski_harabasz {kv.format_value(float(ch))}")
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_confusion_csv(cm, factor_names(data.classes, f), Path(out_dir) / f"confusion_{split}_{f}.csv")
    return results


def cmd_export_features(checkpoint, manifest, out_path, split: str = "test") -> Path:
    model, _ = load_checkpoint(checkpoint)
    data = load_manifest(manifest)[split]
    if data.num_classes != model.config.num_classes:
        raise InputError(
            f"checkpoint expects {model.config.num_classes} classes, manifest declares {data.num_classes}"
        )
    path = export_features(model, data, out_path, _eval_crop(model, data))
    print(f"features: {path}")
    return path


def cmd_verify(fault: Optional[str] = None, seed: int = 0) -> int:
    results = verify_mod.run_all(seed=seed, fault=fault)
    print(verify_mod.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


PRESETS = {
    "shallow_cnn": lambda: shallow_experiment("shallow_cnn"),
    "shallow_hist": lambda: shallow_experiment("shallow_hist"),
    **{k: (lambda k=k: deep_experiment(k)) for k in DEEP_KINDS},
}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None):
        cfg.seeds = tuple(cfg.seeds) + tuple(args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="histsas", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"histsas {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset to PGM + manifest")
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train one model per seed")
    t.add_argument("--config")
    t.add_argument("--out", help="experiment directory (overrides experiment.out_dir)")
    t.add_argument("--seed", type=int, action="append", help="append a run seed (repeatable)")
    t.add_argument("--manifest", help="dataset manifest (overrides dataset.manifest)")

    for name, text in (("eval", "score a checkpoint"), ("export-features", "write penultimate features as CSV")):
        e = sub.add_parser(name, help=text)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--manifest", required=True)
        e.add_argument("--split", choices=("train", "val", "test"), default="test")
        if name == "eval":
            e.add_argument("--factor", choices=(*FACTORS, "all"), default="all")
            e.add_argument("--out", help="directory for confusion CSVs")
        else:
            e.add_argument("--out", required=True, help="CSV path")

    v = sub.add_parser("verify", help="gradient and oracle self-checks")
    v.add_argument("--inject-fault", metavar="OP", help="corrupt OP's backward rule (tests the checker)")
    v.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("config", help="print a preset experiment config")
    c.add_argument("preset", choices=sorted(PRESETS))
    return p


def exit_code(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, (ConfigurationError, UsageError)):
        return EXIT_CONFIG, "configuration error"
    if isinstance(exc, OSError):
        return EXIT_IO, "I/O error"
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL, "numerical error"
    return EXIT_INPUT, "input error"


def _dispatch(args) -> int:
    if args.command == "verify":
        return cmd_verify(args.inject_fault, args.seed)
    if args.command == "config":
        sys.stdout.write(PRESETS[args.preset]().serialize())
        return EXIT_OK
    if args.command in ("gen-data", "train"):
        cfg = _load_config(args)
        with default_dtype(cfg.dtype):
            if args.command == "gen-data":
                cmd_gen_data(cfg, args.out)
            else:
                cmd_train(cfg, args.manifest)
        return EXIT_OK
    if args.command == "eval":
        cmd_eval(args.checkpoint, args.manifest, args.factor, args.split, args.out)
    else:
        cmd_export_features(args.checkpoint, args.manifest, args.out, args.split)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return _dispatch(args)
    except (ConfigurationError, UsageError, OSError, NumericalError, InputError, DimensionError) as exc:
        code, kind = exit_code(exc)
        print(f"histsas: {kind}: {exc}", file=sys.stderr)
        return code

if __name__ == "__main__":
    sys.exit(main())
