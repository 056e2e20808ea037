import re

import numpy as np
import pytest

from histsas.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_IO, main
from histsas.metrics import calinski_harabasz, read_features

SHALLOW = """\
dataset.preset = pisas
dataset.size = 16, 16
dataset.per_class = {per_class}
model.kind = shallow_hist
model.input_size = 16, 16
model.kernel = 4, 4
model.stride = 2, 2
train.epochs = 3
train.batch_size = 16
experiment.seeds = {seeds}
"""

DEEP = """\
dataset.preset = multisite
dataset.size = 10, 10
model.kind = deep_parallel
model.num_classes = 4
model.input_size = 8, 8
model.bins = 16
model.backbone_channels = 2, 2, 4, 16
model.blocks_per_stage = 1
model.stem_pool = false
train.epochs = 1
train.learning_rate = 0.001
train.batch_size = 16
train.patience = none
train.augmentation = random_crop
train.crop_size = 8, 8
experiment.seeds = 0, 1
"""


def _write(tmp_path, text, name="c.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def shallow_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("shallow")
    cfg = _write(root, SHALLOW.format(per_class=50, seeds="0, 1"))
    assert main(["gen-data", "--config", cfg, "--out", str(root / "data")]) == 0
    manifest = str(root / "data" / "manifest.txt")
    assert main(["train", "--config", cfg, "--manifest", manifest, "--out", str(root / "exp"), "--seed", "2"]) == 0
    return root, cfg, manifest


def test_gen_data_split_counts(shallow_run, capsys):
    root, _, manifest = shallow_run
    rows = [l.split("\t") for l in open(manifest).read().splitlines() if not l.startswith("#")]
    parts = [r[5] for r in rows]
    assert (parts.count("train"), parts.count("val"), parts.count("test")) == (210, 30, 60)


def test_gen_data_rerun_is_byte_identical(shallow_run, tmp_path, capsys):
    root, cfg, manifest = shallow_run
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "manifest.txt").read_bytes() == open(manifest, "rb").read()
    first = sorted((root / "data" / "images").rglob("*.pgm"))[:5]
    for f in first:
        rel = f.relative_to(root / "data")
        assert (tmp_path / "again" / rel).read_bytes() == f.read_bytes()
    out = capsys.readouterr().out
    assert "total\t210\t30\t60" in out


def test_unknown_structural_kind_exit(tmp_path, capsys):
    cfg = _write(tmp_path, "dataset.preset = custom\ndataset.structural = blobs\ndataset.statistical = constant\n")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == EXIT_CONFIG
    assert "blobs" in capsys.readouterr().err


def test_train_writes_runs_and_summary(shallow_run):
    root, _, _ = shallow_run
    exp = root / "exp"
    runs = sorted(p.name for p in (exp / "runs").iterdir())
    assert runs == ["shallow_hist_b3_seed0", "shallow_hist_b3_seed1", "shallow_hist_b3_seed2"]
    for r in runs:
        d = exp / "runs" / r
        assert (d / "checkpoint" / "manifest.txt").is_file()
        assert (d / "report.txt").is_file()
        assert (d / "features_test.csv").is_file()
        assert (d / "confusion_statistical.csv").is_file()
    summary = (exp / "summary.txt").read_text()
    assert "configuration = Hist" in summary
    assert "seeds = 0, 1, 2" in summary
    assert "accuracy.statistical.std" in summary


def test_train_rerun_is_byte_identical(shallow_run, tmp_path, capsys):
    root, cfg, manifest = shallow_run
    assert main(["train", "--config", cfg, "--manifest", manifest, "--out", str(tmp_path / "exp"), "--seed", "2"]) == 0
    for f in (root / "exp" / "runs").rglob("*"):
        if f.is_file():
            twin = tmp_path / "exp" / f.relative_to(root / "exp")
            assert twin.read_bytes() == f.read_bytes(), f
    assert (tmp_path / "exp" / "summary.txt").read_bytes() == (root / "exp" / "summary.txt").read_bytes()


def test_eval_all_factors_and_ch_matches_library(shallow_run, capsys):
    root, _, manifest = shallow_run
    run = root / "exp" / "runs" / "shallow_hist_b3_seed0"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "checkpoint"), "--manifest", manifest,
                 "--factor", "all", "--out", str(run / "eval")]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.startswith("test ")]
    assert [l.split()[1].rstrip(":") for l in lines] == ["both", "statistical", "structural"]
    feats, labels = read_features(run / "features_test.csv")
    sk = pytest.importorskip("sklearn.metrics")
    for line in lines:
        factor = line.split()[1].rstrip(":")
        printed = float(re.search(r"calinski_harabasz (\S+)", line).group(1))
        names = labels["joint" if factor == "both" else factor]
        # test images are stored class by class, so first appearance gives the class order
        order = {n: i for i, n in enumerate(dict.fromkeys(names))}
        ints = np.array([order[n] for n in names])
        assert printed == calinski_harabasz(feats, ints)
        assert printed == pytest.approx(sk.calinski_harabasz_score(feats, ints), rel=1e-10)
    assert (run / "eval" / "confusion_test_statistical.csv").is_file()


def test_eval_train_and_val_reported_separately(shallow_run, capsys):
    root, _, manifest = shallow_run
    ck = str(root / "exp" / "runs" / "shallow_hist_b3_seed0" / "checkpoint")
    capsys.readouterr()
    for split in ("train", "val"):
        assert main(["eval", "--checkpoint", ck, "--manifest", manifest, "--split", split, "--factor", "both"]) == 0
    out = capsys.readouterr().out
    assert "train both: accuracy" in out and "val both: accuracy" in out


def test_export_features_matches_training_export(shallow_run, tmp_path):
    root, _, manifest = shallow_run
    run = root / "exp" / "runs" / "shallow_hist_b3_seed1"
    out = tmp_path / "f.csv"
    assert main(["export-features", "--checkpoint", str(run / "checkpoint"), "--manifest", manifest, "--out", str(out)]) == 0
    assert out.read_bytes() == (run / "features_test.csv").read_bytes()


def test_eval_class_count_mismatch(shallow_run, tmp_path, capsys):
    root, _, _ = shallow_run
    cfg = _write(tmp_path, "dataset.preset = multisite\ndataset.size = 16, 16\n")
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "ms")]) == 0
    ck = str(root / "exp" / "runs" / "shallow_hist_b3_seed0" / "checkpoint")
    code = main(["eval", "--checkpoint", ck, "--manifest", str(tmp_path / "ms" / "manifest.txt")])
    assert code == EXIT_INPUT
    assert "classes" in capsys.readouterr().err


def test_deep_parallel_summary_names_configuration(tmp_path, capsys):
    cfg = _write(tmp_path, DEEP)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "deep")]) == 0
    summary = (tmp_path / "deep" / "summary.txt").read_text()
    assert "configuration = parallel" in summary and "bins = 16" in summary
    assert (tmp_path / "deep" / "runs" / "deep_parallel_b16_seed1" / "checkpoint").is_dir()
    assert "configuration parallel, bins 16" in capsys.readouterr().out


def test_empty_seed_list_is_configuration_error(tmp_path, capsys):
    cfg = _write(tmp_path, SHALLOW.format(per_class=10, seeds=""))
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "seeds" in capsys.readouterr().err


def test_missing_files_are_io_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.txt")]) == EXIT_IO
    cfg = _write(tmp_path, SHALLOW.format(per_class=10, seeds="0"))
    assert main(["train", "--config", cfg, "--manifest", str(tmp_path / "none.txt")]) == EXIT_IO


def test_config_preset_roundtrips(capsys):
    from histsas.config import ExperimentConfig, deep_experiment

    assert main(["config", "deep_parallel"]) == 0
    assert ExperimentConfig.parse(capsys.readouterr().out) == deep_experiment("deep_parallel")


def test_verify_pristine_and_faulted(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "grad:conv2d" in out and "all checks passed" in out
    assert re.search(r"grad:exp\s+\S+e[-+]\d+", out)
    code = main(["verify", "--inject-fault", "histogram"])
    assert code != 0
    assert "FAILED" in capsys.readouterr().out
