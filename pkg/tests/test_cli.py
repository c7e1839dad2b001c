import hashlib

import numpy as np
import pytest

from spdattn.cli import main
from spdattn.data import load_dataset
from spdattn.model import ModelConfig, init_params, load_checkpoint


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_manifest(path):
    entries = {}
    for line in path.read_text().splitlines():
        key, _, value = line.partition("=")
        entries[key] = value
    return entries


def synth_args(out, per_class=12, seed=0):
    return ["synth", "--classes", "2", "--channels", "4", "--timepoints", "64",
            "--freqs", "8,24", "--noise", "0.3", "--per-class", str(per_class),
            "--seed", str(seed), "--out", str(out)]


def train_args(data, out, iters=2, lr="0.01", seed=0):
    return ["train", "--data", str(data), "--out", str(out),
            "--m", "3", "--d-c", "6", "--d-u", "4", "--kernel", "12",
            "--iters", str(iters), "--lr", lr, "--batch", "8",
            "--val-frac", "0.25", "--seed", str(seed)]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth + train run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.bin"
    rundir = root / "run"
    assert main(synth_args(data)) == 0
    assert main(train_args(data, rundir, iters=3)) == 0
    return root, data, rundir


class TestSynth:
    def test_writes_loadable_dataset_and_manifest(self, tmp_path):
        out = tmp_path / "d.bin"
        assert main(synth_args(out)) == 0
        ds = load_dataset(out)
        assert ds.n_trials == 24
        manifest = read_manifest(tmp_path / "manifest.txt")
        assert manifest["command"] == "synth"
        assert manifest["output.d.bin.sha256"] == sha256(out)

    def test_seed_repeatable(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        assert main(synth_args(a, seed=3)) == 0
        assert main(synth_args(b, seed=3)) == 0
        assert sha256(a) == sha256(b)

    def test_freq_count_mismatch_is_usage_error(self, tmp_path, capsys):
        args = synth_args(tmp_path / "d.bin")
        args[args.index("--freqs") + 1] = "8,24,30"
        assert main(args) == 2
        assert "usage error" in capsys.readouterr().err

    def test_malformed_freqs(self, tmp_path):
        args = synth_args(tmp_path / "d.bin")
        args[args.index("--freqs") + 1] = "8,abc"
        assert main(args) == 2


class TestTrain:
    def test_outputs(self, workspace):
        root, data, rundir = workspace
        params, cfg = load_checkpoint(rundir / "checkpoint.bin")
        assert cfg.channels == 4 and cfg.classes == 2 and cfg.m == 3
        lines = (rundir / "history.csv").read_text().splitlines()
        assert lines[0] == "iteration,train_loss,val_loss"
        assert len(lines) == 4
        manifest = read_manifest(rundir / "manifest.txt")
        assert manifest["command"] == "train"
        assert manifest["input.data.sha256"] == sha256(data)
        assert manifest["output.checkpoint.bin.sha256"] == sha256(
            rundir / "checkpoint.bin")
        assert "config.train.best_iteration" in manifest

    def test_missing_data_flag_is_usage_error(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "run")]) == 2

    def test_missing_data_file_is_runtime_error(self, tmp_path, capsys):
        code = main(train_args(tmp_path / "nope.bin", tmp_path / "run"))
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_zero_rate_checkpoint_matches_init(self, tmp_path):
        data = tmp_path / "d.bin"
        rundir = tmp_path / "run"
        assert main(synth_args(data)) == 0
        assert main(train_args(data, rundir, lr="0")) == 0
        params, cfg = load_checkpoint(rundir / "checkpoint.bin")
        init = init_params(cfg)
        for (name, got), (_, want) in zip(params.items(), init.items()):
            assert np.array_equal(got, want), name

    def test_seed_determinism(self, tmp_path):
        data = tmp_path / "d.bin"
        assert main(synth_args(data)) == 0
        r1, r2 = tmp_path / "r1", tmp_path / "r2"
        assert main(train_args(data, r1, seed=4)) == 0
        assert main(train_args(data, r2, seed=4)) == 0
        assert sha256(r1 / "checkpoint.bin") == sha256(r2 / "checkpoint.bin")
        assert sha256(r1 / "history.csv") == sha256(r2 / "history.csv")


class TestEval:
    def test_outputs(self, workspace, tmp_path):
        root, data, rundir = workspace
        out = tmp_path / "eval"
        code = main(["eval", "--ckpt", str(rundir / "checkpoint.bin"),
                     "--data", str(data), "--out", str(out)])
        assert code == 0
        metrics = read_manifest(out / "metrics.txt")
        assert 0.0 <= float(metrics["accuracy"]) <= 1.0
        assert int(metrics["n_trials"]) == 24
        assert "auc" in metrics  # binary dataset
        confusion = np.loadtxt(out / "confusion.csv", delimiter=",", dtype=int,
                               ndmin=2)
        np.testing.assert_array_equal(confusion.sum(axis=1), [12, 12])
        attention = np.loadtxt(out / "attention.csv", delimiter=",", ndmin=2)
        assert attention.shape == (1, 3)
        assert attention.sum() == pytest.approx(1.0, abs=1e-9)
        manifest = read_manifest(out / "manifest.txt")
        assert manifest["output.metrics.txt.sha256"] == sha256(out / "metrics.txt")

    def test_auc_absent_for_multiclass(self, tmp_path):
        data = tmp_path / "d3.bin"
        args = synth_args(data)
        args[args.index("--classes") + 1] = "3"
        args[args.index("--freqs") + 1] = "8,20,30"
        assert main(args) == 0
        rundir = tmp_path / "run3"
        assert main(train_args(data, rundir)) == 0
        out = tmp_path / "eval3"
        assert main(["eval", "--ckpt", str(rundir / "checkpoint.bin"),
                     "--data", str(data), "--out", str(out)]) == 0
        assert "auc" not in read_manifest(out / "metrics.txt")

    def test_shape_mismatch_names_both_files(self, workspace, tmp_path, capsys):
        root, data, rundir = workspace
        other = tmp_path / "other.bin"
        args = synth_args(other)
        args[args.index("--channels") + 1] = "6"
        assert main(args) == 0
        code = main(["eval", "--ckpt", str(rundir / "checkpoint.bin"),
                     "--data", str(other), "--out", str(tmp_path / "e")])
        assert code == 1
        err = capsys.readouterr().err
        assert "checkpoint.bin" in err and "other.bin" in err


class TestInterpret:
    def test_outputs(self, workspace, tmp_path):
        root, data, rundir = workspace
        out = tmp_path / "interp"
        code = main(["interpret", "--ckpt", str(rundir / "checkpoint.bin"),
                     "--data", str(data), "--class", "0", "--out", str(out)])
        assert code == 0
        sal = np.loadtxt(out / "saliency_class0.csv", delimiter=",", ndmin=2)
        assert sal.shape == (4, 64)
        assert np.all(sal >= 0)  # mean of absolute values
        scores = np.loadtxt(out / "attention_scores.csv", delimiter=",", ndmin=2)
        assert scores.shape == (24, 3)
        np.testing.assert_allclose(scores.sum(axis=1), np.ones(24), atol=1e-9)
        manifest = read_manifest(out / "manifest.txt")
        assert manifest["config.interpret.class"] == "0"

    def test_class_out_of_range(self, workspace, tmp_path, capsys):
        root, data, rundir = workspace
        code = main(["interpret", "--ckpt", str(rundir / "checkpoint.bin"),
                     "--data", str(data), "--class", "5",
                     "--out", str(tmp_path / "x")])
        assert code == 1
        assert "out of range" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    assert main(["frobnicate"]) == 2


def test_config_error_from_model_flags(tmp_path):
    data = tmp_path / "d.bin"
    assert main(synth_args(data)) == 0
    args = train_args(data, tmp_path / "run")
    args[args.index("--d-u") + 1] = "9"  # d_u must stay below d_c
    assert main(args) == 2
