import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from dualspace import cli
from dualspace.cli import ablation_settings
from dualspace.dataset import Dataset, load_dataset, save_dataset
from dualspace.errors import ValidationError
from dualspace.fusion import FusionTransform, embed
from dualspace.network import BranchNet, ModelParams, load_checkpoint, save_checkpoint
from dualspace.trainer import TrainConfig


def run(*argv):
    return cli.main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    assert run("synth", "--per-class", 30, "--d-visual", 48, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def trained(small_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run("train", "--data", small_data, "--out", out, "--epochs", 1, "--batch-size", 100) == 0
    return out


def test_synth_default_shapes(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "d") == 0
    summary = json.loads(capsys.readouterr().out)
    assert (summary["n"], summary["d_a"], summary["d_v"], summary["c"]) == (1000, 128, 1024, 10)
    assert (summary["train"], summary["test"]) == (800, 200)
    ds = load_dataset(tmp_path / "d")
    assert ds.audio.shape == (1000, 128) and ds.visual.shape == (1000, 1024)


def test_synth_seed_repeat_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        run("synth", "--per-class", 5, "--d-visual", 7, "--seed", 3, "--out", tmp_path / name)
    for f in ("manifest.json", "audio.f32", "visual.f32", "labels.u32"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_zero_classes_writes_nothing(tmp_path, capsys):
    assert run("synth", "--classes", 0, "--out", tmp_path / "bad") == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and err["error"] == "ValidationError"
    assert not (tmp_path / "bad").exists()


def test_train_writes_all_artifacts(trained):
    names = sorted(p.name for p in trained.iterdir())
    assert names == ["checkpoint.bin", "fusion.json", "loss_history.csv", "train_config.json"]
    config = json.loads((trained / "train_config.json").read_text())
    assert (config["alpha"], config["beta"], config["ablation"]) == (0.01, 0.001, "full")
    assert (trained / "loss_history.csv").read_text().splitlines()[0] == "epoch,corr,dis,cons,total"


def test_train_rerun_same_checkpoint_hash(small_data, trained, tmp_path):
    assert run("train", "--data", small_data, "--out", tmp_path, "--epochs", 1, "--batch-size", 100) == 0
    assert sha(tmp_path / "checkpoint.bin") == sha(trained / "checkpoint.bin")
    assert (tmp_path / "fusion.json").read_text() == (trained / "fusion.json").read_text()


@pytest.mark.parametrize("ablation,weights", [("explicit", (1.0, 0.0, 0.001)),
                                               ("implicit", (0.0, 0.01, 0.001))])
def test_train_ablations(small_data, tmp_path, ablation, weights):
    assert run("train", "--data", small_data, "--out", tmp_path, "--epochs", 1,
               "--batch-size", 100, "--ablation", ablation) == 0
    config = json.loads((tmp_path / "train_config.json").read_text())
    assert json.loads((tmp_path / "fusion.json").read_text())["parts"] == ["ex", "im"]
    assert (config["corr_weight"], config["alpha"], config["beta"]) == weights


def test_unknown_ablation():
    with pytest.raises(ValidationError):
        ablation_settings("share", TrainConfig())


def test_train_share_flag(small_data, tmp_path):
    assert run("train", "--data", small_data, "--out", tmp_path, "--epochs", 1,
               "--batch-size", 100, "--share-ex-im") == 0
    assert load_checkpoint(tmp_path / "checkpoint.bin").share_ex_im


def test_train_needs_split(tmp_path, rng, capsys):
    ds = Dataset(rng.standard_normal((40, 3)), rng.standard_normal((40, 3)), np.arange(40) % 2, 2)
    save_dataset(ds, tmp_path / "d")
    assert run("train", "--data", tmp_path / "d", "--out", tmp_path / "m", "--epochs", 1) == 2
    assert "split" in json.loads(capsys.readouterr().err)["message"]


def test_eval_writes_report_and_csv(small_data, trained, tmp_path):
    assert run("eval", "--data", small_data, "--checkpoint", trained / "checkpoint.bin",
               "--out", tmp_path) == 0
    report = json.loads((tmp_path / "eval_report.json").read_text())
    assert report["map_avg"] == pytest.approx((report["map_a2v"] + report["map_v2a"]) / 2, abs=1e-12)
    assert report["n_queries"] == 60
    assert (tmp_path / "precision_scope.csv").read_text().startswith("direction,K,precision\n")


def test_eval_perfect_cluster_checkpoint(tmp_path, capsys):
    c = 4
    labels = np.repeat(np.arange(c), 5)
    feats = np.eye(c)[labels]
    ds = Dataset(feats, feats * 2.0, labels, c)
    save_dataset(ds, tmp_path / "d")

    def ident():
        return BranchNet([np.eye(c)], [np.zeros(c)])

    params = ModelParams(ident(), ident(), ident(), ident(), c)
    (tmp_path / "m").mkdir()
    save_checkpoint(params, tmp_path / "m" / "checkpoint.bin")
    eye = np.eye(c)
    fusion = FusionTransform(eye, eye, np.zeros(c), np.zeros(c), np.ones(c), ("ex",))
    (tmp_path / "m" / "fusion.json").write_text(fusion.to_json())
    capsys.readouterr()
    assert run("eval", "--data", tmp_path / "d", "--checkpoint", tmp_path / "m" / "checkpoint.bin",
               "--out", tmp_path / "e") == 0
    assert json.loads(capsys.readouterr().out)["map_avg"] == 1.0


def test_baseline_random_balanced(tmp_path, capsys):
    data = tmp_path / "d"
    run("synth", "--per-class", 250, "--d-audio", 4, "--d-visual", 4, "--out", data)
    capsys.readouterr()
    assert run("baseline", "--data", data, "--kind", "random", "--out", tmp_path / "b") == 0
    report = json.loads((tmp_path / "b" / "eval_report.json").read_text())
    assert report["n_queries"] == 500
    assert abs(report["map_avg"] - 0.110) <= 0.01


@pytest.mark.parametrize("kind", ["cca", "cluster_cca"])
def test_baseline_linear_kinds(small_data, tmp_path, kind):
    assert run("baseline", "--data", small_data, "--kind", kind, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "eval_report.json").read_text())["map_avg"] > 0.5


def test_gradcheck_seed_one_passes(capsys):
    assert run("gradcheck", "--seed", 1) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pass"] and out["max_relative_error"] < 1e-4


def test_export_matches_embed(small_data, trained, tmp_path):
    assert run("export", "--checkpoint", trained / "checkpoint.bin", "--data", small_data,
               "--modality", "visual", "--subset", "test", "--out", tmp_path / "e") == 0
    exported = load_dataset(tmp_path / "e")
    test = load_dataset(small_data).train_test()[1]
    params = load_checkpoint(trained / "checkpoint.bin")
    fusion = FusionTransform.from_json((trained / "fusion.json").read_text())
    want = embed(params, fusion, test.visual, "visual").astype(np.float32)
    assert exported.audio.shape == (60, 0)
    np.testing.assert_array_equal(exported.visual, want)
    np.testing.assert_array_equal(exported.labels, test.labels)


def test_missing_dataset_is_io_error(tmp_path, capsys):
    assert run("eval", "--data", tmp_path / "nope", "--checkpoint", tmp_path / "c.bin",
               "--out", tmp_path / "o") == 4
    assert json.loads(capsys.readouterr().err)["exit_code"] == 4


def test_thread_cap_env(small_data, tmp_path, monkeypatch):
    monkeypatch.setenv("DUALSPACE_THREADS", "zero")
    assert run("baseline", "--data", small_data, "--kind", "cca", "--out", tmp_path / "x") == 2
    monkeypatch.setenv("DUALSPACE_THREADS", "1")
    assert run("train", "--data", small_data, "--out", tmp_path / "m", "--epochs", 1,
               "--batch-size", 100) == 0


def test_no_temporary_files_left(trained):
    assert not [p for p in trained.iterdir() if p.name.startswith(".")]


def test_unknown_flag_rejected(small_data, tmp_path):
    with pytest.raises(SystemExit) as err:
        run("train", "--data", small_data, "--out", tmp_path, "--gamma", 1)
    assert err.value.code == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dualspace.cli", "synth", "--classes", "0",
                           "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"] == "ValidationError"
