import numpy as np
import pandas as pd
import pytest
import yaml

import lmser
from src.models.checkpoint import load_checkpoint
from src.utils.file_handler import load_yaml, read_pgm


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "overrides.yaml"
    path.write_text(yaml.safe_dump({
        "data": {"check_counts": False},
        "training": {"eval_size": 20},
        "logging": {"file": str(tmp_path / "logs" / "lmser.log")},
    }))
    return path


@pytest.fixture
def run(mnist_dir, config_file):
    """Invoke the CLI with the synthetic data directory and test overrides"""
    def invoke(*argv) -> int:
        return lmser.main(list(argv) + ["--data-dir", str(mnist_dir), "--config", str(config_file)])
    return invoke


SUP_TRAIN = ["--variant", "lmser-sup", "--iters", "4", "--batch", "10", "--eval-every", "2",
             "--layers", "784", "32", "12", "--style-units", "2"]


@pytest.fixture
def trained(run, tmp_path):
    out = tmp_path / "train"
    assert run("train", *SUP_TRAIN, "--out", str(out)) == 0
    return out


def test_train_outputs(trained):
    metrics = pd.read_csv(trained / "metrics.csv")
    assert metrics["iteration"].tolist() == [2, 4]
    manifest = load_yaml(trained / "manifest.yaml")
    assert manifest["command"] == "train"
    assert manifest["network"]["layer_specs"] == [784, 32, 12]
    assert manifest["training"]["iterations"] == 4
    net, meta = load_checkpoint(trained / "checkpoints" / "final.lmsr")
    assert meta["iteration"] == 4 and net.config.supervised and net.config.style_units == 2


def test_manifest_replay_is_byte_identical(run, trained, tmp_path):
    replay = tmp_path / "replay"
    assert lmser.main(["train", "--manifest", str(trained / "manifest.yaml"), "--out", str(replay)]) == 0
    assert (replay / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()


def test_manifest_from_other_command_rejected(trained, tmp_path):
    assert lmser.main(["gradcheck", "--manifest", str(trained / "manifest.yaml"),
                       "--out", str(tmp_path / "g")]) == 1


def test_experiments_on_checkpoint(run, trained, tmp_path):
    checkpoint = str(trained / "checkpoints" / "final.lmsr")

    out = tmp_path / "reconstruct"
    assert run("reconstruct", "--checkpoint", checkpoint, "--n", "4", "--out", str(out)) == 0
    assert read_pgm(out / "reconstruct.pgm").shape == (2 * 28 + 2, 4 * 28 + 3 * 2)
    assert load_yaml(out / "manifest.yaml")["checkpoint"] == checkpoint

    out = tmp_path / "attack"
    assert run("attack", "--checkpoint", checkpoint, "--epsilons", "0", "0.1", "--out", str(out)) == 0
    table = pd.read_csv(out / "attack.csv")
    assert table["epsilon"].tolist() == [0.0, 0.1] and (table["n"] == 30).all()

    out = tmp_path / "generate"
    assert run("generate", "--checkpoint", checkpoint, "--out", str(out)) == 0
    assert read_pgm(out / "generate.pgm").shape == (28, 10 * 28 + 9 * 2)
    assert (pd.read_csv(out / "generate.csv")["unit_index"] == 10).all()

    out = tmp_path / "associate"
    assert run("associate", "--checkpoint", checkpoint, "--mask", "0", "0", "9", "28", "--n", "5",
               "--out", str(out)) == 0
    assert read_pgm(out / "associate.pgm").shape == (3 * 28 + 2 * 2, 5 * 28 + 4 * 2)
    assert "masked_accuracy" in pd.read_csv(out / "associate_summary.csv").columns


def test_generate_reference_index_out_of_range(run, trained, tmp_path):
    checkpoint = str(trained / "checkpoints" / "final.lmsr")
    assert run("generate", "--checkpoint", checkpoint, "--reference-index", "30",
               "--out", str(tmp_path / "gen")) == 1
    assert run("generate", "--checkpoint", checkpoint, "--reference-index", "29",
               "--out", str(tmp_path / "gen-ok")) == 0


def test_style_unit_sweep_needs_room_in_top_layer(run, tmp_path):
    out = tmp_path / "narrow"
    assert run("train", "--variant", "lmser-sup", "--iters", "0", "--layers", "784", "16", "10",
               "--out", str(out)) == 0
    checkpoint = str(out / "checkpoints" / "final.lmsr")
    assert run("generate", "--checkpoint", checkpoint, "--unit", "10", "--out", str(tmp_path / "g")) == 1


def test_zero_iterations(run, tmp_path):
    out = tmp_path / "zero"
    assert run("train", "--iters", "0", "--layers", "784", "16", "8", "--out", str(out)) == 0
    metrics = pd.read_csv(out / "metrics.csv")
    assert metrics.empty and list(metrics.columns) == ["iteration", "recon_error", "accuracy", "lr"]
    assert (out / "checkpoints" / "final.lmsr").exists()


def test_attack_needs_supervised_checkpoint(run, tmp_path):
    out = tmp_path / "un"
    assert run("train", "--iters", "0", "--layers", "784", "16", "8", "--out", str(out)) == 0
    checkpoint = str(out / "checkpoints" / "final.lmsr")
    assert run("attack", "--checkpoint", checkpoint, "--out", str(tmp_path / "attack")) == 1


def test_missing_checkpoint_flag(run, tmp_path):
    assert run("reconstruct", "--out", str(tmp_path / "r")) == 1


def test_gradcheck(run, tmp_path):
    out = tmp_path / "gc"
    assert run("gradcheck", "--variant", "lmser-sup", "--out", str(out)) == 0
    report = pd.read_csv(out / "gradcheck.csv")
    assert report["passed"].all()
    assert np.all(pd.read_csv(out / "adjointness.csv")["max_gap"] < 1e-5)


def test_unknown_variant_exits_with_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        lmser.main(["train", "--variant", "lmser-xyz", "--out", str(tmp_path)])
    assert exc.value.code == 2
