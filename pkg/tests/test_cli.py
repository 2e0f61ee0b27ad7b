"""End-to-end CLI tests on tiny workloads."""
import gzip
import json
import struct
import zlib

import numpy as np
import pytest

from pqnet import cli, datagen, ingest


def run_cli(*argv):
    return cli.main(list(argv))


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli("gen-data", "--per-class", "3")  # missing --out
    assert exc.value.code == 2


def test_unknown_axis_rejected():
    with pytest.raises(SystemExit) as exc:
        run_cli("sweep", "--axis", "warp", "--grid", "0", "--data", "x")
    assert exc.value.code == 2


def test_gen_data_deterministic_crc(tmp_path, capsys):
    a, b = tmp_path / "a.pqwd", tmp_path / "b.pqwd"
    assert run_cli("gen-data", "--per-class", "4", "--seed", "3", "--out", str(a)) == 0
    assert run_cli("gen-data", "--per-class", "4", "--seed", "3", "--out", str(b)) == 0
    assert zlib.crc32(a.read_bytes()) == zlib.crc32(b.read_bytes())
    out = capsys.readouterr().out
    assert "min success probability" in out


def test_missing_dataset_reports_error(tmp_path, capsys):
    assert run_cli("train", "--data", str(tmp_path / "nope.pqwd")) == 1
    assert "not found" in capsys.readouterr().err


def test_train_eval_bench_cycle(tmp_path, capsys):
    data = tmp_path / "tiny.pqwd"
    run_cli("gen-data", "--per-class", "12", "--seed", "0", "--out", str(data))
    out_dir = tmp_path / "run"
    code = run_cli(
        "train", "--data", str(data), "--strategy", "s-mub", "--seeds", "0",
        "--epochs", "1", "--batch-size", "16", "--out-dir", str(out_dir), "--no-plot",
    )
    assert code == 0
    assert (out_dir / "metrics.csv").exists()
    ckpt = out_dir / "model_seed0.pqmd"
    assert ckpt.exists()
    header = (out_dir / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,seed,strategy,train_loss,test_accuracy"

    code = run_cli(
        "eval", "--data", str(data), "--checkpoint", str(ckpt),
        "--strategy", "s-mub", "--out-dir", str(out_dir),
    )
    assert code == 0
    report = json.loads((out_dir / "eval.json").read_text())
    assert 0.0 <= report["accuracy"] <= 1.0
    assert np.sum(report["confusion"]) == 96

    code = run_cli(
        "bench", "--data", str(data), "--repeat", "2", "--batch-size", "8",
        "--out-dir", str(out_dir), "--no-plot",
    )
    assert code == 0
    bench = json.loads((out_dir / "bench.json").read_text())
    assert bench["parameters"]["shared_kernel"] == 637
    assert bench["parameters"]["unshared_baseline"] == 2392
    assert bench["ratio"] > 1.0


def test_sweep_readout_tiny(tmp_path):
    data = tmp_path / "tiny.pqwd"
    run_cli("gen-data", "--per-class", "10", "--seed", "1", "--out", str(data))
    out_dir = tmp_path / "sweep"
    code = run_cli(
        "sweep", "--axis", "readout", "--grid", "0.0,0.5", "--data", str(data),
        "--strategy", "pauli-z", "--seeds", "0", "--epochs", "1",
        "--out-dir", str(out_dir), "--no-plot",
    )
    assert code == 0
    rows = (out_dir / "sweep_readout.csv").read_text().strip().splitlines()
    assert rows[0] == "noise_level,seed,accuracy"
    assert len(rows) == 3


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "pq.conf"
    conf.write_text("per-class = 5\nseed = 7\n# comment\n")
    out = tmp_path / "ds.pqwd"
    run_cli("--config", str(conf), "gen-data", "--out", str(out))
    assert len(datagen.load_dataset(out)) == 40  # per-class from file
    run_cli("--config", str(conf), "gen-data", "--per-class", "2", "--out", str(out))
    assert len(datagen.load_dataset(out)) == 16  # flag wins


def test_pq_data_dir_resolution(tmp_path, monkeypatch):
    data = tmp_path / "root" / "w.pqwd"
    data.parent.mkdir()
    run_cli("gen-data", "--per-class", "2", "--seed", "0", "--out", str(data))
    monkeypatch.setenv("PQ_DATA_DIR", str(tmp_path / "root"))
    assert cli.resolve_input("w.pqwd") == data
    with pytest.raises(FileNotFoundError):
        cli.resolve_input("missing.pqwd")


def test_ingest_mnist_end_to_end(tmp_path):
    rng = np.random.default_rng(5)
    imgs = rng.integers(1, 256, size=(40, 28, 28), dtype=np.uint8)
    labels = np.repeat(np.arange(4, dtype=np.uint8), 10)
    img_path = tmp_path / "train-images.gz"
    lab_path = tmp_path / "train-labels.gz"
    img_path.write_bytes(
        gzip.compress(
            struct.pack(">IIII", ingest.IMAGE_MAGIC, 40, 28, 28) + imgs.tobytes()
        )
    )
    lab_path.write_bytes(
        gzip.compress(struct.pack(">II", ingest.LABEL_MAGIC, 40) + labels.tobytes())
    )
    out = tmp_path / "mnist"
    code = run_cli(
        "ingest-mnist", "--images", str(img_path), "--labels", str(lab_path),
        "--classes", "0,1,2,3", "--per-class-train", "6", "--per-class-test", "2",
        "--seed", "0", "--out", str(out),
    )
    assert code == 0
    train = datagen.load_dataset(tmp_path / "mnist.train.pqwd")
    test = datagen.load_dataset(tmp_path / "mnist.test.pqwd")
    assert len(train) == 24 and len(test) == 8
    assert np.abs(np.linalg.norm(train.states, axis=1) - 1).max() < 1e-12


def test_plot_outputs_written(tmp_path):
    data = tmp_path / "tiny.pqwd"
    run_cli("gen-data", "--per-class", "8", "--seed", "0", "--out", str(data))
    out_dir = tmp_path / "plotrun"
    run_cli(
        "train", "--data", str(data), "--strategy", "pauli-z", "--seeds", "0",
        "--epochs", "1", "--batch-size", "16", "--out-dir", str(out_dir), "--plot",
    )
    assert (out_dir / "metrics.png").exists()
