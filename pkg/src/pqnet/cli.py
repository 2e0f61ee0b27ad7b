"""Command-line orchestration: dataset generation, training, evaluation,
noise sweeps, throughput benchmarks, and MNIST ingestion.

Commands emit CSV (metrics, sweeps) and JSON (benchmarks, evaluations)
artifacts, rendering a matplotlib figure next to each delimited output
unless ``--no-plot`` is given. Option precedence is flags > config file
(``key = value`` lines) > built-in defaults; relative input paths also
resolve against ``$PQ_DATA_DIR``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import datagen, ingest, model as model_mod, plots
from .measure import ANALYTIC, MeasureConfig, Strategy
from .model import ModelState, TrainConfig
from .noise import NoiseConfig

SWEEP_AXES = ("rx-theta", "depol", "gate-2q", "gate-both", "shots", "readout")

#: Axes whose protocol retrains on noised data; the rest evaluate a model
#: trained on clean data at each sweep point.
RETRAIN_AXES = ("rx-theta", "depol")


def resolve_input(path: str) -> Path:
    """Use the path as given if it exists, else look under $PQ_DATA_DIR."""
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get("PQ_DATA_DIR")
    if root:
        candidate = Path(root) / path
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{path} not found (also tried $PQ_DATA_DIR)")


def _parse_shots(text: str) -> int | None:
    if text.lower() in ("analytic", "inf", "exact"):
        return ANALYTIC
    return int(text)


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip() != "")


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line is not 'key = value': {line!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("_", "-")] = val.strip()
    return values


def _merged(args: argparse.Namespace, file_cfg: dict[str, str], key: str, default, cast):
    """flags > config file > default."""
    flag_val = getattr(args, key.replace("-", "_"), None)
    if flag_val is not None:
        return flag_val
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _measure_config(args, file_cfg, seed: int) -> MeasureConfig:
    return MeasureConfig(
        strategy=Strategy(_merged(args, file_cfg, "strategy", "a-mub", str)),
        shots=_merged(args, file_cfg, "shots", model_mod.DEFAULT_SHOTS, _parse_shots),
        p_measure=_merged(args, file_cfg, "p-measure", 0.0, float),
        rng_seed=seed,
    )


def _noise_config(args, file_cfg, seed: int) -> NoiseConfig:
    return NoiseConfig(
        data_rx_theta=_merged(args, file_cfg, "rx-theta", 0.0, float),
        data_depol_p=_merged(args, file_cfg, "depol", 0.0, float),
        gate_1q_theta=_merged(args, file_cfg, "gate-1q-theta", 0.0, float),
        gate_2q_p=_merged(args, file_cfg, "gate-2q-p", 0.0, float),
        rng_seed=seed,
    )


def _train_config(args, file_cfg, seed: int) -> TrainConfig:
    return TrainConfig(
        batch_size=_merged(args, file_cfg, "batch-size", 32, int),
        learning_rate=_merged(args, file_cfg, "lr", 0.002, float),
        epochs=_merged(args, file_cfg, "epochs", 40, int),
        l2_lambda=_merged(args, file_cfg, "l2", 1e-4, float),
        measure=_measure_config(args, file_cfg, seed),
        noise=_noise_config(args, file_cfg, seed),
    )


def _out_dir(args, file_cfg) -> Path:
    out = Path(_merged(args, file_cfg, "out-dir", ".", str))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, file_cfg) -> int:
    per_class = _merged(args, file_cfg, "per-class", 2000, int)
    seed = _merged(args, file_cfg, "seed", 0, int)
    ds = datagen.generate_dataset(datagen.default_families(), per_class, seed)
    datagen.save_dataset(ds, args.out)
    probs = datagen.success_probability(ds.states)
    for cls in range(8):
        p_min = probs[ds.labels == cls].min()
        print(f"class {cls}: {per_class} samples, min success probability {p_min:.4f}")
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def cmd_train(args, file_cfg) -> int:
    ds = datagen.load_dataset(resolve_input(args.data))
    seeds = _merged(args, file_cfg, "seeds", (0, 1, 2, 3, 4), _parse_seeds)
    out = _out_dir(args, file_cfg)
    all_metrics, finals = [], []
    for seed in seeds:
        config = _train_config(args, file_cfg, seed)
        result = model_mod.run_experiment(ds, config, seed)
        all_metrics.extend(result.metrics)
        finals.append(result.accuracy)
        ckpt = out / f"model_seed{seed}.pqmd"
        model_mod.save_checkpoint(result.model, ckpt)
        print(f"seed {seed}: test accuracy {result.accuracy:.4f} -> {ckpt}")
    csv_path = out / "metrics.csv"
    model_mod.write_metrics_csv(all_metrics, csv_path)
    print(f"summary: accuracy {np.mean(finals):.4f} +- {np.std(finals):.4f} over {len(seeds)} seeds")
    print(f"metrics -> {csv_path}")
    if _merged(args, file_cfg, "plot", True, bool):
        fig = plots.plot_training_metrics(csv_path, out / "metrics.png")
        print(f"figure -> {fig}")
    return 0


def cmd_eval(args, file_cfg) -> int:
    ds = datagen.load_dataset(resolve_input(args.data))
    model = model_mod.load_checkpoint(resolve_input(args.checkpoint))
    seed = _merged(args, file_cfg, "seed", 0, int)
    measure_cfg = _measure_config(args, file_cfg, seed)
    noise_cfg = _noise_config(args, file_cfg, seed)
    rng = np.random.default_rng(seed)
    acc, confusion = model_mod.evaluate(
        model, ds.states, ds.labels, measure_cfg, noise_cfg, rng,
        gate_noise_trajectories=32,
    )
    print(f"accuracy {acc:.4f} on {len(ds)} samples")
    print("confusion (rows true, cols predicted):")
    for row in confusion:
        print("  " + " ".join(f"{v:5d}" for v in row))
    out = _out_dir(args, file_cfg)
    report = {"accuracy": acc, "samples": len(ds), "confusion": confusion.tolist()}
    path = out / "eval.json"
    path.write_text(json.dumps(report, indent=2))
    print(f"report -> {path}")
    return 0


def sweep_axis(
    ds,
    axis: str,
    grid,
    strategy: Strategy,
    seeds,
    epochs: int = 40,
    gate_noise_trajectories: int = 32,
    progress=None,
):
    """Run one noise sweep; returns rows of (noise_level, seed, accuracy).

    rx-theta and depol retrain on noised data at every level; the gate,
    shot, and readout axes train once per seed on clean data and evaluate
    the fixed model at each level. gate-both couples the two gate channels
    as p_gate = v, theta = pi * v.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    rows = []
    if axis in RETRAIN_AXES:
        for level in grid:
            noise = (
                NoiseConfig(data_rx_theta=float(level))
                if axis == "rx-theta"
                else NoiseConfig(data_depol_p=float(level))
            )
            for seed in seeds:
                config = TrainConfig(
                    epochs=epochs,
                    measure=MeasureConfig(strategy=strategy, shots=model_mod.DEFAULT_SHOTS),
                    noise=noise,
                )
                result = model_mod.run_experiment(ds, config, seed)
                rows.append({"noise_level": float(level), "seed": seed, "accuracy": result.accuracy})
                if progress:
                    progress(rows[-1])
        return rows
    for seed in seeds:
        config = TrainConfig(
            epochs=epochs,
            measure=MeasureConfig(strategy=strategy, shots=model_mod.DEFAULT_SHOTS),
        )
        result = model_mod.run_experiment(ds, config, seed)
        for i, level in enumerate(grid):
            measure_cfg = MeasureConfig(strategy=strategy)
            noise_cfg = NoiseConfig()
            n_traj = 1
            if axis == "gate-2q":
                # gate-noise points evaluate with exact expectations
                noise_cfg = NoiseConfig(gate_2q_p=float(level))
                n_traj = gate_noise_trajectories
            elif axis == "gate-both":
                noise_cfg = NoiseConfig(
                    gate_2q_p=float(level), gate_1q_theta=float(level) * np.pi
                )
                n_traj = gate_noise_trajectories
            elif axis == "shots":
                measure_cfg = MeasureConfig(strategy=strategy, shots=_parse_shots(str(level)))
            elif axis == "readout":
                measure_cfg = MeasureConfig(
                    strategy=strategy, p_measure=float(level),
                    shots=model_mod.DEFAULT_SHOTS,
                )
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9000, i)))
            acc, _ = model_mod.evaluate(
                result.model, result.test_states, result.test_labels,
                measure_cfg, noise_cfg, rng, gate_noise_trajectories=n_traj,
            )
            level_val = -1.0 if level in ("analytic", ANALYTIC) else float(level)
            rows.append({"noise_level": level_val, "seed": seed, "accuracy": acc})
            if progress:
                progress(rows[-1])
    return rows


def cmd_sweep(args, file_cfg) -> int:
    ds = datagen.load_dataset(resolve_input(args.data))
    grid = [g.strip() for g in args.grid.split(",") if g.strip()]
    if args.axis != "shots":
        grid = [float(g) for g in grid]
    seeds = _merged(args, file_cfg, "seeds", (0, 1, 2, 3, 4), _parse_seeds)
    strategy = Strategy(_merged(args, file_cfg, "strategy", "a-mub", str))
    epochs = _merged(args, file_cfg, "epochs", 40, int)
    rows = sweep_axis(
        ds, args.axis, grid, strategy, seeds, epochs,
        progress=lambda r: print(
            f"  level {r['noise_level']}: seed {r['seed']} accuracy {r['accuracy']:.4f}"
        ),
    )
    out = _out_dir(args, file_cfg)
    csv_path = out / f"sweep_{args.axis}.csv"
    with open(csv_path, "w") as fh:
        fh.write("noise_level,seed,accuracy\n")
        for r in rows:
            fh.write(f"{r['noise_level']},{r['seed']},{r['accuracy']:.6f}\n")
    print(f"sweep -> {csv_path}")
    if _merged(args, file_cfg, "plot", True, bool):
        fig = plots.plot_sweep(csv_path, out / f"sweep_{args.axis}.png", xlabel=args.axis)
        print(f"figure -> {fig}")
    return 0


def cmd_bench(args, file_cfg) -> int:
    ds = datagen.load_dataset(resolve_input(args.data))
    seed = _merged(args, file_cfg, "seed", 0, int)
    model = model_mod.init_model(np.random.default_rng(seed))
    batch_size = _merged(args, file_cfg, "batch-size", 32, int)
    repeats = _merged(args, file_cfg, "repeat", 5, int)
    modes = [args.mode] if args.mode else ["sequential", "batched"]
    report = {
        "parameters": {
            "shared_kernel": model.parameter_count,
            "unshared_baseline": model_mod.unshared_parameter_count(),
        },
        "batch_size": batch_size,
    }
    for mode in modes:
        report[mode] = model_mod.bench_throughput(
            model, ds.states, mode, batch_size=batch_size, repeats=repeats
        )
        m = report[mode]
        print(
            f"{mode}: {m['samples_per_second_mean']:.1f} +- {m['samples_per_second_std']:.1f} samples/s"
        )
    if "batched" in report and "sequential" in report:
        report["ratio"] = (
            report["batched"]["samples_per_second_mean"]
            / report["sequential"]["samples_per_second_mean"]
        )
        print(f"batched/sequential ratio: {report['ratio']:.1f}x")
    out = _out_dir(args, file_cfg)
    path = out / "bench.json"
    path.write_text(json.dumps(report, indent=2))
    print(f"report -> {path}")
    if _merged(args, file_cfg, "plot", True, bool) and len(modes) == 2:
        fig = plots.plot_bench(report, out / "bench.png")
        print(f"figure -> {fig}")
    return 0


def cmd_ingest_mnist(args, file_cfg) -> int:
    images = resolve_input(args.images)
    labels = resolve_input(args.labels)
    image_set = ingest.load_idx_pair(images, labels)
    classes = [int(c) for c in _merged(args, file_cfg, "classes", "0,1,2,3", str).split(",")]
    seed = _merged(args, file_cfg, "seed", 0, int)
    train_n = _merged(args, file_cfg, "per-class-train", 1000, int)
    test_n = _merged(args, file_cfg, "per-class-test", 250, int)
    rng = np.random.default_rng(seed)
    train_set, test_set = ingest.select_balanced(image_set, classes, train_n, test_n, rng)
    out_prefix = Path(args.out)
    for tag, subset in (("train", train_set), ("test", test_set)):
        ds = ingest.image_set_to_dataset(subset, classes)
        ds.seed = seed
        path = out_prefix.with_name(out_prefix.name + f".{tag}.pqwd")
        datagen.save_dataset(ds, path)
        print(f"{tag}: {len(ds)} samples -> {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pqnet",
        description="Quanvolutional classifier for quantum state generator fingerprinting.",
    )
    parser.add_argument("--config", help="key = value config file (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the labeled 8-family dataset")
    p.add_argument("--per-class", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train over a seed list and write checkpoints + metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--seeds", type=_parse_seeds)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--shots", type=_parse_shots)
    p.add_argument("--p-measure", type=float)
    p.add_argument("--rx-theta", type=float)
    p.add_argument("--depol", type=float)
    p.add_argument("--gate-2q-p", type=float)
    p.add_argument("--gate-1q-theta", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--plot", action="store_true", default=None)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--shots", type=_parse_shots)
    p.add_argument("--p-measure", type=float)
    p.add_argument("--rx-theta", type=float)
    p.add_argument("--depol", type=float)
    p.add_argument("--gate-2q-p", type=float)
    p.add_argument("--gate-1q-theta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="accuracy versus one noise axis")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--grid", required=True, help="comma-separated levels")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--seeds", type=_parse_seeds)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--plot", action="store_true", default=None)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="batched vs sequential throughput")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["batched", "sequential"])
    p.add_argument("--repeat", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--plot", action="store_true", default=None)
    p.add_argument("--no-plot", dest="plot", action="store_false")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ingest-mnist", help="convert IDX images to a grid dataset")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--classes")
    p.add_argument("--per-class-train", type=int)
    p.add_argument("--per-class-test", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_mnist)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_cfg = read_config_file(args.config) if args.config else {}
    try:
        return args.func(args, file_cfg)
    except (
        FileNotFoundError,
        ValueError,
        RuntimeError,
        datagen.FormatError,
        model_mod.CheckpointError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
