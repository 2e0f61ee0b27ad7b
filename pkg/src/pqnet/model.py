"""The quanvolutional classifier and its training machinery.

Pipeline per batch of 8-qubit states: modulus reshape to a 16x16 grid,
non-overlapping 4x4 patches, amplitude encoding of all B*16 patches into
one 4-qubit state batch, a single run of the shared trainable kernel,
per-qubit measured features fused back into an 8x8 map, then a linear
head with log-softmax. The kernel is shared across patches, so the whole
convolution is one batched circuit execution; ``sequential_forward``
realizes the one-patch-at-a-time data flow for comparison benchmarks.

Gradients are assembled manually: the head is differentiated in closed
form and the kernel via the simulator's adjoint pass. Shot/readout
perturbations are treated as constants in the backward pass; the
deterministic (1-2p) readout scaling is kept.

Checkpoint format (little-endian): magic ``PQMD``, version u32, kernel
descriptor (op list), then the 637 float64 parameters (kernel angles,
head weights row-major, head bias), then CRC-32 of everything after the
magic.
"""
from __future__ import annotations

import csv
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import measure as measure_mod
from . import noise as noise_mod
from . import simcore
from .measure import ANALYTIC, MeasureConfig, MubSchedule, Strategy, axis_weights
from .noise import NoiseConfig, NoisyKernelRunner
from .simcore import Circuit, GateOp

KERNEL_QUBITS = 4
KERNEL_PARAMS = 117
GRID = 16
PATCH = 4
PATCHES_PER_SAMPLE = 16
FEATURES = 64
CLASSES = 8

CHECKPOINT_MAGIC = b"PQMD"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed (magic, version, size, or checksum)."""


def build_kernel() -> Circuit:
    """Shared 4-qubit kernel: nine blocks of per-qubit RZ,RX,RZ Euler
    triples plus one trainable CRX entangler each, the ring edge rotating
    block by block. 12 * 9 + 9 = 117 parameter slots and 9 two-qubit gates.

    The RZ-RX-RZ triple covers all of SU(2) per qubit, so nothing is lost
    against an RX-RY-RZ layer; keeping RY out matters for measurement-
    strategy comparisons: on the real-valued encoded patches, first-order
    parameter sensitivity of <Z> runs through <Y>-type commutators, which
    vanish, so a Z-only readout starts from a flat region while the MUB
    readouts (which include <Y>) do not."""
    ops, slot = [], 0
    for block in range(9):
        for kind in ("RZ", "RX", "RZ"):
            for q in range(KERNEL_QUBITS):
                ops.append(GateOp(kind, (q,), param_slot=slot))
                slot += 1
        ops.append(GateOp("CRX", (block % 4, (block + 1) % 4), param_slot=slot))
        slot += 1
    return Circuit(KERNEL_QUBITS, tuple(ops), slot)


@dataclass
class ModelState:
    kernel: Circuit
    theta: np.ndarray  # (117,)
    head_w: np.ndarray  # (8, 64)
    head_b: np.ndarray  # (8,)

    @property
    def parameter_count(self) -> int:
        return self.theta.size + self.head_w.size + self.head_b.size

    def copy(self) -> "ModelState":
        return ModelState(self.kernel, self.theta.copy(), self.head_w.copy(), self.head_b.copy())


def init_model(rng) -> ModelState:
    """Kernel angles uniform in (-pi/50, pi/50); head weights uniform in
    +-sqrt(6/(64+8)); bias zero. Draw order: kernel, then head."""
    kernel = build_kernel()
    theta = rng.uniform(-np.pi / 50, np.pi / 50, kernel.param_count)
    bound = np.sqrt(6.0 / (FEATURES + CLASSES))
    head_w = rng.uniform(-bound, bound, (CLASSES, FEATURES))
    return ModelState(kernel, theta, head_w, np.zeros(CLASSES))


def unshared_parameter_count() -> int:
    """Parameter budget of the baseline that gives every patch its own
    kernel copy instead of sharing one."""
    return PATCHES_PER_SAMPLE * KERNEL_PARAMS + CLASSES * FEATURES + CLASSES


#: Shot count used by the experiment pipeline unless overridden: expectation
#: values are estimated from a finite number of state copies, which is the
#: operational reading of the measurement model (ANALYTIC remains available
#: everywhere for exact expectations).
DEFAULT_SHOTS = 128


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.002
    epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float = 1e-4
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    measure: MeasureConfig = field(
        default_factory=lambda: MeasureConfig(shots=DEFAULT_SHOTS)
    )
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    test_fraction: float = 0.2
    gate_noise_trajectories: int = 32  # feature averaging at evaluation


# ---------------------------------------------------------------------------
# data reshaping


def complex_to_grid(states: np.ndarray) -> np.ndarray:
    """Real-part map C^256 -> R^{16x16}, row-major.

    The signed projection keeps relative-phase structure (as sign patterns)
    that the magnitude map would erase; inter-basis coherence of the input
    state is exactly what the X/Y-basis measurement strategies feed on.
    """
    arr = np.asarray(states)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != GRID * GRID:
        raise ValueError(f"expected {GRID * GRID} amplitudes, got {arr.shape[1]}")
    grids = arr.real.astype(float).reshape(-1, GRID, GRID)
    return grids[0] if single else grids


@dataclass
class PatchBatch:
    """Flattened 4x4 patches, row order sample-major then patch-row (c)
    then patch-column (r); provenance columns are (sample, c, r)."""

    rows: np.ndarray  # (B*16, 16)
    provenance: np.ndarray  # (B*16, 3) int32


def grid_patches(grids: np.ndarray) -> PatchBatch:
    g = np.asarray(grids, dtype=float)
    if g.ndim == 2:
        g = g[None]
    b = g.shape[0]
    if g.shape[1:] != (GRID, GRID):
        raise ValueError(f"expected {GRID}x{GRID} grids, got {g.shape[1:]}")
    tiles = g.reshape(b, PATCH, PATCH, PATCH, PATCH)  # (B, c, u, r, v)
    rows = tiles.transpose(0, 1, 3, 2, 4).reshape(b * PATCHES_PER_SAMPLE, PATCH * PATCH)
    sample = np.repeat(np.arange(b, dtype=np.int32), PATCHES_PER_SAMPLE)
    c = np.tile(np.repeat(np.arange(PATCH, dtype=np.int32), PATCH), b)
    r = np.tile(np.arange(PATCH, dtype=np.int32), b * PATCH)
    return PatchBatch(rows, np.stack([sample, c, r], axis=1))


def fuse_features(per_patch: np.ndarray, provenance: np.ndarray, batch_size: int) -> np.ndarray:
    """Scatter per-patch qubit features into the 8x8 fused map by (c, r):
    patch (c, r) fills rows [2c, 2c+2) x cols [2r, 2r+2), features in
    row-major 2x2 order; output flattened to (B, 64)."""
    fused = np.zeros((batch_size, 2 * PATCH, 2 * PATCH))
    s, c, r = provenance[:, 0], provenance[:, 1], provenance[:, 2]
    for q in range(KERNEL_QUBITS):
        fused[s, 2 * c + q // 2, 2 * r + q % 2] = per_patch[:, q]
    return fused.reshape(batch_size, FEATURES)


def _scatter_cotangents(d_features: np.ndarray, provenance: np.ndarray) -> np.ndarray:
    """Inverse of fuse_features for gradients: gather (B,64) cotangents
    back to per-patch-row, per-qubit layout."""
    d_map = d_features.reshape(-1, 2 * PATCH, 2 * PATCH)
    s, c, r = provenance[:, 0], provenance[:, 1], provenance[:, 2]
    cot = np.empty((provenance.shape[0], KERNEL_QUBITS))
    for q in range(KERNEL_QUBITS):
        cot[:, q] = d_map[s, 2 * c + q // 2, 2 * r + q % 2]
    return cot


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class _ForwardCache:
    encoded: np.ndarray
    kernel_out: np.ndarray
    tape: simcore.TrajectoryTape | None
    provenance: np.ndarray
    axes: tuple
    readout_scale: float
    features: np.ndarray
    logp: np.ndarray


def quanv_forward(
    patches: PatchBatch,
    model: ModelState,
    measure_cfg: MeasureConfig,
    noise_cfg: NoiseConfig = noise_mod.NOISELESS,
    schedule: MubSchedule | None = None,
    rng=None,
    gate_noise_trajectories: int = 1,
    _cache: list | None = None,
) -> np.ndarray:
    """Batched quanvolution: encode all patches, one shared-kernel run,
    measure, fuse to (B, 64).

    With gate noise and ANALYTIC shots, ``gate_noise_trajectories`` > 1
    averages the per-axis expectations over that many trajectories (the
    infinite-shot estimate of the noise channel's expectation values).
    """
    try:
        encoded = simcore.amplitude_encode(patches.rows)
    except simcore.EncodingError as exc:
        bad = patches.provenance[np.flatnonzero(np.linalg.norm(patches.rows, axis=1) == 0)]
        where = [f"sample {s} patch ({c},{r})" for s, c, r in bad[:8]]
        raise simcore.EncodingError(f"all-zero patches: {', '.join(where)}") from exc
    batch_size = int(patches.provenance[:, 0].max()) + 1 if len(patches.rows) else 0
    axes = axis_weights(measure_cfg, schedule)
    scale = 1.0 - 2.0 * measure_cfg.p_measure
    tape = None
    if noise_cfg.has_gate_noise:
        if gate_noise_trajectories > 1:
            runner = NoisyKernelRunner(model.kernel, model.theta, noise_cfg)
            mus = None
            for _ in range(gate_noise_trajectories):
                out = runner.run(encoded, rng)
                m = np.stack(
                    [simcore.pauli_expectations(out, [(a, q) for q in range(KERNEL_QUBITS)])
                     for a, _w in axes]
                )
                mus = m if mus is None else mus + m
            mus /= gate_noise_trajectories
            kernel_out = out  # last trajectory, for cache/debug only
        else:
            kernel_out, tape = noise_mod.apply_kernel_gate_noise(
                encoded, model.kernel, model.theta, noise_cfg, rng
            )
            mus = np.stack(
                [simcore.pauli_expectations(kernel_out, [(a, q) for q in range(KERNEL_QUBITS)])
                 for a, _w in axes]
            )
    else:
        kernel_out = simcore.run_circuit(encoded, model.kernel, model.theta)
        mus = np.stack(
            [simcore.pauli_expectations(kernel_out, [(a, q) for q in range(KERNEL_QUBITS)])
             for a, _w in axes]
        )
    per_patch = None
    for (axis, weight), mu_axis in zip(axes, mus):
        noisy = measure_mod.apply_readout_noise(
            mu_axis, measure_cfg.p_measure, measure_cfg.shots, rng
        )
        per_patch = weight * noisy if per_patch is None else per_patch + weight * noisy
    features = fuse_features(per_patch, patches.provenance, batch_size)
    if _cache is not None:
        _cache.append(
            _ForwardCache(encoded, kernel_out, tape, patches.provenance, axes, scale, features, None)
        )
    return features


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(
    states: np.ndarray,
    model: ModelState,
    measure_cfg: MeasureConfig,
    noise_cfg: NoiseConfig = noise_mod.NOISELESS,
    schedule: MubSchedule | None = None,
    rng=None,
    gate_noise_trajectories: int = 1,
    _cache: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Full pipeline for a batch of 8-qubit states: (logits, log-probs)."""
    grids = complex_to_grid(states)
    return forward_from_grids(
        grids, model, measure_cfg, noise_cfg, schedule, rng,
        gate_noise_trajectories, _cache,
    )


def forward_from_grids(
    grids: np.ndarray,
    model: ModelState,
    measure_cfg: MeasureConfig,
    noise_cfg: NoiseConfig = noise_mod.NOISELESS,
    schedule: MubSchedule | None = None,
    rng=None,
    gate_noise_trajectories: int = 1,
    _cache: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pipeline entry for data already shaped as 16x16 grids (classical images)."""
    patches = grid_patches(grids)
    feats = quanv_forward(
        patches, model, measure_cfg, noise_cfg, schedule, rng,
        gate_noise_trajectories, _cache,
    )
    logits = feats @ model.head_w.T + model.head_b
    logp = _log_softmax(logits)
    if _cache is not None:
        _cache[-1].logp = logp
    return logits, logp


def loss_value(logp: np.ndarray, labels: np.ndarray, model: ModelState, l2_lambda: float) -> float:
    """Mean cross-entropy plus l2_lambda * ||all trainable parameters||^2."""
    ce = -float(np.mean(logp[np.arange(len(labels)), labels]))
    reg = l2_lambda * (
        float(np.sum(model.theta**2))
        + float(np.sum(model.head_w**2))
        + float(np.sum(model.head_b**2))
    )
    return ce + reg


# ---------------------------------------------------------------------------
# backward pass


@dataclass
class Gradients:
    theta: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray


def loss_and_gradients(
    states_or_grids: np.ndarray,
    labels: np.ndarray,
    model: ModelState,
    measure_cfg: MeasureConfig,
    noise_cfg: NoiseConfig = noise_mod.NOISELESS,
    schedule: MubSchedule | None = None,
    rng=None,
    l2_lambda: float = 0.0,
    from_grids: bool = False,
) -> tuple[float, Gradients]:
    """One forward/backward pass. Sampled shot/readout deviations are
    straight-through constants; the (1-2p) readout scaling and the axis
    weights stay in the chain rule."""
    cache_box: list = []
    fwd = forward_from_grids if from_grids else forward
    _, logp = fwd(
        states_or_grids, model, measure_cfg, noise_cfg, schedule, rng, 1, cache_box
    )
    cache = cache_box[0]
    b = logp.shape[0]
    labels = np.asarray(labels)
    loss = loss_value(logp, labels, model, l2_lambda)
    d_logits = np.exp(logp)
    d_logits[np.arange(b), labels] -= 1.0
    d_logits /= b
    g_w = d_logits.T @ cache.features + 2.0 * l2_lambda * model.head_w
    g_b = d_logits.sum(axis=0) + 2.0 * l2_lambda * model.head_b
    d_feats = d_logits @ model.head_w
    cot = _scatter_cotangents(d_feats, cache.provenance)  # (rows, 4)
    observables = []
    upstream_cols = []
    for axis, weight in cache.axes:
        for q in range(KERNEL_QUBITS):
            observables.append((axis, q))
            upstream_cols.append(weight * cache.readout_scale * cot[:, q])
    upstream = np.stack(upstream_cols, axis=1)
    g_theta = simcore.adjoint_gradient(
        cache.encoded, model.kernel, model.theta, observables, upstream,
        tape=cache.tape,
        final_state=cache.kernel_out if cache.tape is None else None,
    )
    g_theta += 2.0 * l2_lambda * model.theta
    return loss, Gradients(g_theta, g_w, g_b)


class Adam:
    """Textbook Adam with bias correction, operating on named arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, p in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * (g * g)
            p -= self.lr * (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + self.eps)


# ---------------------------------------------------------------------------
# training and evaluation


@dataclass
class EpochMetrics:
    epoch: int
    seed: int
    strategy: str
    train_loss: float
    test_accuracy: float


def evaluate(
    model: ModelState,
    states: np.ndarray,
    labels: np.ndarray,
    measure_cfg: MeasureConfig,
    noise_cfg: NoiseConfig = noise_mod.NOISELESS,
    rng=None,
    gate_noise_trajectories: int = 1,
    chunk: int = 256,
    from_grids: bool = False,
) -> tuple[float, np.ndarray]:
    """Accuracy and 8x8 confusion matrix (rows true, cols predicted).
    Argmax ties break toward the lowest class index."""
    labels = np.asarray(labels)
    confusion = np.zeros((CLASSES, CLASSES), dtype=np.int64)
    fwd = forward_from_grids if from_grids else forward
    for start in range(0, len(labels), chunk):
        part = slice(start, start + chunk)
        logits, _ = fwd(
            states[part], model, measure_cfg, noise_cfg, None, rng,
            gate_noise_trajectories,
        )
        pred = np.argmax(logits, axis=1)
        np.add.at(confusion, (labels[part], pred), 1)
    accuracy = float(np.trace(confusion)) / max(len(labels), 1)
    return accuracy, confusion


def train(
    train_states: np.ndarray,
    train_labels: np.ndarray,
    test_states: np.ndarray,
    test_labels: np.ndarray,
    model: ModelState,
    config: TrainConfig,
    seed: int,
    rng_train,
    rng_measure,
    from_grids: bool = False,
    progress=None,
) -> tuple[ModelState, list[EpochMetrics]]:
    """Adam over shuffled mini-batches; the A_MUB schedule advances once
    per optimizer step. Noise in ``config.noise`` is expected to be baked
    into the data already (data axes) except gate noise, which applies
    inside the kernel run."""
    model = model.copy()
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    schedule = MubSchedule() if config.measure.strategy is Strategy.A_MUB else None
    metrics: list[EpochMetrics] = []
    n = len(train_labels)
    for epoch in range(config.epochs):
        order = rng_train.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(
                train_states[idx], train_labels[idx], model,
                config.measure, config.noise, schedule, rng_measure,
                config.l2_lambda, from_grids,
            )
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch} step {start // config.batch_size}"
                )
            opt.step(
                {"theta": model.theta, "head_w": model.head_w, "head_b": model.head_b},
                {"theta": grads.theta, "head_w": grads.head_w, "head_b": grads.head_b},
            )
            if schedule is not None:
                schedule.advance()
            losses.append(loss)
        acc, _ = evaluate(
            model, test_states, test_labels, config.measure, config.noise,
            rng_measure, config.gate_noise_trajectories, from_grids=from_grids,
        )
        metrics.append(
            EpochMetrics(epoch, seed, config.measure.strategy.value, float(np.mean(losses)), acc)
        )
        if progress is not None:
            progress(metrics[-1])
    return model, metrics


@dataclass
class ExperimentResult:
    model: ModelState
    metrics: list[EpochMetrics]
    accuracy: float
    confusion: np.ndarray
    test_states: np.ndarray
    test_labels: np.ndarray


def run_experiment(
    ds,
    config: TrainConfig,
    seed: int,
    progress=None,
) -> ExperimentResult:
    """Seeded end-to-end run: split, init, data-noise augmentation, train.

    Substreams spawn from SeedSequence(seed) in the order split, init,
    augment, train, measure, so every stochastic stage is independently
    reproducible.
    """
    from . import datagen  # local import to avoid a cycle at module load

    root = np.random.SeedSequence(seed)
    k_split, k_init, k_aug, k_train, k_meas = root.spawn(5)
    train_ds, test_ds = datagen.split_dataset(
        ds, np.random.default_rng(k_split), config.test_fraction
    )
    model = init_model(np.random.default_rng(k_init))
    rng_aug = np.random.default_rng(k_aug)
    train_states, test_states = train_ds.states, test_ds.states
    if config.noise.data_rx_theta != 0.0:
        train_states = noise_mod.apply_data_rx(train_states, config.noise.data_rx_theta)
        test_states = noise_mod.apply_data_rx(test_states, config.noise.data_rx_theta)
    if config.noise.data_depol_p > 0.0:
        train_states = noise_mod.apply_data_depolarizing(
            train_states, config.noise.data_depol_p, rng_aug
        )
        test_states = noise_mod.apply_data_depolarizing(
            test_states, config.noise.data_depol_p, rng_aug
        )
    model, metrics = train(
        train_states, train_ds.labels, test_states, test_ds.labels,
        model, config, seed,
        np.random.default_rng(k_train), np.random.default_rng(k_meas),
        progress=progress,
    )
    acc, confusion = evaluate(
        model, test_states, test_ds.labels, config.measure, config.noise,
        np.random.default_rng(k_meas), config.gate_noise_trajectories,
    )
    return ExperimentResult(model, metrics, acc, confusion, test_states, test_ds.labels)


# ---------------------------------------------------------------------------
# sequential baseline and throughput


def sequential_forward(
    states: np.ndarray,
    model: ModelState,
    measure_cfg: MeasureConfig,
) -> np.ndarray:
    """Same math as ``forward`` but one kernel invocation per patch (16 per
    sample), the conventional quanvolution data flow; exists for the
    throughput comparison."""
    grids = complex_to_grid(states)
    logits = np.empty((grids.shape[0], CLASSES))
    for i in range(grids.shape[0]):
        patches = grid_patches(grids[i : i + 1])
        per_patch = np.empty((PATCHES_PER_SAMPLE, KERNEL_QUBITS))
        for j in range(PATCHES_PER_SAMPLE):
            encoded = simcore.amplitude_encode(patches.rows[j])
            out = simcore.run_circuit(encoded, model.kernel, model.theta)
            per_patch[j] = measure_mod.measure_features(out, measure_cfg)[0]
        feats = fuse_features(per_patch, patches.provenance, 1)
        logits[i] = feats[0] @ model.head_w.T + model.head_b
    return logits


def bench_throughput(
    model: ModelState,
    states: np.ndarray,
    mode: str,
    measure_cfg: MeasureConfig | None = None,
    batch_size: int = 32,
    repeats: int = 5,
    min_duration: float = 0.4,
) -> dict:
    """Warm fixed-duration throughput measurement, samples/second.

    Each repetition processes whole batches until ``min_duration`` elapses;
    reports mean and standard deviation across repetitions.
    """
    if mode not in ("batched", "sequential"):
        raise ValueError(f"mode must be 'batched' or 'sequential', got {mode}")
    cfg = measure_cfg or MeasureConfig()

    def process(batch):
        if mode == "batched":
            forward(batch, model, cfg)
        else:
            sequential_forward(batch, model, cfg)

    process(states[:batch_size])  # warm-up
    rates = []
    for _ in range(repeats):
        done = 0
        start = time.perf_counter()
        while time.perf_counter() - start < min_duration:
            lo = done % max(len(states) - batch_size, 1)
            process(states[lo : lo + batch_size])
            done += batch_size
        rates.append(done / (time.perf_counter() - start))
    return {
        "mode": mode,
        "samples_per_second_mean": float(np.mean(rates)),
        "samples_per_second_std": float(np.std(rates)),
        "runs": [float(r) for r in rates],
        "batch_size": batch_size,
    }


# ---------------------------------------------------------------------------
# checkpoint and metrics persistence

_KIND_CODES = {k: i for i, k in enumerate(sorted(simcore.GATE_KINDS))}
_KIND_NAMES = {i: k for k, i in _KIND_CODES.items()}
_OP_STRUCT = struct.Struct("<BBBBid")
_CKPT_HEADER = struct.Struct("<4sIII")  # magic, version, qubit_count, op_count


def save_checkpoint(model: ModelState, path) -> None:
    body = bytearray()
    body += _CKPT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.kernel.qubit_count, len(model.kernel.ops)
    )
    for op in model.kernel.ops:
        q1 = op.qubits[1] if len(op.qubits) > 1 else 255
        slot = -1 if op.param_slot is None else op.param_slot
        angle = np.nan if op.fixed_angle is None else op.fixed_angle
        body += _OP_STRUCT.pack(
            _KIND_CODES[op.kind], len(op.qubits), op.qubits[0], q1, slot, angle
        )
    params = np.concatenate([model.theta, model.head_w.ravel(), model.head_b])
    body += struct.pack("<I", params.size)
    body += params.astype("<f8").tobytes()
    crc = zlib.crc32(bytes(body[4:])) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKPT_HEADER.size + 8:
        raise CheckpointError("file truncated")
    magic, version, qubit_count, op_count = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[4:-4]) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError("checksum mismatch: file corrupted")
    offset = _CKPT_HEADER.size
    ops = []
    for _ in range(op_count):
        code, nq, q0, q1, slot, angle = _OP_STRUCT.unpack_from(raw, offset)
        offset += _OP_STRUCT.size
        ops.append(
            GateOp(
                _KIND_NAMES[code],
                (q0,) if nq == 1 else (q0, q1),
                param_slot=None if slot < 0 else slot,
                fixed_angle=None if np.isnan(angle) else angle,
            )
        )
    (n_params,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    params = np.frombuffer(raw, dtype="<f8", count=n_params, offset=offset).copy()
    slot_count = 1 + max(
        (op.param_slot for op in ops if op.param_slot is not None), default=-1
    )
    kernel = Circuit(qubit_count, tuple(ops), slot_count)
    expected = slot_count + CLASSES * FEATURES + CLASSES
    if n_params != expected:
        raise CheckpointError(f"parameter block holds {n_params}, expected {expected}")
    theta = params[:slot_count]
    head_w = params[slot_count : slot_count + CLASSES * FEATURES].reshape(CLASSES, FEATURES)
    head_b = params[slot_count + CLASSES * FEATURES :]
    return ModelState(kernel, theta, head_w, head_b)


METRICS_COLUMNS = ("epoch", "seed", "strategy", "train_loss", "test_accuracy")


def write_metrics_csv(rows: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in rows:
            writer.writerow([m.epoch, m.seed, m.strategy, f"{m.train_loss:.6f}", f"{m.test_accuracy:.6f}"])
