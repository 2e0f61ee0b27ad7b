"""Trajectory-sampled noise channels on pure states.

Channels are unraveled as random Pauli insertions on statevectors instead
of density-matrix evolution, which keeps the 8-qubit data path at
dimension 256. Averaging observables over trajectories converges to the
closed-form channel output at the usual Monte-Carlo rate (tests pin this
against a small density-matrix oracle).

Randomness contract: every operation takes an explicit seeded generator,
draws a fixed number of values in row-major (row, qubit) order followed by
circuit order for gate sites, and consumes nothing when its noise strength
is zero. Identical seeds therefore give bit-identical trajectories, and
concurrent use just needs per-task substreams (numpy SeedSequence spawns).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simcore
from .simcore import Circuit, TrajectoryTape


@dataclass(frozen=True)
class NoiseConfig:
    """All channel strengths; defaults are the noiseless configuration."""

    data_rx_theta: float = 0.0
    data_depol_p: float = 0.0
    gate_1q_theta: float = 0.0
    gate_2q_p: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("data_depol_p", "gate_2q_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {p}")

    @property
    def has_gate_noise(self) -> bool:
        return self.gate_2q_p > 0.0 or self.gate_1q_theta != 0.0

    @property
    def has_data_noise(self) -> bool:
        return self.data_rx_theta != 0.0 or self.data_depol_p > 0.0


NOISELESS = NoiseConfig()


def apply_data_rx(batch: np.ndarray, theta: float) -> np.ndarray:
    """Coherent RX(theta) on every qubit of every row (deterministic)."""
    if theta == 0.0:
        return batch
    amps = np.atleast_2d(np.asarray(batch, dtype=np.complex128))
    n = int(np.log2(amps.shape[1]))
    out = amps @ simcore.uniform_rx_matrix_t(n, theta)
    return out[0] if np.asarray(batch).ndim == 1 else out


def apply_data_depolarizing(batch: np.ndarray, p: float, rng) -> np.ndarray:
    """One depolarizing trajectory per row: per (row, qubit) independently,
    do nothing with probability 1-p, else apply X, Y or Z with p/3 each.

    Draws two (rows, n) blocks (site uniforms, then Pauli picks), both in
    row-major order; p = 0 returns the input without consuming the rng.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"depolarizing probability must lie in [0,1], got {p}")
    if p == 0.0:
        return batch
    amps = np.atleast_2d(np.asarray(batch, dtype=np.complex128)).copy()
    rows, dim = amps.shape
    n = int(np.log2(dim))
    hit = rng.random((rows, n)) < p
    picks = rng.integers(0, 3, size=(rows, n))
    for q in range(n):
        for code, kind in enumerate(("X", "Y", "Z")):
            sel = np.flatnonzero(hit[:, q] & (picks[:, q] == code))
            if sel.size:
                simcore._pauli_rows_inplace(amps, n, q, kind, sel)
    return amps[0] if np.asarray(batch).ndim == 1 else amps


#: Pauli-pair insertion probability realizing the trace-preserving two-qubit
#: depolarizing channel rho -> (1-p) rho + p I/4: mixing toward I/4 equals
#: inserting a uniform non-identity pair with probability 15p/16.
def _twirl_insert_probability(p_gate: float) -> float:
    return 15.0 * p_gate / 16.0


def draw_gate_noise_tape(
    circuit: Circuit, cfg: NoiseConfig, rows: int, rng
) -> TrajectoryTape:
    """Sample one trajectory of the two-qubit depolarizing channel (its
    Pauli-twirled unraveling) plus the coherent tail RX, as a replayable
    tape.

    After every two-qubit op, each row independently receives one of the 15
    non-identity Pauli pairs, uniformly, with probability 15 p_gate / 16,
    so that the trajectory average is exactly (1-p) rho + p I/4 at that
    site. Draws happen in circuit order, one uniform block then one pick
    block per site; p_gate = 0 consumes nothing.
    """
    tape = TrajectoryTape(tail_rx_theta=cfg.gate_1q_theta)
    if cfg.gate_2q_p == 0.0:
        return tape
    q_ins = _twirl_insert_probability(cfg.gate_2q_p)
    for i, op in enumerate(circuit.ops):
        if op.kind not in simcore.TWO_QUBIT_KINDS:
            continue
        sel = np.flatnonzero(rng.random(rows) < q_ins)
        if sel.size == 0:
            continue
        pair = rng.integers(1, 16, size=sel.size)  # 1..15, never (I,I)
        tape.inserts[i] = (sel, pair // 4, pair % 4)
    return tape


def apply_kernel_gate_noise(
    batch: np.ndarray,
    circuit: Circuit,
    params,
    cfg: NoiseConfig,
    rng,
) -> tuple[np.ndarray, TrajectoryTape]:
    """Run the circuit with gate noise interleaved (one trajectory).

    Two-qubit depolarizing insertions follow every two-qubit op; after the
    full circuit an RX(gate_1q_theta) hits every qubit. Returns the output
    batch and the realized tape (needed to differentiate through the run).
    With p_gate = 0 and theta = 0 this is exactly ``run_circuit`` and the
    rng is untouched.
    """
    amps = np.atleast_2d(np.asarray(batch, dtype=np.complex128))
    if not cfg.has_gate_noise:
        return simcore.run_circuit(amps, circuit, params), TrajectoryTape()
    tape = draw_gate_noise_tape(circuit, cfg, amps.shape[0], rng)
    return simcore.run_circuit(amps, circuit, params, tape), tape


class NoisyKernelRunner:
    """Reusable noisy executor for one (circuit, params) pair.

    Segment matrices are composed once and shared across trajectories, so
    averaging features over many trajectories (the ANALYTIC estimate of
    the noise channel's expectation values) costs one matmul per segment
    plus sparse per-row Pauli fixups.
    """

    def __init__(self, circuit: Circuit, params, cfg: NoiseConfig):
        self.circuit = circuit
        self.cfg = cfg
        self.segments = simcore.segment_matrices(circuit, params)
        self.tail_t = (
            simcore.uniform_rx_matrix_t(circuit.qubit_count, cfg.gate_1q_theta)
            if cfg.gate_1q_theta != 0.0
            else None
        )

    def run(self, batch: np.ndarray, rng) -> np.ndarray:
        amps = np.atleast_2d(np.asarray(batch, dtype=np.complex128))
        rows = amps.shape[0]
        n = self.circuit.qubit_count
        p = _twirl_insert_probability(self.cfg.gate_2q_p)
        out = amps
        for mat_t, qubits, _op_idx in self.segments:
            out = out @ mat_t
            if qubits is None or p == 0.0:
                continue
            sel = np.flatnonzero(rng.random(rows) < p)
            if sel.size == 0:
                continue
            pair = rng.integers(1, 16, size=sel.size)
            simcore._replay_inserts(out, n, qubits, (sel, pair // 4, pair % 4))
        if self.tail_t is not None:
            out = out @ self.tail_t
        return out
