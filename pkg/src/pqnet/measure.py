"""Measurement strategies over kernel output qubits.

Three strategies produce one feature per qubit:

* PAULI_Z: plain <Z>.
* S_MUB: the mean of <X>, <Y>, <Z> measured simultaneously.
* A_MUB: during training one basis per optimizer step, cycling Z, X, Y;
  at inference (no schedule) the mean of all three axes, so the feature
  width matches what the head saw during training.

Finite-shot estimates use the Gaussian approximation N(mu, (1-mu^2)/S),
clamped to [-1, 1]; readout bit-flip noise folds in as a (1-2p) scaling of
the mean. Everything is pure given an explicit rng stream.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import simcore

#: Sentinel for exact (infinite-shot) expectations.
ANALYTIC = None

AXIS_ORDER = ("Z", "X", "Y")


class Strategy(Enum):
    PAULI_Z = "pauli-z"
    S_MUB = "s-mub"
    A_MUB = "a-mub"


@dataclass(frozen=True)
class MeasureConfig:
    strategy: Strategy = Strategy.PAULI_Z
    shots: int | None = ANALYTIC
    p_measure: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.shots is not None and self.shots < 1:
            raise ValueError(f"shots must be positive or ANALYTIC, got {self.shots}")
        if not 0.0 <= self.p_measure <= 1.0:
            raise ValueError(f"p_measure must lie in [0,1], got {self.p_measure}")


@dataclass
class MubSchedule:
    """Cyclic basis selector for A_MUB training; advanced once per step
    by the (single-threaded) training loop."""

    step: int = 0

    @property
    def current_axis(self) -> str:
        return AXIS_ORDER[self.step % 3]

    def advance(self) -> None:
        self.step += 1


def axis_weights(cfg: MeasureConfig, schedule: MubSchedule | None):
    """(axis, weight) terms whose weighted sum forms the per-qubit feature."""
    if cfg.strategy is Strategy.PAULI_Z:
        return (("Z", 1.0),)
    if cfg.strategy is Strategy.A_MUB and schedule is not None:
        return ((schedule.current_axis, 1.0),)
    return (("Z", 1 / 3), ("X", 1 / 3), ("Y", 1 / 3))


def estimate_expectation(mu, shots: int | None, rng=None):
    """Finite-shot estimate of an expectation value (vectorized over mu).

    ANALYTIC returns mu unchanged and consumes no randomness; otherwise
    draws from N(mu, (1-mu^2)/S) and clamps to the physical range.
    """
    if shots is ANALYTIC:
        return mu
    if shots < 1:
        raise ValueError(f"shots must be positive, got {shots}")
    if rng is None:
        raise ValueError("finite-shot estimation needs an rng stream")
    mu = np.clip(np.asarray(mu, dtype=float), -1.0, 1.0)
    sigma = np.sqrt((1.0 - mu * mu) / shots)
    return np.clip(mu + sigma * rng.standard_normal(mu.shape), -1.0, 1.0)


def apply_readout_noise(mu_hat, p_measure: float, shots: int | None = ANALYTIC, rng=None):
    """Symmetric bit-flip readout noise on estimated expectations.

    Flipping each +/-1 outcome with probability p scales the mean by
    (1-2p); in finite-shot mode the flips fold into the sampling itself:
    the draw is N((1-2p) mu, (1 - ((1-2p) mu)^2)/S).
    """
    if not 0.0 <= p_measure <= 1.0:
        raise ValueError(f"p_measure must lie in [0,1], got {p_measure}")
    scaled = (1.0 - 2.0 * p_measure) * np.asarray(mu_hat, dtype=float)
    return estimate_expectation(scaled, shots, rng)


def measure_features(
    batch: np.ndarray,
    cfg: MeasureConfig,
    schedule: MubSchedule | None = None,
    rng=None,
) -> np.ndarray:
    """Per-qubit features for a batch of kernel output states, (rows, n).

    Shot and readout noise apply to every measured expectation before any
    axis averaging. Pass ``schedule`` only in the A_MUB training loop;
    without it A_MUB measures like S_MUB (three-axis mean).
    """
    amps = np.atleast_2d(np.asarray(batch))
    n = int(np.log2(amps.shape[1]))
    if cfg.shots is not ANALYTIC and rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    feats = None
    for axis, weight in axis_weights(cfg, schedule):
        mus = simcore.pauli_expectations(amps, [(axis, q) for q in range(n)])
        noisy = apply_readout_noise(mus, cfg.p_measure, cfg.shots, rng)
        feats = weight * noisy if feats is None else feats + weight * noisy
    return feats


# ---------------------------------------------------------------------------
# single-qubit MUB reference data

# Unnormalized basis vectors with entries in {0, +-1, +-i}: overlap ratios
# computed from these are exact in floating point, e.g. |<e|f>|^2 = 1/2
# lands on the binary value 0.5 with zero rounding error.
_MUB_UNNORMALIZED = {
    "Z": (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)),
    "X": (np.array([1, 1], dtype=complex), np.array([1, -1], dtype=complex)),
    "Y": (np.array([1, 1j], dtype=complex), np.array([1, -1j], dtype=complex)),
}

MUB_STATES = {
    axis: tuple(v / np.linalg.norm(v) for v in pair)
    for axis, pair in _MUB_UNNORMALIZED.items()
}


def mub_overlap_squared(axis_a: str, idx_a: int, axis_b: str, idx_b: int) -> float:
    """|<e|f>|^2 between MUB basis states, exact for these integer lattices."""
    u = _MUB_UNNORMALIZED[axis_a][idx_a]
    v = _MUB_UNNORMALIZED[axis_b][idx_b]
    z = np.vdot(u, v)
    num = z.real * z.real + z.imag * z.imag  # exact: small integers
    den = np.vdot(u, u).real * np.vdot(v, v).real
    return float(num / den)


def reconstruct_density_matrix(x: float, y: float, z: float) -> np.ndarray:
    """Single-qubit rho = (I + x X + y Y + z Z) / 2 from three expectations."""
    return 0.5 * (
        np.eye(2, dtype=complex)
        + x * simcore.PAULI_MATRICES["X"]
        + y * simcore.PAULI_MATRICES["Y"]
        + z * simcore.PAULI_MATRICES["Z"]
    )
