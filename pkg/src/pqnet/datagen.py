"""Labeled 8-qubit state families and dataset persistence.

Every sample lives near the single-excitation manifold: amplitudes alpha_i
on the eight basis states |10000000>, |01000000>, ..., |00000001> (qubit 0
is the most significant bit), plus a small family-specific residual left
by a shallow entangling circuit. The residual is the fingerprint a
classifier keys on: families share the target manifold but differ in
their alpha magnitude profile, phase correlations, and leak layout.

A final tiny RY on every qubit spreads a trace of amplitude over the whole
computational basis so that every 4x4 patch of the derived 16x16 grid is
nonzero and can be amplitude-encoded.

File format (little-endian): magic ``PQWD``, version u32, qubit_count u32,
sample_count u64, then per sample a label byte and 2**n (re, im) float64
pairs, then CRC-32 of the sample payload.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import simcore
from .simcore import Circuit, GateOp

MAGIC = b"PQWD"
FORMAT_VERSION = 1
QUBITS = 8
DIM = 256

#: Basis indices of |10000000>, |01000000>, ..., |00000001| in alpha order.
EXCITATION_INDICES = np.array([1 << (QUBITS - 1 - i) for i in range(QUBITS)])

SUCCESS_FLOOR = 0.95
RETRY_BUDGET = 100


class GenerationError(RuntimeError):
    """A family failed to satisfy the success-probability floor."""


class FormatError(ValueError):
    """Dataset file is malformed (magic, version, size, or checksum)."""


def prepare_w_like(alpha: np.ndarray) -> np.ndarray:
    """State with amplitude alpha_i on the i-th single-excitation basis
    state and zero elsewhere. Rows of a 2-D alpha give a batch."""
    a = np.asarray(alpha, dtype=np.complex128)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != QUBITS:
        raise ValueError(f"alpha must have {QUBITS} entries, got {a.shape[1]}")
    norms = np.sum(np.abs(a) ** 2, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("alpha is not normalized to 1 within 1e-12")
    out = np.zeros((a.shape[0], DIM), dtype=np.complex128)
    out[:, EXCITATION_INDICES] = a
    return out[0] if single else out


def success_probability(state: np.ndarray) -> np.ndarray | float:
    """Probability mass on the eight single-excitation basis states."""
    amps = np.atleast_2d(np.asarray(state))
    p = np.sum(np.abs(amps[:, EXCITATION_INDICES]) ** 2, axis=1)
    return float(p[0]) if np.asarray(state).ndim == 1 else p


@dataclass(frozen=True)
class GeneratorFamily:
    """One stand-in generator: an alpha distribution plus a fixed shallow
    entangling layout whose slot angles jitter around family means."""

    class_id: int
    magnitude_profile: np.ndarray  # (8,) relative weights before normalization
    magnitude_jitter: float
    phase_slope: float  # phase advance per excitation position
    phase_jitter: float
    template: Circuit
    slot_means: np.ndarray
    slot_spreads: np.ndarray

    def sample_state(self, rng) -> np.ndarray:
        """Draw one state; draw order is magnitudes, phases, slot angles."""
        mags = np.abs(
            self.magnitude_profile + self.magnitude_jitter * rng.standard_normal(QUBITS)
        )
        phases = self.phase_slope * np.arange(QUBITS) + self.phase_jitter * rng.standard_normal(QUBITS)
        alpha = mags * np.exp(1j * phases)
        alpha /= np.linalg.norm(alpha)
        theta = self.slot_means + self.slot_spreads * rng.standard_normal(len(self.slot_means))
        state = prepare_w_like(alpha)
        return simcore.run_circuit(state, self.template, theta)


# One entangling layout shared by all families: four CRX leaks on disjoint
# qubit pairs, each followed by a CRZ coder on the same pair. The pairs are
# chosen so that (a) every parent excitation cell and its leak cell land in
# the same 4x4 grid patch at cell distance one (their product is a local
# X-basis statistic of that patch), and (b) no leak cell contains another
# gate's control, so leaks never chain and no second-order interference
# exposes the code to squared-amplitude (Z-basis) statistics. Every leak
# angle is shared across families; the CRZ phases, the only family-
# dependent quantities, take values +-pi/3, which leaves each cell's
# squared real part class-independent while flipping the SIGN of the
# parent x leak real-part product with the class bit (the CRX leak's -i
# factor turns the phase code into that sign code).
_SHARED_LAYOUT = (
    ("CRX", 0, 6, None),  # code bit 0: cells (8,0)/(8,2), patch (2,0)
    ("CRZ", 0, 6, 0),
    ("CRX", 1, 7, None),  # code bit 1: cells (4,0)/(4,1), patch (1,0)
    ("CRZ", 1, 7, 1),
    ("CRX", 4, 3, None),  # code bit 2: cells (0,8)/(1,8), patch (0,2)
    ("CRZ", 4, 3, 2),
    ("CRX", 5, 2, None),  # parity bit: cells (0,4)/(2,4), patch (0,1)
    ("CRZ", 5, 2, 3),
)

_LEAK_SLOTS = (0, 2, 4, 6)
_CRZ_SLOTS = (1, 3, 5, 7)

#: Tiny uniform RY spreading support over all 256 basis states.
SUPPORT_SPREAD_ANGLE = 0.03


def _shared_template() -> Circuit:
    ops = []
    for slot, (kind, a, b, _site) in enumerate(_SHARED_LAYOUT):
        ops.append(GateOp(kind, (a, b), param_slot=slot))
    for q in range(QUBITS):
        ops.append(GateOp("RY", (q,), fixed_angle=SUPPORT_SPREAD_ANGLE))
    return Circuit(QUBITS, tuple(ops), len(_SHARED_LAYOUT))


LEAK_ANGLE = 0.30  # leak strength, shared by all families
CODE_PHASE = np.pi / 4  # coder magnitude; the class bit picks the sign


def _code_bits(cid: int) -> tuple[int, ...]:
    """(bit0, bit1, bit2, parity) of the class id as +-1 signs; a distance-2
    code over the four interference sites."""
    bits = [(cid >> k) & 1 for k in range(3)]
    parity = (bits[0] + bits[1] + bits[2]) % 2
    return tuple(2 * b - 1 for b in (*bits, parity))


def _family_slot_means(cid: int) -> np.ndarray:
    """Angle vector encoding one family: every leak angle is shared, only
    the signs of the four coder phases depend on the class id."""
    means = np.empty(len(_SHARED_LAYOUT))
    means[list(_LEAK_SLOTS)] = LEAK_ANGLE
    signs = _code_bits(cid)
    for site, slot in enumerate(_CRZ_SLOTS):
        means[slot] = CODE_PHASE * signs[site]
    return means


def default_families() -> list[GeneratorFamily]:
    """The eight built-in stand-in generator families.

    Alpha magnitudes are a flat profile with per-sample jitter and random
    phases for every family (pure nuisance); class identity is carried
    entirely by the entangler angle vector.
    """
    template = _shared_template()
    families = []
    for cid in range(8):
        families.append(
            GeneratorFamily(
                class_id=cid,
                magnitude_profile=np.ones(QUBITS),
                magnitude_jitter=0.25,
                phase_slope=0.0,
                phase_jitter=0.08,
                template=template,
                slot_means=_family_slot_means(cid),
                slot_spreads=np.full(len(_SHARED_LAYOUT), 0.03),
            )
        )
    return families


@dataclass
class Dataset:
    states: np.ndarray  # (N, 256) complex128
    labels: np.ndarray  # (N,) uint8
    seed: int = 0
    version: int = FORMAT_VERSION

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def per_class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=8)


def generate_dataset(families, per_class: int, seed: int) -> Dataset:
    """per_class samples from each family, resampling (bounded) until every
    sample clears the success-probability floor. Deterministic in ``seed``
    via per-sample SeedSequence substreams keyed (seed, class, index)."""
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    states = np.empty((len(families) * per_class, DIM), dtype=np.complex128)
    labels = np.empty(len(families) * per_class, dtype=np.uint8)
    row = 0
    for fam in families:
        for idx in range(per_class):
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(fam.class_id, idx))
            )
            for _attempt in range(RETRY_BUDGET):
                state = fam.sample_state(rng)
                if success_probability(state) >= SUCCESS_FLOOR:
                    break
            else:
                raise GenerationError(
                    f"family {fam.class_id} missed the {SUCCESS_FLOOR} success floor "
                    f"{RETRY_BUDGET} times for sample {idx}"
                )
            states[row] = state
            labels[row] = fam.class_id
            row += 1
    return Dataset(states=states, labels=labels, seed=seed)


def split_dataset(ds: Dataset, rng, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; shuffle happens per class so the split
    is balanced exactly, before any noise augmentation."""
    train_idx, test_idx = [], []
    for cls in np.unique(ds.labels):
        members = np.flatnonzero(ds.labels == cls)
        perm = rng.permutation(members)
        n_test = int(round(len(members) * test_fraction))
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return (
        Dataset(ds.states[train_idx], ds.labels[train_idx], ds.seed, ds.version),
        Dataset(ds.states[test_idx], ds.labels[test_idx], ds.seed, ds.version),
    )


_SAMPLE_DTYPE = np.dtype([("label", "u1"), ("amps", "<f8", (DIM, 2))])
_HEADER = struct.Struct("<4sIIQ")


def save_dataset(ds: Dataset, path) -> None:
    records = np.empty(len(ds), dtype=_SAMPLE_DTYPE)
    records["label"] = ds.labels
    records["amps"][:, :, 0] = ds.states.real
    records["amps"][:, :, 1] = ds.states.imag
    payload = records.tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, QUBITS, len(ds)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 4:
        raise FormatError("file truncated: missing header or checksum")
    magic, version, qubits, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if qubits != QUBITS:
        raise FormatError(f"expected {QUBITS}-qubit samples, got {qubits}")
    body = raw[_HEADER.size : -4]
    if len(body) != count * _SAMPLE_DTYPE.itemsize:
        raise FormatError(
            f"payload holds {len(body)} bytes, expected {count * _SAMPLE_DTYPE.itemsize}"
        )
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError("checksum mismatch: file corrupted")
    records = np.frombuffer(body, dtype=_SAMPLE_DTYPE)
    states = records["amps"][:, :, 0] + 1j * records["amps"][:, :, 1]
    labels = records["label"].copy()
    if len(labels) and labels.max() > 7:
        raise FormatError(f"label {labels.max()} out of range 0..7")
    return Dataset(states=states.astype(np.complex128), labels=labels)
