"""Simulator unit tests: gate semantics, invariants, and gradient oracles."""
import numpy as np
import pytest

from pqnet import simcore as sc
from pqnet.simcore import Circuit, GateOp

INV_SQRT2 = 1 / np.sqrt(2)


def random_states(rng, rows, n):
    v = rng.standard_normal((rows, 1 << n)) + 1j * rng.standard_normal((rows, 1 << n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_circuit(rng, n, n_params):
    ops, slot = [], 0
    while slot < n_params:
        r = rng.random()
        if r < 0.6 or n < 2:
            kind = rng.choice(["RX", "RY", "RZ"])
            ops.append(GateOp(kind, (int(rng.integers(n)),), param_slot=slot))
            slot += 1
        elif r < 0.85:
            kind = rng.choice(["CRX", "CRY", "CRZ"])
            q = rng.permutation(n)[:2]
            ops.append(GateOp(kind, (int(q[0]), int(q[1])), param_slot=slot))
            slot += 1
        else:
            q = rng.permutation(n)[:2]
            ops.append(GateOp("CNOT", (int(q[0]), int(q[1]))))
        if rng.random() < 0.3:
            kind = rng.choice(["H", "SX", "X", "Y", "Z"])
            ops.append(GateOp(kind, (int(rng.integers(n)),)))
    return Circuit(n, tuple(ops), n_params)


# --- single gate semantics ---


def test_hadamard_on_zero():
    out = sc.apply_gate(sc.zero_state(1), GateOp("H", (0,)))
    assert np.allclose(out[0], [INV_SQRT2, INV_SQRT2], atol=1e-15)


def test_rx_pi_on_zero_gives_minus_i_one():
    out = sc.apply_gate(sc.zero_state(1), GateOp("RX", (0,), fixed_angle=np.pi))
    assert np.allclose(out[0], [0, -1j], atol=1e-15)


def test_cnot_flips_target_when_control_set():
    # |10> -> |11>; qubit 0 is the most significant bit
    state = np.zeros(4, dtype=complex)
    state[0b10] = 1.0
    out = sc.apply_gate(state, GateOp("CNOT", (0, 1)))
    expected = np.zeros(4, dtype=complex)
    expected[0b11] = 1.0
    assert np.allclose(out, expected)


def test_sx_squares_to_x_exactly():
    eye = np.eye(2, dtype=complex)
    once = sc.apply_gate(eye, GateOp("SX", (0,)))
    twice = sc.apply_gate(once, GateOp("SX", (0,)))
    # rows are (X e_k)^T, i.e. the transpose of X, which is X itself
    assert np.array_equal(twice, sc.PAULI_MATRICES["X"])


def test_bell_pair_construction():
    circ = Circuit(2, (GateOp("H", (0,)), GateOp("CNOT", (0, 1))))
    out = sc.run_circuit(sc.zero_state(2), circ)
    assert np.allclose(out[0], [INV_SQRT2, 0, 0, INV_SQRT2], atol=1e-15)


def test_empty_circuit_is_identity():
    rng = np.random.default_rng(0)
    v = random_states(rng, 3, 3)
    out = sc.run_circuit(v, Circuit(3, ()))
    assert np.array_equal(out, v)


def test_gate_errors():
    with pytest.raises(ValueError):
        GateOp("RX", (0,))  # no angle source
    with pytest.raises(ValueError):
        GateOp("RX", (0,), param_slot=0, fixed_angle=1.0)  # both
    with pytest.raises(ValueError):
        GateOp("H", (0,), fixed_angle=1.0)  # angle on a fixed gate
    with pytest.raises(ValueError):
        GateOp("CNOT", (1, 1))  # duplicate qubits
    with pytest.raises(ValueError):
        sc.apply_gate(sc.zero_state(1), GateOp("RX", (0,), param_slot=0))  # missing param
    with pytest.raises(ValueError):
        sc.apply_gate(sc.zero_state(1), GateOp("X", (1,)))  # qubit out of range
    with pytest.raises(ValueError):
        Circuit(2, (GateOp("RX", (0,), param_slot=1),), 1)  # slot gap


def test_run_circuit_param_length_checked():
    circ = Circuit(1, (GateOp("RX", (0,), param_slot=0),), 1)
    with pytest.raises(ValueError):
        sc.run_circuit(sc.zero_state(1), circ, [0.1, 0.2])


# --- invariants ---


def test_norm_preserved_over_random_circuits():
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(1, 5))
        circ = random_circuit(rng, n, int(rng.integers(1, 12)))
        v = random_states(rng, 4, n)
        out = sc.run_circuit(v, circ, rng.uniform(-np.pi, np.pi, circ.param_count))
        assert np.abs(np.linalg.norm(out, axis=1) - 1).max() < 1e-10


def test_gate_then_inverse_returns_input():
    rng = np.random.default_rng(2)
    v = random_states(rng, 3, 3)
    for kind in ("RX", "RY", "RZ", "CRX", "CRY", "CRZ"):
        qubits = (1,) if not kind.startswith("C") else (1, 2)
        fwd = GateOp(kind, qubits, fixed_angle=0.813)
        bwd = GateOp(kind, qubits, fixed_angle=-0.813)
        out = sc.apply_gate(sc.apply_gate(v, fwd), bwd)
        assert np.abs(out - v).max() < 1e-10
    for kind in ("H", "X", "Y", "Z", "CNOT"):
        qubits = (0, 2) if kind == "CNOT" else (0,)
        op = GateOp(kind, qubits)
        out = sc.apply_gate(sc.apply_gate(v, op), op)
        assert np.abs(out - v).max() < 1e-10


def test_batch_equals_per_row_execution():
    rng = np.random.default_rng(3)
    for rows in (3, 64):  # small uses the gate loop, large the matrix path
        n = 4
        circ = random_circuit(rng, n, 9)
        params = rng.uniform(-np.pi, np.pi, 9)
        v = random_states(rng, rows, n)
        batched = sc.run_circuit(v, circ, params)
        looped = np.vstack([sc.run_circuit(v[i], circ, params) for i in range(rows)])
        assert np.abs(batched - looped).max() < 1e-12


# --- expectations ---


def test_pauli_expectation_eigenstates():
    zero = np.array([1, 0], dtype=complex)
    plus = np.array([INV_SQRT2, INV_SQRT2], dtype=complex)
    right = np.array([INV_SQRT2, 1j * INV_SQRT2])
    assert sc.pauli_expectation(zero, "Z", 0) == pytest.approx(1.0, abs=1e-15)
    assert sc.pauli_expectation(plus, "X", 0) == pytest.approx(1.0, abs=1e-15)
    assert sc.pauli_expectation(plus, "Z", 0) == pytest.approx(0.0, abs=1e-15)
    assert sc.pauli_expectation(right, "Y", 0) == pytest.approx(1.0, abs=1e-15)


def test_pauli_expectations_stay_in_range():
    rng = np.random.default_rng(4)
    v = random_states(rng, 50, 4)
    for axis in "XYZ":
        for q in range(4):
            e = sc.pauli_expectation(v, axis, q)
            assert np.all(e <= 1 + 1e-12) and np.all(e >= -1 - 1e-12)


def test_pauli_expectation_matches_dense_matrix():
    rng = np.random.default_rng(5)
    v = random_states(rng, 6, 3)
    eye = np.eye(2)
    for axis in "XYZ":
        for q in range(3):
            mats = [sc.PAULI_MATRICES[axis] if k == q else eye for k in range(3)]
            dense = np.kron(np.kron(mats[0], mats[1]), mats[2])
            expected = np.einsum("ri,ij,rj->r", v.conj(), dense, v).real
            assert np.abs(sc.pauli_expectation(v, axis, q) - expected).max() < 1e-12


# --- amplitude encoding ---


def test_encode_basis_row():
    row = np.zeros(16)
    row[0] = 1.0
    out = sc.amplitude_encode(row)
    assert np.allclose(out, np.eye(16)[0])


def test_encode_uniform_row():
    out = sc.amplitude_encode(np.ones((1, 16)))
    assert np.allclose(out, np.full((1, 16), 0.25))


def test_encode_three_four_five():
    row = np.zeros(16)
    row[0], row[1] = 3.0, 4.0
    out = sc.amplitude_encode(row)
    assert out[0] == pytest.approx(0.6) and out[1] == pytest.approx(0.8)


def test_encode_rejects_zero_rows():
    rows = np.ones((3, 16))
    rows[1] = 0.0
    with pytest.raises(sc.EncodingError, match="1"):
        sc.amplitude_encode(rows)


# --- adjoint gradients ---


def test_rx_gradient_analytic():
    circ = Circuit(1, (GateOp("RX", (0,), param_slot=0),), 1)
    for theta in (0.0, np.pi / 2, 1.234):
        g = sc.adjoint_gradient(
            sc.zero_state(1), circ, [theta], [("Z", 0)], np.ones((1, 1))
        )
        assert g[0] == pytest.approx(-np.sin(theta), abs=1e-12)


def _finite_difference(v, circ, params, obs, up, eps=1e-5):
    def val(p):
        out = sc.run_circuit(v, circ, p)
        return sum(
            np.sum(up[:, k] * sc.pauli_expectation(out, a, q))
            for k, (a, q) in enumerate(obs)
        )

    fd = np.zeros(circ.param_count)
    for j in range(circ.param_count):
        dp = np.zeros(circ.param_count)
        dp[j] = eps
        fd[j] = (val(params + dp) - val(params - dp)) / (2 * eps)
    return fd


def test_gradient_matches_finite_differences_100_random_triples():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        n_params = int(rng.integers(1, 9))
        circ = random_circuit(rng, n, n_params)
        params = rng.uniform(-np.pi, np.pi, n_params)
        v = random_states(rng, 3, n)
        obs = [("Z", 0), ("X", n - 1), ("Y", int(rng.integers(n)))]
        up = rng.standard_normal((3, 3))
        g = sc.adjoint_gradient(v, circ, params, obs, up)
        fd = _finite_difference(v, circ, params, obs, up)
        assert np.linalg.norm(g - fd) < 1e-4 * max(np.linalg.norm(fd), 1e-3)


def test_matrix_and_state_adjoints_agree():
    rng = np.random.default_rng(7)
    for _ in range(10)	:
        n = int(rng.integers(1, 5))
        circ = random_circuit(rng, n, 7)
        params = rng.uniform(-np.pi, np.pi, 7)
        v = random_states(rng, 48, n)
        obs = [("Z", 0), ("Y", n - 1)]
        up = rng.standard_normal((48, 2))
        g_m = sc._adjoint_matrix(v, circ, params, obs, up, None)
        g_s = sc._adjoint_states(v, circ, params, obs, up, None, None)
        assert np.abs(g_m - g_s).max() < 1e-10


def test_gradient_through_trajectory_tape():
    # inserted Paulis are parameter-free but must be rolled back correctly
    rng = np.random.default_rng(8)
    ops = (
        GateOp("RY", (0,), param_slot=0),
        GateOp("CNOT", (0, 1)),
        GateOp("RX", (1,), param_slot=1),
        GateOp("CRY", (1, 0), param_slot=2),
    )
    circ = Circuit(2, ops, 3)
    params = rng.uniform(-1, 1, 3)
    v = random_states(rng, 5, 2)
    tape = sc.TrajectoryTape(
        inserts={
            1: (np.array([0, 3]), np.array([1, 3]), np.array([2, 0])),
            3: (np.array([2]), np.array([0]), np.array([2])),
        },
        tail_rx_theta=0.37,
    )
    obs = [("Z", 0), ("Z", 1)]
    up = rng.standard_normal((5, 2))
    g = sc.adjoint_gradient(v, circ, params, obs, up, tape=tape)

    def val(p):
        out = sc.run_circuit(v, circ, p, tape=tape)
        return sum(
            np.sum(up[:, k] * sc.pauli_expectation(out, a, q))
            for k, (a, q) in enumerate(obs)
        )

    eps = 1e-6
    for j in range(3):
        dp = np.zeros(3)
        dp[j] = eps
        fd = (val(params + dp) - val(params - dp)) / (2 * eps)
        assert g[j] == pytest.approx(fd, abs=1e-6)


def test_upstream_shape_mismatch_raises():
    circ = Circuit(1, (GateOp("RX", (0,), param_slot=0),), 1)
    with pytest.raises(ValueError):
        sc.adjoint_gradient(sc.zero_state(1), circ, [0.3], [("Z", 0)], np.ones((2, 1)))


def test_tape_inserts_must_follow_two_qubit_ops():
    circ = Circuit(2, (GateOp("H", (0,)), GateOp("CNOT", (0, 1))))
    bad = sc.TrajectoryTape(inserts={0: (np.array([0]), np.array([1]), np.array([1]))})
    with pytest.raises(ValueError):
        sc.run_circuit(sc.zero_state(2), circ, tape=bad)
