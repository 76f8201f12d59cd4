"""State algebra: preparation, gates, measurement, partial trace."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqkd.qcore import (
    CNOT,
    HADAMARD,
    MAX_QUBITS,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    SWAP,
    Basis,
    DensityMatrix,
    NotUnitaryError,
    QubitCapExceeded,
    StateBatch,
    StateVector,
    apply_unitary,
    measure,
    outcome_probabilities,
    partial_trace,
    prepare,
    project,
    tensor,
    trace_distance,
)

S = 1 / math.sqrt(2)


def random_state(seed, n):
    g = np.random.default_rng(seed)
    v = g.normal(size=1 << n) + 1j * g.normal(size=1 << n)
    return StateVector(v / np.linalg.norm(v))


class TestPrepare:
    @pytest.mark.parametrize(
        "basis, bit, amps",
        [
            (Basis.Z, 0, [1, 0]),
            (Basis.Z, 1, [0, 1]),
            (Basis.X, 0, [S, S]),
            (Basis.X, 1, [S, -S]),
        ],
    )
    def test_basis_states(self, basis, bit, amps):
        np.testing.assert_allclose(prepare(basis, bit).amplitudes, amps)

    def test_rejects_bad_bit(self):
        with pytest.raises(ValueError):
            prepare(Basis.Z, 2)

    def test_basis_parse(self):
        assert Basis.parse("z") is Basis.Z
        assert Basis.parse("X") is Basis.X
        with pytest.raises(ValueError):
            Basis.parse("y")

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            StateVector(np.array([1.0, 1.0]))


class TestTensorAndGates:
    def test_tensor_places_first_factor_on_qubit_zero(self):
        psi = tensor(prepare(Basis.Z, 1), prepare(Basis.Z, 0))
        np.testing.assert_allclose(psi.amplitudes, [0, 0, 1, 0])

    def test_cnot_makes_bell_state(self):
        psi = tensor(prepare(Basis.X, 0), prepare(Basis.Z, 0))
        bell = apply_unitary(psi, CNOT, [0, 1])
        np.testing.assert_allclose(bell.amplitudes, [S, 0, 0, S], atol=1e-12)

    def test_reversed_targets(self):
        psi = tensor(prepare(Basis.Z, 0), prepare(Basis.Z, 1))
        out = apply_unitary(psi, CNOT, [1, 0])
        np.testing.assert_allclose(out.amplitudes, [0, 0, 0, 1])

    def test_swap(self):
        psi = tensor(prepare(Basis.Z, 1), prepare(Basis.X, 0))
        out = apply_unitary(psi, SWAP, [0, 1])
        assert out.allclose(tensor(prepare(Basis.X, 0), prepare(Basis.Z, 1)))

    def test_non_unitary_rejected(self):
        with pytest.raises(NotUnitaryError):
            apply_unitary(prepare(Basis.Z, 0), np.array([[1, 1], [0, 1]]), [0])

    def test_qubit_cap(self):
        big = StateBatch(np.eye(1, 1 << MAX_QUBITS, dtype=complex))
        with pytest.raises(QubitCapExceeded):
            big.append_zero()

    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_gates_preserve_norm(self, seed, n):
        psi = random_state(seed, n)
        for q in range(n):
            psi = apply_unitary(psi, HADAMARD, [q])
        assert np.linalg.norm(psi.amplitudes) == pytest.approx(1.0)

    @given(st.integers(0, 2**32 - 1))
    def test_batch_matches_explicit_kron(self, seed):
        # Gate on qubit 1 of 3 equals kron(I, U, I) on the full vector.
        psi = random_state(seed, 3)
        u = PAULI_Y
        expected = np.kron(np.kron(np.eye(2), u), np.eye(2)) @ psi.amplitudes
        np.testing.assert_allclose(apply_unitary(psi, u, [1]).amplitudes, expected, atol=1e-12)

    def test_per_row_operators_and_mask(self):
        batch = StateBatch.prepare([0, 0, 0], [0, 0, 0])
        ops = np.stack([PAULI_X, PAULI_Z, PAULI_X])
        out = batch.apply(ops, [0], where=np.array([True, True, False]))
        np.testing.assert_allclose(out.amplitudes, [[0, 1], [1, 0], [1, 0]])


class TestMeasurement:
    def test_born_probabilities(self):
        assert outcome_probabilities(prepare(Basis.X, 0), 0, Basis.Z) == pytest.approx((0.5, 0.5))
        assert outcome_probabilities(prepare(Basis.X, 1), 0, Basis.X) == pytest.approx((0.0, 1.0))

    def test_eigenstate_is_deterministic(self, rng):
        for _ in range(20):
            bit, post = measure(prepare(Basis.X, 1), 0, Basis.X, rng)
            assert bit == 1
            assert post.allclose(prepare(Basis.X, 1))

    def test_collapse_on_bell_pair(self, rng):
        bell = StateVector(np.array([S, 0, 0, S]))
        bit, post = measure(bell, 0, Basis.Z, rng)
        assert post.allclose(tensor(prepare(Basis.Z, bit), prepare(Basis.Z, bit)))

    def test_uniform_threshold_convention(self):
        batch = StateBatch.prepare([1, 1], [0, 0])
        bits, _ = batch.measure(0, Basis.Z, np.array([0.49, 0.5]))
        np.testing.assert_array_equal(bits, [0, 1])

    def test_frequencies(self, rng):
        psi = StateVector(np.array([math.sqrt(0.2), math.sqrt(0.8)]))
        ones = sum(measure(psi, 0, Basis.Z, rng)[0] for _ in range(4000))
        assert abs(ones / 4000 - 0.8) < 0.03

    def test_project_zero_weight(self):
        w, post = project(prepare(Basis.Z, 0), 0, Basis.Z, 1)
        assert w == 0.0 and post is None


class TestPartialTrace:
    def test_bell_reduced_is_maximally_mixed(self):
        rho = partial_trace(StateVector(np.array([S, 0, 0, S])), [1])
        np.testing.assert_allclose(rho.matrix, np.eye(2) / 2, atol=1e-12)

    def test_product_state(self):
        psi = tensor(prepare(Basis.X, 0), prepare(Basis.Z, 1))
        assert partial_trace(psi, [0]).allclose(prepare(Basis.X, 0).density())
        assert partial_trace(psi, [1]).allclose(prepare(Basis.Z, 1).density())

    @given(st.integers(0, 2**32 - 1))
    def test_reduced_state_is_valid(self, seed):
        rho = partial_trace(random_state(seed, 3), [0, 2])
        assert np.trace(rho.matrix).real == pytest.approx(1.0)
        assert np.linalg.eigvalsh(rho.matrix).min() > -1e-9

    def test_density_input(self):
        rho = StateVector(np.array([S, 0, 0, S])).density()
        np.testing.assert_allclose(partial_trace(rho, [0]).matrix, np.eye(2) / 2, atol=1e-12)

    def test_invalid_density(self):
        with pytest.raises(ValueError):
            DensityMatrix(np.array([[1.0, 0], [0, 1.0]]))


class TestTraceDistance:
    def test_orthogonal(self):
        assert trace_distance(prepare(Basis.Z, 0).density(), prepare(Basis.Z, 1).density()) == pytest.approx(1)

    def test_mutually_unbiased(self):
        d = trace_distance(prepare(Basis.Z, 0).density(), prepare(Basis.X, 0).density())
        assert d == pytest.approx(S)

    @given(st.floats(0, math.pi / 2))
    def test_rotated_pair(self, theta):
        a = prepare(Basis.Z, 0).density()
        b = StateVector(np.array([math.cos(theta), math.sin(theta)])).density()
        assert trace_distance(a, b) == pytest.approx(abs(math.sin(theta)), abs=1e-9)

    @given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
    def test_metric_bounds(self, s1, s2):
        a, b = random_state(s1, 1).density(), random_state(s2, 1).density()
        d = trace_distance(a, b)
        assert -1e-12 <= d <= 1 + 1e-12
        assert d == pytest.approx(trace_distance(b, a))
