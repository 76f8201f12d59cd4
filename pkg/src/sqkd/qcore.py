"""
Dense state-vector algebra for a handful of qubits.

Qubit 0 is the most significant bit of a basis-state index, so
``tensor(a, b)`` places ``a`` on the low qubit indices.  Two layers live
here:

* ``StateVector`` / ``DensityMatrix`` and the free functions (``prepare``,
  ``measure``, ``apply_unitary``, ``tensor``, ``partial_trace``,
  ``trace_distance``) form the validated single-state API.
* ``StateBatch`` stacks independent pure states that share one qubit layout
  along axis 0.  The protocol engine runs every trial of a batch in lockstep
  on one of these, so the kernels below are written for a leading batch axis
  and the single-state functions delegate to them with a batch of one.

No function here owns randomness: measurement takes uniforms or a caller
supplied ``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_QUBITS = 12
ATOL = 1e-9
EIG_ATOL = 1e-6
# Born weights below this are treated as exactly zero.
PROB_FLOOR = 1e-12


class QubitCapExceeded(ValueError):
    """Raised when a state would hold more than ``MAX_QUBITS`` qubits."""


class NotUnitaryError(ValueError):
    """Raised when a matrix handed to ``apply_unitary`` is not unitary."""


class Basis(enum.IntEnum):
    """Measurement / preparation basis.  ``Z`` is the classical basis."""

    Z = 0
    X = 1

    @classmethod
    def parse(cls, text: str) -> "Basis":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown basis {text!r}") from None


_S = 1.0 / np.sqrt(2.0)

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[_S, _S], [_S, -_S]], dtype=complex)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)

#: Pauli table indexed I, X, Y, Z.
PAULIS = np.stack([I2, PAULI_X, PAULI_Y, PAULI_Z])

# Rows indexed by 2 * basis + bit: |0>, |1>, |+>, |->.
_BASIS_KETS = np.array([[1, 0], [0, 1], [_S, _S], [_S, -_S]], dtype=complex)
# Basis change to Z for measurement, indexed by basis.
_TO_Z = np.stack([I2, HADAMARD])


def _num_qubits_for(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def _check_cap(n: int) -> None:
    if n > MAX_QUBITS:
        raise QubitCapExceeded(f"{n} qubits exceeds the cap of {MAX_QUBITS}")


@dataclass(frozen=True, eq=False)
class StateVector:
    """A normalized pure state on ``num_qubits`` qubits."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        n = _num_qubits_for(amps.size)
        _check_cap(n)
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > ATOL:
            raise ValueError(f"state norm {norm!r} differs from 1")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def num_qubits(self) -> int:
        return _num_qubits_for(self.amplitudes.size)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()))

    def allclose(self, other: "StateVector", atol: float = ATOL) -> bool:
        """Equality up to ``atol`` on every amplitude (global phase matters)."""
        return self.amplitudes.shape == other.amplitudes.shape and np.allclose(
            self.amplitudes, other.amplitudes, atol=atol
        )

    def __repr__(self):
        return f"StateVector({np.array2string(self.amplitudes, precision=4)})"


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A Hermitian, unit-trace, positive semidefinite matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        rho = np.array(self.matrix, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError("density matrix must be square")
        _check_cap(_num_qubits_for(rho.shape[0]))
        if not np.allclose(rho, rho.conj().T, atol=ATOL):
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > ATOL:
            raise ValueError(f"trace {np.trace(rho).real!r} differs from 1")
        if np.linalg.eigvalsh(rho).min() < -ATOL:
            raise ValueError("density matrix has a negative eigenvalue")
        rho.flags.writeable = False
        object.__setattr__(self, "matrix", rho)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_qubits(self) -> int:
        return _num_qubits_for(self.dim)

    def allclose(self, other: "DensityMatrix", atol: float = ATOL) -> bool:
        return self.matrix.shape == other.matrix.shape and np.allclose(
            self.matrix, other.matrix, atol=atol
        )


# ---------------------------------------------------------------------------
# Batched kernels
# ---------------------------------------------------------------------------


class StateBatch:
    """Independent pure states with a common qubit layout.

    ``amplitudes`` has shape ``(B, 2**num_qubits)``.  Rows never interact; a
    batch exists so that one numpy call advances every trial at once.
    Operations return new batches and leave the input untouched.
    """

    __slots__ = ("amplitudes", "num_qubits")

    def __init__(self, amplitudes: np.ndarray):
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.ndim != 2:
            raise ValueError("batch amplitudes must be two-dimensional")
        n = _num_qubits_for(amps.shape[1])
        _check_cap(n)
        self.amplitudes = amps
        self.num_qubits = n

    @property
    def size(self) -> int:
        return self.amplitudes.shape[0]

    def __len__(self):
        return self.size

    @classmethod
    def prepare(cls, bases: np.ndarray, bits: np.ndarray) -> "StateBatch":
        """One single-qubit row per ``(basis, bit)`` pair."""
        index = 2 * np.asarray(bases, dtype=np.intp) + np.asarray(bits, dtype=np.intp)
        return cls(_BASIS_KETS[index])

    @classmethod
    def from_state(cls, state: StateVector, size: int = 1) -> "StateBatch":
        return cls(np.broadcast_to(state.amplitudes, (size, state.amplitudes.size)).copy())

    def row(self, i: int) -> StateVector:
        return StateVector(self.amplitudes[i])

    def take(self, rows) -> "StateBatch":
        return StateBatch(self.amplitudes[rows])

    def append_zero(self, count: int = 1) -> "StateBatch":
        """Adjoin ``count`` fresh qubits in |0> after the existing ones."""
        _check_cap(self.num_qubits + count)
        out = np.zeros((self.size, self.amplitudes.shape[1] << count), dtype=complex)
        out[:, :: 1 << count] = self.amplitudes
        return StateBatch(out)

    def tensor(self, other: "StateBatch | StateVector") -> "StateBatch":
        if isinstance(other, StateVector):
            other_amps = other.amplitudes[None, :]
        else:
            other_amps = other.amplitudes
        _check_cap(self.num_qubits + _num_qubits_for(other_amps.shape[1]))
        out = self.amplitudes[:, :, None] * other_amps[:, None, :]
        return StateBatch(out.reshape(self.size, -1))

    def apply(self, u: np.ndarray, targets: Sequence[int], where: np.ndarray | None = None) -> "StateBatch":
        """Apply ``u`` on ``targets``.

        ``u`` is either one ``(d, d)`` matrix or a per-row stack ``(B, d, d)``.
        With ``where``, rows whose mask is false are left unchanged.
        """
        u = np.asarray(u, dtype=complex)
        k = len(targets)
        if u.shape[-1] != 1 << k or u.shape[-2] != 1 << k:
            raise ValueError(f"operator of shape {u.shape} does not act on {k} qubit(s)")
        if where is not None:
            eye = np.eye(1 << k, dtype=complex)
            u = np.where(np.asarray(where, dtype=bool)[:, None, None], u, eye)
        return StateBatch(_apply_kernel(self.amplitudes, self.num_qubits, u, targets))

    def probabilities(self, target: int, bases: np.ndarray | int = Basis.Z) -> np.ndarray:
        """Born probability of outcome 0 for each row."""
        psi = _rotate_to_z(self.amplitudes, self.num_qubits, target, bases)
        return _outcome_zero_probability(psi, self.num_qubits, target)

    def measure(self, target: int, bases: np.ndarray | int, uniforms: np.ndarray) -> tuple[np.ndarray, "StateBatch"]:
        """Projective measurement of ``target`` on every row.

        ``uniforms`` are draws in [0, 1); row ``i`` reads outcome 1 when
        ``uniforms[i]`` is at or above the probability of outcome 0.  The
        returned batch is the collapsed, renormalized joint state.
        """
        n = self.num_qubits
        if not 0 <= target < n:
            raise IndexError(f"qubit {target} out of range for {n} qubit(s)")
        psi = _rotate_to_z(self.amplitudes, n, target, bases)
        p0 = _outcome_zero_probability(psi, n, target)
        bits = (np.asarray(uniforms) >= p0).astype(np.int8)
        view = psi.reshape(self.size, 1 << target, 2, -1).copy()
        keep = np.where(bits == 1, 1.0 - p0, p0)
        view[bits == 0, :, 1, :] = 0.0
        view[bits == 1, :, 0, :] = 0.0
        view /= np.sqrt(keep)[:, None, None, None]
        psi = view.reshape(self.size, -1)
        psi = _rotate_from_z(psi, n, target, bases)
        return bits, StateBatch(psi)

    def reduced(self, keep: Sequence[int]) -> np.ndarray:
        """Reduced density matrices of ``keep`` for every row, ``(B, dk, dk)``."""
        return _reduce_kernel(self.amplitudes, self.num_qubits, keep)


def _apply_kernel(amps: np.ndarray, n: int, u: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    targets = list(targets)
    if len(set(targets)) != len(targets) or any(not 0 <= t < n for t in targets):
        raise IndexError(f"invalid targets {targets} for {n} qubit(s)")
    b = amps.shape[0]
    k = len(targets)
    psi = amps.reshape((b,) + (2,) * n)
    src = [1 + t for t in targets]
    dst = list(range(1, 1 + k))
    psi = np.moveaxis(psi, src, dst).reshape(b, 1 << k, -1)
    psi = np.matmul(u, psi)
    psi = np.moveaxis(psi.reshape((b,) + (2,) * n), dst, src)
    return psi.reshape(b, -1)


def _basis_rotation(bases) -> np.ndarray:
    bases = np.asarray(bases)
    if bases.ndim == 0:
        return _TO_Z[int(bases)]
    return _TO_Z[bases.astype(np.intp)]


def _rotate_to_z(amps, n, target, bases):
    bases_arr = np.asarray(bases)
    if bases_arr.ndim == 0 and int(bases_arr) == Basis.Z:
        return amps
    if bases_arr.ndim == 1 and not bases_arr.any():
        return amps
    return _apply_kernel(amps, n, _basis_rotation(bases), [target])


def _rotate_from_z(amps, n, target, bases):
    # The Hadamard is its own inverse.
    return _rotate_to_z(amps, n, target, bases)


def _outcome_zero_probability(psi: np.ndarray, n: int, target: int) -> np.ndarray:
    view = psi.reshape(psi.shape[0], 1 << target, 2, -1)
    p0 = np.sum(np.abs(view[:, :, 0, :]) ** 2, axis=(1, 2))
    p1 = np.sum(np.abs(view[:, :, 1, :]) ** 2, axis=(1, 2))
    p0 = p0 / (p0 + p1)
    p0[p0 < PROB_FLOOR] = 0.0
    p0[p0 > 1.0 - PROB_FLOOR] = 1.0
    return p0


def _reduce_kernel(amps: np.ndarray, n: int, keep: Sequence[int]) -> np.ndarray:
    keep = list(keep)
    if not keep:
        raise ValueError("partial trace needs at least one kept qubit")
    if len(set(keep)) != len(keep) or any(not 0 <= q < n for q in keep):
        raise IndexError(f"invalid kept qubits {keep} for {n} qubit(s)")
    b = amps.shape[0]
    psi = amps.reshape((b,) + (2,) * n)
    psi = np.moveaxis(psi, [1 + q for q in keep], list(range(1, 1 + len(keep))))
    psi = psi.reshape(b, 1 << len(keep), -1)
    return np.matmul(psi, psi.conj().transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# Single-state API
# ---------------------------------------------------------------------------


def prepare(basis: Basis, bit: int) -> StateVector:
    """|0>, |1>, |+> or |-> for (Z,0), (Z,1), (X,0), (X,1)."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return StateVector(_BASIS_KETS[2 * int(Basis(basis)) + bit])


def tensor(a: StateVector, b: StateVector) -> StateVector:
    _check_cap(a.num_qubits + b.num_qubits)
    return StateVector(np.kron(a.amplitudes, b.amplitudes))


def is_unitary(u: np.ndarray, atol: float = ATOL) -> bool:
    u = np.asarray(u, dtype=complex)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(
        u.conj().T @ u, np.eye(u.shape[0]), atol=atol
    )


def apply_unitary(state: StateVector, u: np.ndarray, targets: Sequence[int]) -> StateVector:
    """Apply ``u`` to the qubits listed in ``targets`` (in that order)."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape != (1 << len(targets), 1 << len(targets)):
        raise ValueError(f"operator of shape {u.shape} does not match {len(targets)} target(s)")
    if not is_unitary(u):
        raise NotUnitaryError("operator is not unitary")
    out = _apply_kernel(state.amplitudes[None, :], state.num_qubits, u, targets)
    return StateVector(out[0])


def measure(state: StateVector, target: int, basis: Basis, rng: np.random.Generator) -> tuple[int, StateVector]:
    """Born-rule measurement of one qubit; returns the bit and collapsed state."""
    batch = StateBatch(state.amplitudes[None, :])
    bits, post = batch.measure(target, int(Basis(basis)), np.array([rng.random()]))
    return int(bits[0]), StateVector(post.amplitudes[0])


def outcome_probabilities(state: StateVector, target: int, basis: Basis) -> tuple[float, float]:
    p0 = float(StateBatch(state.amplitudes[None, :]).probabilities(target, int(Basis(basis)))[0])
    return p0, 1.0 - p0


def project(state: StateVector, target: int, basis: Basis, bit: int) -> tuple[float, StateVector | None]:
    """Deterministic branch of a measurement: (probability, post-state).

    The post-state is ``None`` when the branch has zero Born weight.
    """
    p0, p1 = outcome_probabilities(state, target, basis)
    weight = p0 if bit == 0 else p1
    if weight <= 0.0:
        return 0.0, None
    batch = StateBatch(state.amplitudes[None, :])
    # A uniform just below p0 selects outcome 0, exactly p0 selects outcome 1.
    u = np.array([0.0 if bit == 0 else p0])
    _, post = batch.measure(target, int(Basis(basis)), u)
    return weight, StateVector(post.amplitudes[0])


def partial_trace(state: StateVector | DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on ``keep`` (kept qubits appear in the listed order)."""
    keep = list(keep)
    if not keep:
        raise ValueError("partial trace needs at least one kept qubit")
    if isinstance(state, StateVector):
        rho = _reduce_kernel(state.amplitudes[None, :], state.num_qubits, keep)[0]
        return DensityMatrix(rho)
    n = state.num_qubits
    if len(set(keep)) != len(keep) or any(not 0 <= q < n for q in keep):
        raise IndexError(f"invalid kept qubits {keep} for {n} qubit(s)")
    traced = [q for q in range(n) if q not in keep]
    rho = state.matrix.reshape((2,) * (2 * n))
    row_axes = keep + traced
    col_axes = [n + q for q in keep] + [n + q for q in traced]
    rho = np.transpose(rho, row_axes + col_axes)
    dk, dt = 1 << len(keep), 1 << len(traced)
    rho = rho.reshape(dk, dt, dk, dt)
    return DensityMatrix(np.einsum("ajbj->ab", rho))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the trace norm of ``a - b``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    eig = np.linalg.eigvalsh(a.matrix - b.matrix)
    return float(min(1.0, 0.5 * np.sum(np.abs(eig))))
