"""
Alice and Bob.

Alice is fully quantum: she prepares qubits in the Z or X basis and measures
in either basis.  Bob is restricted: on each round he either reflects the
qubit untouched (CTRL) or discards it and sends a fresh Z-basis qubit of his
choosing (SIFT).  Bob has no measurement capability; discarding is modelled
as swapping the incoming qubit into an environment register that nobody
reads.
"""

from __future__ import annotations

import numpy as np

from ..postproc import BlockCoding
from ..qcore import PAULI_X, SWAP, Basis, StateBatch, StateVector, apply_unitary, prepare, tensor
from .config import Protocol, ProtocolConfig, qsdc_message_length
from .records import BobAction, QsdcMessage


class MessageExhausted(RuntimeError):
    """Bob was asked to SIFT after every message bit had been sent."""


class Alice:
    """Preparation and measurement choices, vectorized over a batch of trials."""

    def __init__(self, protocol: Protocol):
        self.protocol = protocol

    def prepare_choices(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(bases, bits)`` from the party uniforms of one round.

        P2 always sends |+>; P1 and QSDC draw basis and bit uniformly.
        """
        size = u.shape[0]
        if self.protocol is Protocol.P2:
            return np.full(size, Basis.X, dtype=np.int8), np.zeros(size, dtype=np.int8)
        return (u[:, 0] >= 0.5).astype(np.int8), (u[:, 1] >= 0.5).astype(np.int8)

    def prepare(self, bases: np.ndarray, bits: np.ndarray) -> StateBatch:
        return StateBatch.prepare(bases, bits)

    def measurement_bases(self, prep_bases: np.ndarray, actions: np.ndarray, u_measure: np.ndarray) -> np.ndarray:
        """Basis for measuring each returned qubit.

        P1: the preparation basis.  P2: uniformly random.  QSDC: the
        preparation basis on CTRL rounds and Z on SIFT rounds, which Alice
        can do because she measures only after Bob announces his SIFT rounds.
        """
        if self.protocol is Protocol.P1:
            return prep_bases.copy()
        if self.protocol is Protocol.P2:
            return (u_measure >= 0.5).astype(np.int8)
        return np.where(actions == BobAction.SIFT, Basis.Z, prep_bases).astype(np.int8)


class Bob:
    """Reflect or resend.  The only operations available are unitary ones."""

    def __init__(self, sift_prob: float):
        self.sift_prob = sift_prob

    def choose(self, u: np.ndarray, remaining: np.ndarray | None = None) -> np.ndarray:
        """SIFT where the action uniform is below ``sift_prob``.

        ``remaining`` (QSDC) counts message bits still to send; once it
        reaches zero Bob reflects every remaining round.
        """
        sift = u[:, 2] < self.sift_prob
        if remaining is not None:
            sift &= remaining > 0
        return sift.astype(np.int8)

    def act(self, state: StateBatch, actions: np.ndarray, fresh_bits: np.ndarray) -> StateBatch:
        """Apply the round's action to the transit qubit (qubit 0).

        An environment qubit |0> is always adjoined so every row keeps the
        same layout.  SIFT swaps the incoming qubit into it and flips the new
        transit qubit to the fresh bit.
        """
        state = state.append_zero()
        env = state.num_qubits - 1
        sift = actions == BobAction.SIFT
        state = state.apply(SWAP, [0, env], where=sift)
        return state.apply(PAULI_X, [0], where=sift & (fresh_bits == 1))


def bob_act(state: StateVector, action: BobAction, bit: int | None = None) -> StateVector:
    """Single-state form of ``Bob.act``.

    Returns the joint state of (transit, environment).  Raises
    ``MessageExhausted`` when asked to SIFT without a bit to send.
    """
    action = BobAction(action)
    if action is BobAction.SIFT and bit is None:
        raise MessageExhausted("SIFT requested with no bit left to send")
    if state.num_qubits != 1:
        raise ValueError("bob_act takes a single transit qubit")
    joint = tensor(state, prepare(Basis.Z, 0))
    if action is BobAction.CTRL:
        return joint
    joint = apply_unitary(joint, SWAP, [0, 1])
    if bit:
        joint = apply_unitary(joint, PAULI_X, [0])
    return joint


def build_qsdc_message(payload, cfg: ProtocolConfig, rng: np.random.Generator) -> QsdcMessage:
    """Frame ``payload`` for transmission.

    The payload is block coded under a fresh 64-bit key, then spread over a
    string of ``|m|`` bits whose check positions (a random subset) carry
    random bits for error estimation.
    """
    payload = np.asarray(payload, dtype=np.int8).reshape(-1)
    if payload.size != cfg.n:
        raise ValueError(f"payload must have n={cfg.n} bits, got {payload.size}")
    total, checks = qsdc_message_length(cfg.n, cfg.qsdc_check_fraction)
    key = int(rng.integers(0, 2**63))
    coded = BlockCoding(key).encode(payload)
    check_positions = np.sort(rng.choice(total, size=checks, replace=False)).astype(np.intp)
    encoded = np.empty(total, dtype=np.int8)
    mask = np.ones(total, dtype=bool)
    mask[check_positions] = False
    encoded[mask] = coded
    encoded[check_positions] = rng.integers(0, 2, size=checks, dtype=np.int8)
    return QsdcMessage(payload, encoded, check_positions, key)
