"""
Quantum and classical channels.

The quantum channel carries one qubit per trial at a time: ``transmit_forward``
must be followed by ``transmit_return`` for the same round before the next
round may start.  The classical channel is an authenticated broadcast, so
every party and the eavesdropper read the same messages and only Alice or
Bob may author them.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .qcore import PAULIS, StateBatch, StateVector

NOISE_FIRST = "noise_first"
EVE_FIRST = "eve_first"


class LockstepViolation(RuntimeError):
    """A qubit was sent before the previous one came back."""


@dataclass(frozen=True)
class NoiseModel:
    """Per-leg channel noise.

    ``bitflip`` applies X with probability ``p``; ``depolarizing`` applies a
    uniformly chosen X, Y or Z with probability ``p``.
    """

    kind: str = "ideal"
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ideal", "bitflip", "depolarizing"):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"noise probability {self.p} outside [0, 1]")
        if self.kind == "ideal" and self.p != 0.0:
            raise ValueError("ideal noise takes no probability")

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """Parse ``ideal``, ``bitflip:P`` or ``depol:P``."""
        head, _, tail = text.strip().lower().partition(":")
        if head == "ideal" and not tail:
            return cls()
        kinds = {"bitflip": "bitflip", "depol": "depolarizing", "depolarizing": "depolarizing"}
        if head not in kinds or not tail:
            raise ValueError(f"bad noise descriptor {text!r}")
        return cls(kinds[head], float(tail))

    def __str__(self):
        if self.kind == "ideal":
            return "ideal"
        return f"{'bitflip' if self.kind == 'bitflip' else 'depol'}:{self.p:g}"

    @property
    def is_ideal(self) -> bool:
        return self.kind == "ideal" or self.p == 0.0

    def pauli_choice(self, fire_u: np.ndarray, pauli_u: np.ndarray) -> np.ndarray:
        """Index into ``PAULIS`` (0 = identity) for each row."""
        fire = np.asarray(fire_u) < self.p
        if self.kind == "bitflip":
            return fire.astype(np.intp)
        which = 1 + np.minimum((np.asarray(pauli_u) * 3).astype(np.intp), 2)
        return np.where(fire, which, 0)

    def apply(self, state: StateBatch, fire_u: np.ndarray, pauli_u: np.ndarray) -> StateBatch:
        if self.is_ideal:
            return state
        choice = self.pauli_choice(fire_u, pauli_u)
        if not choice.any():
            return state
        return state.apply(PAULIS[choice], [0])


IDEAL = NoiseModel()

#: Eve's tap: (state, round_index, uniforms of shape (B, 2)) -> state
Tap = Callable[[StateBatch, int, np.ndarray], StateBatch]


class QuantumChannel:
    """Lockstep two-way channel between Alice's lab and Bob's segment.

    With ``noise_order == "noise_first"`` the forward leg applies noise and
    then Eve's tap, and the return leg applies Eve's tap and then noise.
    ``"eve_first"`` swaps both.  The transit qubit is always qubit 0.
    """

    def __init__(self, noise: NoiseModel = IDEAL, noise_order: str = NOISE_FIRST):
        if noise_order not in (NOISE_FIRST, EVE_FIRST):
            raise ValueError(f"unknown noise order {noise_order!r}")
        self.noise = noise
        self.noise_order = noise_order
        self.in_flight = False
        self.events: list[tuple[int, str]] = []
        self._next_round = 0

    def _leg(self, state, round_index, noise_u, eve_u, tap, noise_before_tap):
        if noise_before_tap:
            state = self.noise.apply(state, noise_u[:, 0], noise_u[:, 1])
        if tap is not None:
            state = tap(state, round_index, eve_u)
        if not noise_before_tap:
            state = self.noise.apply(state, noise_u[:, 0], noise_u[:, 1])
        return state

    def transmit_forward(self, state, round_index: int, noise_u=None, eve_u=None, tap: Tap | None = None):
        """Alice -> Bob.  Sets the in-flight flag."""
        if self.in_flight:
            raise LockstepViolation(f"round {round_index} sent while round {self._next_round - 1} is in flight")
        if round_index != self._next_round:
            raise LockstepViolation(f"expected round {self._next_round}, got {round_index}")
        batch, single = _as_batch(state)
        noise_u, eve_u = _defaults(batch, noise_u, eve_u)
        out = self._leg(batch, round_index, noise_u, eve_u, tap, self.noise_order == NOISE_FIRST)
        self.in_flight = True
        self._next_round += 1
        self.events.append((round_index, "forward"))
        return _unwrap(out, single)

    def transmit_return(self, state, round_index: int, noise_u=None, eve_u=None, tap: Tap | None = None):
        """Bob -> Alice.  Clears the in-flight flag on Alice's receive."""
        if not self.in_flight or round_index != self._next_round - 1:
            raise LockstepViolation(f"return of round {round_index} without a matching forward")
        batch, single = _as_batch(state)
        noise_u, eve_u = _defaults(batch, noise_u, eve_u)
        out = self._leg(batch, round_index, noise_u, eve_u, tap, self.noise_order != NOISE_FIRST)
        self.in_flight = False
        self.events.append((round_index, "return"))
        return _unwrap(out, single)


def _as_batch(state):
    if isinstance(state, StateVector):
        return StateBatch(state.amplitudes[None, :]), True
    return state, False


def _unwrap(batch: StateBatch, single: bool):
    return StateVector(batch.amplitudes[0]) if single else batch


def _defaults(batch, noise_u, eve_u):
    if noise_u is None:
        noise_u = np.ones((batch.size, 2))
    if eve_u is None:
        eve_u = np.zeros((batch.size, 2))
    return np.asarray(noise_u), np.asarray(eve_u)


# ---------------------------------------------------------------------------
# Classical channel
# ---------------------------------------------------------------------------


class Sender(str, enum.Enum):
    ALICE = "Alice"
    BOB = "Bob"


class MessageKind(str, enum.Enum):
    BASIS_ANNOUNCEMENT = "BasisAnnouncement"
    SIFT_ANNOUNCEMENT = "SiftAnnouncement"
    TEST_SELECTION = "TestSelection"
    TEST_VALUES = "TestValues"
    ECC_DATA = "EccData"
    PA_DATA = "PaData"
    QSDC_START = "QsdcStart"
    RECEIPT_CONFIRMATION = "ReceiptConfirmation"
    QSDC_SIFT_POSITIONS = "QsdcSiftPositions"
    QSDC_ERROR_POSITIONS = "QsdcErrorPositions"
    BLOCK_CODING_ANNOUNCEMENT = "BlockCodingAnnouncement"
    BLOCK_CODING_WITHHELD = "BlockCodingWithheld"
    ABORT = "Abort"


_SCALARS = (int, float, str, bool, type(None))


def _freeze(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return tuple(value.tolist())
    if isinstance(value, (list, tuple)):
        if all(type(v) in _SCALARS for v in value):
            return tuple(value)
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple((k, _freeze(v)) for k, v in value.items())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _thaw(value: Any, as_dict: bool = False) -> Any:
    if as_dict:
        return {k: _thaw(v) for k, v in value}
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


@dataclass(frozen=True)
class ClassicalMessage:
    """One authenticated broadcast.

    ``payload`` is frozen on construction (lists become tuples, dicts become
    tuples of pairs) so a message can never change after it is sent.
    """

    sender: Sender
    kind: MessageKind
    payload: Any = None
    seq: int = -1

    def __post_init__(self):
        object.__setattr__(self, "sender", Sender(self.sender))
        object.__setattr__(self, "kind", MessageKind(self.kind))
        object.__setattr__(self, "payload", _freeze(self.payload))

    @property
    def fields(self) -> dict:
        """Payload as a dict, for structured payloads."""
        return _thaw(self.payload, as_dict=True)

    def to_json(self) -> str:
        payload = self.payload
        if isinstance(payload, tuple) and payload and all(
            isinstance(p, tuple) and len(p) == 2 and isinstance(p[0], str) for p in payload
        ):
            payload = _thaw(payload, as_dict=True)
        else:
            payload = _thaw(payload)
        record = {"seq": self.seq, "sender": self.sender.value, "kind": self.kind.value, "payload": payload}
        return json.dumps(record, separators=(",", ":"))


#: Observer of broadcasts (e.g. Eve's ``on_classical``).
Observer = Callable[[ClassicalMessage], None]


@dataclass(frozen=True)
class Transcript:
    """Append-only public record.  ``broadcast`` returns a new transcript.

    Quantum-channel events share the sequence counter: ``channel_blocks``
    lists ``(first_seq, count)`` for each block of channel events, so message
    sequence numbers show where the quantum exchange sat in time.
    """

    messages: tuple[ClassicalMessage, ...] = ()
    next_seq: int = 0
    channel_blocks: tuple[tuple[int, int], ...] = field(default=())

    def __len__(self):
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def __getitem__(self, i):
        return self.messages[i]

    def of_kind(self, kind: MessageKind) -> list[ClassicalMessage]:
        return [m for m in self.messages if m.kind == kind]

    def last(self, kind: MessageKind) -> ClassicalMessage | None:
        found = self.of_kind(kind)
        return found[-1] if found else None

    def with_channel_events(self, count: int) -> "Transcript":
        return Transcript(self.messages, self.next_seq + count, self.channel_blocks + ((self.next_seq, count),))

    def to_jsonl(self) -> str:
        """One JSON object per message: seq, sender, kind, payload."""
        return "".join(m.to_json() + "\n" for m in self.messages)


def broadcast(msg: ClassicalMessage, transcript: Transcript, observers: Iterable[Observer] = ()) -> Transcript:
    """Stamp ``msg`` with the next sequence number and append it.

    Every observer sees the stamped message, the same object the parties read.
    """
    stamped = ClassicalMessage(msg.sender, msg.kind, msg.payload, transcript.next_seq)
    out = Transcript(transcript.messages + (stamped,), transcript.next_seq + 1, transcript.channel_blocks)
    for observe in observers:
        observe(stamped)
    return out


def pack_bits(bits: Sequence[int]) -> str:
    """Length-prefixed bit string, e.g. ``"5:10110"``."""
    bits = np.asarray(bits, dtype=np.int8).reshape(-1)
    return f"{bits.size}:" + "".join("1" if b else "0" for b in bits.tolist())


def unpack_bits(text: str) -> np.ndarray:
    length, _, body = text.partition(":")
    if int(length) != len(body) or set(body) - {"0", "1"}:
        raise ValueError(f"malformed bit string {text!r}")
    return np.frombuffer(body.encode(), dtype=np.uint8).astype(np.int8) - ord("0")
