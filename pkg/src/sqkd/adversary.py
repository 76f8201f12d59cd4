"""
Eavesdropper strategies.

A strategy is built fresh for each batch from an immutable ``AttackSpec``.
Quantum hooks act on a ``StateBatch`` (one row per trial, transit qubit at
index 0) and may adjoin ancilla qubits.  Classical hooks only observe: the
channel is authenticated, so Eve reads every broadcast and sends none.

Descriptor grammar (case-insensitive)::

    none
    ir:<z|x>:<fwd|ret|both>
    probe:<theta>:<fwd|ret>[:rot|:phase]
    mitm

``theta`` accepts a float or a multiple of pi such as ``pi/4``, ``3pi/8``
or ``π/2``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .channel import ClassicalMessage, MessageKind, Transcript
from .postproc import BlockCoding, codeword_length
from .qcore import (
    HADAMARD,
    PAULI_X,
    SWAP,
    Basis,
    DensityMatrix,
    StateBatch,
    trace_distance,
)

if TYPE_CHECKING:  # pragma: no cover
    from .parties.engine import Exchange

FORWARD = "fwd"
RETURN = "ret"
ROTATION = "rot"
PHASE = "phase"


class DescriptorError(ValueError):
    """Malformed attack descriptor."""


_PI_RE = re.compile(r"^\s*([0-9.eE+-]*)\s*\*?\s*(?:pi|π)\s*(?:/\s*([0-9.eE+-]+))?\s*$", re.IGNORECASE)


def parse_angle(text: str) -> float:
    """Parse ``0.3``, ``pi``, ``pi/4``, ``3pi/8``, ``3*pi/8`` or ``π/2``."""
    text = text.strip()
    m = _PI_RE.match(text)
    sign = {"": 1.0, "+": 1.0, "-": -1.0}
    try:
        if not m:
            return float(text)
        coeff = sign[m.group(1)] if m.group(1) in sign else float(m.group(1))
        denom = float(m.group(2)) if m.group(2) else 1.0
        return coeff * math.pi / denom
    except (ValueError, ZeroDivisionError):
        raise DescriptorError(f"bad angle {text!r}") from None


def rotation_probe(theta: float) -> np.ndarray:
    """Controlled rotation on (transit, ancilla).

    |0>|a> -> |0>|a>; |1>|0> -> |1>(cos t|0> + sin t|1>), completed to a
    unitary by |1>|1> -> |1>(-sin t|0> + cos t|1>).
    """
    c, s = math.cos(theta), math.sin(theta)
    u = np.eye(4, dtype=complex)
    u[2:, 2:] = [[c, -s], [s, c]]
    return u


def phase_probe(theta: float) -> np.ndarray:
    """Controlled phase e^{2i theta} on (transit, ancilla); ancilla starts in |+>."""
    return np.diag([1, 1, 1, np.exp(2j * theta)]).astype(complex)


@dataclass(frozen=True)
class AttackSpec:
    """Immutable description of an attack; ``build()`` makes a strategy."""

    kind: str = "none"
    basis: Basis = Basis.Z
    legs: tuple[str, ...] = ()
    theta: float = 0.0
    family: str = ROTATION

    @classmethod
    def parse(cls, text: "str | AttackSpec") -> "AttackSpec":
        if isinstance(text, AttackSpec):
            return text
        parts = [p.strip() for p in text.strip().lower().split(":")]
        head = parts[0]
        if head == "none" and len(parts) == 1:
            return cls()
        if head == "mitm" and len(parts) == 1:
            return cls(kind="mitm", legs=(RETURN,))
        if head == "ir" and len(parts) == 3:
            if parts[1] not in ("z", "x"):
                raise DescriptorError(f"bad basis in {text!r}")
            legs = {"fwd": (FORWARD,), "ret": (RETURN,), "both": (FORWARD, RETURN)}.get(parts[2])
            if legs is None:
                raise DescriptorError(f"bad leg in {text!r}")
            return cls(kind="ir", basis=Basis.parse(parts[1]), legs=legs)
        if head == "probe" and len(parts) in (3, 4):
            theta = parse_angle(parts[1])
            if abs(theta) > math.pi / 2 + 1e-12:
                raise DescriptorError(f"probe angle {theta} outside [-pi/2, pi/2]")
            if parts[2] not in (FORWARD, RETURN):
                raise DescriptorError(f"bad leg in {text!r}")
            family = parts[3] if len(parts) == 4 else ROTATION
            if family not in (ROTATION, PHASE):
                raise DescriptorError(f"bad probe family in {text!r}")
            return cls(kind="probe", legs=(parts[2],), theta=theta, family=family)
        raise DescriptorError(f"bad attack descriptor {text!r}")

    def __str__(self):
        if self.kind == "none":
            return "none"
        if self.kind == "mitm":
            return "mitm"
        if self.kind == "ir":
            leg = "both" if len(self.legs) == 2 else self.legs[0]
            return f"ir:{self.basis.name.lower()}:{leg}"
        suffix = "" if self.family == ROTATION else f":{self.family}"
        return f"probe:{self.theta!r}:{self.legs[0]}{suffix}"

    def with_theta(self, theta: float) -> "AttackSpec":
        if self.kind != "probe":
            raise DescriptorError("only probe attacks take an angle")
        return AttackSpec(self.kind, self.basis, self.legs, float(theta), self.family)

    def build(self) -> "AttackStrategy":
        if self.kind == "none":
            return NoEve(self)
        if self.kind == "ir":
            return InterceptResend(self)
        if self.kind == "probe":
            return EntangleProbe(self)
        return QsdcMitm(self)


@dataclass
class EveReport:
    """Eve's guesses for one trial.

    ``sift_bit_guesses`` holds ``(round, bit, confidence)`` for every round
    the public record shows as sifted key.  ``ancilla_states`` maps rounds to
    Eve's reduced state and is filled only when state tracking is on.
    """

    sift_bit_guesses: list[tuple[int, int, float]] = field(default_factory=list)
    payload_guess: np.ndarray | None = None
    ancilla_states: dict[int, DensityMatrix] = field(default_factory=dict)

    def guesses(self) -> dict[int, int]:
        return {r: b for r, b, _ in self.sift_bit_guesses}


def public_sift_key_rounds(transcript: Transcript) -> np.ndarray:
    """Rounds that the broadcasts identify as sifted key.

    P1/P2: Bob's SIFT rounds on which Alice's announced basis is Z (the
    basis announcement is a string such as ``"ZXXZ"``, one letter per round).
    QSDC: every SIFT position.
    """
    qsdc = transcript.last(MessageKind.QSDC_SIFT_POSITIONS)
    if qsdc is not None:
        return np.asarray(qsdc.payload, dtype=np.intp)
    sift = transcript.last(MessageKind.SIFT_ANNOUNCEMENT)
    bases = transcript.last(MessageKind.BASIS_ANNOUNCEMENT)
    if sift is None or bases is None:
        return np.zeros(0, dtype=np.intp)
    sift_rounds = np.asarray(sift.payload, dtype=np.intp)
    z = np.frombuffer(bases.payload.encode(), dtype=np.uint8) == ord("Z")
    return sift_rounds[z[sift_rounds]] if sift_rounds.size else sift_rounds


class AttackStrategy:
    """Base strategy: identity hooks, blind guesses."""

    #: Whether the engine must keep each round's joint state for this strategy.
    retains_states = False

    def __init__(self, spec: AttackSpec):
        self.spec = spec
        self.ctx: "Exchange | None" = None
        self.eve_qubits: list[int] = []

    def bind(self, ctx: "Exchange") -> None:
        self.ctx = ctx

    def on_forward(self, state: StateBatch, round_index: int, uniforms: np.ndarray) -> StateBatch:
        return state

    def on_return(self, state: StateBatch, round_index: int, uniforms: np.ndarray) -> StateBatch:
        return state

    def on_classical(self, pos: int, msg: ClassicalMessage) -> None:
        """Observe a broadcast for the trial at batch position ``pos``."""

    def observer(self, pos: int):
        return lambda msg: self.on_classical(pos, msg)

    def _blind(self, pos: int, rounds: np.ndarray) -> list[tuple[int, int, float]]:
        u = self.ctx.measure_uniforms(pos)[rounds, 3]
        return [(int(r), int(b), 0.5) for r, b in zip(rounds, (u < 0.5).astype(int))]

    def _guess(self, pos: int, rounds: np.ndarray) -> list[tuple[int, int, float]]:
        return self._blind(pos, rounds)

    def finalize(self, pos: int, transcript: Transcript) -> EveReport:
        rounds = public_sift_key_rounds(transcript)
        report = EveReport(self._guess(pos, rounds))
        if self.ctx.cfg.track_eve_states and self.eve_qubits and self.ctx.round_states is not None:
            for r in rounds:
                rho = self.ctx.round_state(int(r), pos).reduced(self.eve_qubits)[0]
                report.ancilla_states[int(r)] = DensityMatrix(rho)
        return report


class NoEve(AttackStrategy):
    pass


class InterceptResend(AttackStrategy):
    """Measure the transit qubit in a fixed basis and resend that eigenstate."""

    def bind(self, ctx):
        super().bind(ctx)
        self.records = {leg: np.full((ctx.n_rounds, ctx.size), -1, dtype=np.int8) for leg in self.spec.legs}

    def _intercept(self, leg, state, r, u):
        bits, post = state.measure(0, int(self.spec.basis), u)
        self.ctx.count_measurement("eve", state.size)
        self.records[leg][r] = bits
        # The collapsed transit qubit is exactly prepare(basis, bits): resend it.
        return post

    def on_forward(self, state, round_index, uniforms):
        if FORWARD in self.spec.legs:
            return self._intercept(FORWARD, state, round_index, uniforms[:, 0])
        return state

    def on_return(self, state, round_index, uniforms):
        if RETURN in self.spec.legs:
            return self._intercept(RETURN, state, round_index, uniforms[:, 0])
        return state

    def _guess(self, pos, rounds):
        if RETURN in self.spec.legs and self.spec.basis is Basis.Z:
            bits = self.records[RETURN][rounds, pos]
            return [(int(r), int(b), 1.0) for r, b in zip(rounds, bits)]
        return self._blind(pos, rounds)


class EntangleProbe(AttackStrategy):
    """Couple one fresh ancilla per round to the transit qubit.

    Rotation family: ancilla |0>, controlled rotation by theta.  Phase family:
    ancilla |+>, controlled phase 2*theta.  Both give conditional ancilla
    states at trace distance |sin theta| for transit |0> versus |1>.  At
    finalize time Eve applies the Helstrom measurement to the ancillas of the
    publicly sifted rounds.
    """

    retains_states = True

    def __init__(self, spec):
        super().__init__(spec)
        self.leg = spec.legs[0]
        self.unitary = rotation_probe(spec.theta) if spec.family == ROTATION else phase_probe(spec.theta)
        self._helstrom = self._helstrom_measurement()

    def _attach(self, state: StateBatch) -> StateBatch:
        state = state.append_zero()
        a = state.num_qubits - 1
        if self.spec.family == PHASE:
            state = state.apply(HADAMARD, [a])
        if not self.eve_qubits:
            self.eve_qubits = [a]
        return state.apply(self.unitary, [0, a])

    def on_forward(self, state, round_index, uniforms):
        return self._attach(state) if self.leg == FORWARD else state

    def on_return(self, state, round_index, uniforms):
        return self._attach(state) if self.leg == RETURN else state

    def conditional_states(self) -> tuple[np.ndarray, np.ndarray]:
        """Ancilla density matrices after probing transit |0> and |1>."""
        rhos = []
        for bit in (0, 1):
            st = StateBatch.prepare([Basis.Z], [bit]).append_zero()
            if self.spec.family == PHASE:
                st = st.apply(HADAMARD, [1])
            st = st.apply(self.unitary, [0, 1])
            rhos.append(st.reduced([1])[0])
        return rhos[0], rhos[1]

    def _helstrom_measurement(self):
        rho0, rho1 = self.conditional_states()
        vals, vecs = np.linalg.eigh(rho0 - rho1)
        if np.max(np.abs(vals)) < 1e-12:
            return None
        # Column 0 spans the positive eigenspace (outcome 0 -> guess 0).
        basis = vecs[:, ::-1]
        change = basis.conj().T
        proj = [np.outer(basis[:, k], basis[:, k].conj()) for k in (0, 1)]
        like = np.array([[np.trace(p @ rho).real for rho in (rho0, rho1)] for p in proj])
        posterior = like.max(axis=1) / like.sum(axis=1)
        return change, posterior

    def _guess(self, pos, rounds):
        # A forward-leg ancilla never touches Bob's fresh qubit.
        if self.leg == FORWARD or self._helstrom is None or rounds.size == 0:
            return self._blind(pos, rounds)
        change, posterior = self._helstrom
        a = self.eve_qubits[0]
        states = self.ctx.round_states_for(rounds, pos).apply(change, [a])
        u = self.ctx.measure_uniforms(pos)[rounds, 2]
        bits, _ = states.measure(a, int(Basis.Z), u)
        self.ctx.count_measurement("eve", rounds.size)
        return [(int(r), int(b), float(posterior[b])) for r, b in zip(rounds, bits)]


class QsdcMitm(AttackStrategy):
    """Store every qubit Bob returns and forward a random Z-basis forgery.

    When the SIFT positions are announced, the stored qubits at those rounds
    are measured in Z.  The payload is decoded only if Bob later announces
    the block coding.
    """

    retains_states = True

    def bind(self, ctx):
        super().bind(ctx)
        self.forged = np.zeros((ctx.n_rounds, ctx.size), dtype=np.int8)
        self.sift_bits: dict[int, dict[int, int]] = {}
        self.coding_key: dict[int, int] = {}
        self.check_positions: dict[int, np.ndarray] = {}
        self.message_length: dict[int, int] = {}

    def on_return(self, state, round_index, uniforms):
        state = state.append_zero()
        store = state.num_qubits - 1
        if not self.eve_qubits:
            self.eve_qubits = [store]
        state = state.apply(SWAP, [0, store])
        forged = (uniforms[:, 1] < 0.5).astype(np.int8)
        self.forged[round_index] = forged
        return state.apply(PAULI_X, [0], where=forged.astype(bool))

    def _measure_store(self, pos: int, rounds: np.ndarray) -> None:
        if rounds.size == 0:
            self.sift_bits[pos] = {}
            return
        store = self.eve_qubits[0]
        states = self.ctx.round_states_for(rounds, pos)
        u = self.ctx.measure_uniforms(pos)[rounds, 2]
        bits, post = states.measure(store, int(Basis.Z), u)
        self.ctx.count_measurement("eve", rounds.size)
        self.ctx.store_round_states(rounds, pos, post)
        self.sift_bits[pos] = dict(zip(rounds.tolist(), bits.tolist()))

    def on_classical(self, pos, msg):
        if msg.kind is MessageKind.QSDC_START:
            self.message_length[pos] = int(msg.payload)
        elif msg.kind is MessageKind.QSDC_SIFT_POSITIONS:
            self._measure_store(pos, np.asarray(msg.payload, dtype=np.intp))
        elif msg.kind is MessageKind.SIFT_ANNOUNCEMENT:
            self._measure_store(pos, np.asarray(msg.payload, dtype=np.intp))
        elif msg.kind is MessageKind.QSDC_ERROR_POSITIONS:
            fields = msg.fields
            self.check_positions[pos] = np.asarray(fields["message_indices"], dtype=np.intp)
        elif msg.kind is MessageKind.BLOCK_CODING_ANNOUNCEMENT:
            self.coding_key[pos] = int(msg.fields["coding_key"])

    def _guess(self, pos, rounds):
        known = self.sift_bits.get(pos, {})
        return [(int(r), int(known[int(r)]), 1.0) if int(r) in known else (int(r), 0, 0.5) for r in rounds]

    def finalize(self, pos, transcript):
        report = super().finalize(pos, transcript)
        if pos in self.coding_key and pos in self.check_positions and pos in self.message_length:
            report.payload_guess = self._decode(pos, transcript)
        return report

    def _decode(self, pos, transcript):
        sift_rounds = public_sift_key_rounds(transcript)
        known = self.sift_bits.get(pos, {})
        length = self.message_length[pos]
        if sift_rounds.size < length:
            return None
        m = np.array([known.get(int(r), 0) for r in sift_rounds[:length]], dtype=np.int8)
        keep = np.ones(length, dtype=bool)
        keep[self.check_positions[pos]] = False
        coded = m[keep]
        payload_len = self.ctx.cfg.n
        if coded.size != codeword_length(payload_len):
            return None
        return BlockCoding(self.coding_key[pos]).decode(coded, payload_len)


def helstrom_success(rho0: DensityMatrix, rho1: DensityMatrix) -> float:
    """Optimal probability of telling two equiprobable states apart."""
    return 0.5 + 0.5 * trace_distance(rho0, rho1)


@dataclass(frozen=True)
class EveInformation:
    sift_accuracy: float
    helstrom_bound: float | None


def eve_information(report: EveReport, truth) -> EveInformation:
    """Score Eve's guesses against a run's INFO rounds.

    ``truth`` is a ``RunResult``.  ``helstrom_bound`` needs
    ``report.ancilla_states`` (state tracking) and is ``None`` otherwise; it
    is the Helstrom success probability for Eve's INFO-round states grouped
    by Bob's bit.
    """
    info = np.asarray(truth.info_rounds, dtype=np.intp)
    if info.size == 0:
        raise ValueError("run has no INFO rounds")
    bob_bits = truth.rounds.fresh_bit[info]
    guesses = report.guesses()
    correct = sum(1 for r, b in zip(info.tolist(), bob_bits.tolist()) if guesses.get(r) == b)
    accuracy = correct / info.size

    bound = None
    if report.ancilla_states and all(int(r) in report.ancilla_states for r in info):
        groups = {0: [], 1: []}
        for r, b in zip(info.tolist(), bob_bits.tolist()):
            groups[int(b)].append(report.ancilla_states[r].matrix)
        if groups[0] and groups[1]:
            rho0 = DensityMatrix(np.mean(groups[0], axis=0))
            rho1 = DensityMatrix(np.mean(groups[1], axis=0))
            bound = helstrom_success(rho0, rho1)
    return EveInformation(accuracy, bound)
