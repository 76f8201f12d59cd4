"""
Exact outcome distributions for short runs.

Each round is expanded into every branch of its classical randomness
(Alice's choices, Bob's action and bit, noise Paulis, forged bits) and every
measurement outcome, with exact Born weights.  Rounds are independent and
identically distributed, so an N-round distribution is the N-fold product of
the per-round atoms; error counts are combined by convolution.

This module deliberately shares no code with the Monte Carlo engine: it
keeps its own state algebra (dense vectors with explicit tensor contraction),
its own reading of the attack descriptors and its own round classification.
Agreement between the two is then real evidence.

For direct communication the oracle treats Bob's transmitted bits as
uniform and independent, which holds when the framed message is at least
``N`` bits long so Bob never runs out.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .adversary import AttackSpec
from .channel import IDEAL, NOISE_FIRST, NoiseModel
from .parties.config import Protocol

MAX_ORACLE_ROUNDS = 6
MAX_ENUMERATED_ATOMS = 10**7
PRUNE = 1e-15

# Round classes, numbered as in the engine so outcome keys line up.
SIFT_KEY, Z_CTRL, X_CTRL, CTRL_X, DISCARD = range(5)
_ERROR_CLASSES = (SIFT_KEY, Z_CTRL, X_CTRL, CTRL_X)
_CHECKED = {Protocol.P1: (Z_CTRL, X_CTRL), Protocol.P2: (CTRL_X,), Protocol.QSDC: (Z_CTRL, X_CTRL)}


class OracleLimitExceeded(ValueError):
    """The requested run is too long to enumerate exactly."""


class RobustnessFinding(RuntimeError):
    """A probe gained information without causing any detectable disturbance."""

    def __init__(self, rows):
        super().__init__("information gain without disturbance")
        self.rows = rows


# ---------------------------------------------------------------------------
# Minimal state algebra
# ---------------------------------------------------------------------------

_R = 1 / math.sqrt(2)
_KET = {(0, 0): np.array([1, 0], complex), (0, 1): np.array([0, 1], complex),
        (1, 0): np.array([_R, _R], complex), (1, 1): np.array([_R, -_R], complex)}
_X = np.array([[0, 1], [1, 0]], complex)
_Y = np.array([[0, -1j], [1j, 0]], complex)
_Z = np.array([[1, 0], [0, -1]], complex)
_SWAP = np.eye(4, dtype=complex)[[0, 2, 1, 3]]


def _gate(psi: np.ndarray, u: np.ndarray, qubits: list[int]) -> np.ndarray:
    n = int(round(math.log2(psi.size)))
    k = len(qubits)
    t = psi.reshape((2,) * n)
    t = np.tensordot(u.reshape((2,) * (2 * k)), t, axes=(list(range(k, 2 * k)), qubits))
    # tensordot puts the acted-on axes first; move them back into place.
    rest = [q for q in range(n) if q not in qubits]
    order = np.argsort(qubits + rest)
    return np.transpose(t, order).reshape(-1)


def _adjoin(psi: np.ndarray, ket: np.ndarray) -> np.ndarray:
    return np.kron(psi, ket)


def _project(psi: np.ndarray, qubit: int, basis: int, bit: int) -> tuple[float, np.ndarray]:
    v = _KET[(basis, bit)]
    out = _gate(psi, np.outer(v, v.conj()), [qubit])
    w = float(np.vdot(out, out).real)
    return w, (out / math.sqrt(w) if w > 0 else out)


def _reduce(psi: np.ndarray, keep: list[int]) -> np.ndarray:
    n = int(round(math.log2(psi.size)))
    rest = [q for q in range(n) if q not in keep]
    m = np.transpose(psi.reshape((2,) * n), keep + rest).reshape(1 << len(keep), -1)
    return m @ m.conj().T


def _trace_norm_half(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


# ---------------------------------------------------------------------------
# Per-round enumeration
# ---------------------------------------------------------------------------


@dataclass
class _Branch:
    weight: float
    psi: np.ndarray
    rec: dict
    eve: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(round(math.log2(self.psi.size)))

    def fork(self, weight, psi, eve=None, **rec):
        return _Branch(self.weight * weight, psi, {**self.rec, **rec}, list(self.eve if eve is None else eve))


@dataclass(frozen=True)
class RoundAtom:
    """One fully resolved branch of a single round.

    ``eve_state`` is Eve's reduced density matrix at the end of the round
    (None when she keeps no quantum or classical record).
    """

    weight: float
    prep_basis: int
    prep_bit: int
    action: int  # 0 = CTRL, 1 = SIFT
    fresh_bit: int  # -1 on CTRL
    meas_basis: int
    meas_bit: int
    cls: int
    error: int
    eve_state: np.ndarray | None = None


def _noise_branches(noise: NoiseModel):
    if noise.is_ideal:
        return [(1.0, None)]
    if noise.kind == "bitflip":
        return [(1 - noise.p, None), (noise.p, _X)]
    return [(1 - noise.p, None)] + [(noise.p / 3, p) for p in (_X, _Y, _Z)]


def _noise(branches, noise):
    out = []
    for b in branches:
        for w, pauli in _noise_branches(noise):
            if w <= 0:
                continue
            out.append(b.fork(w, b.psi if pauli is None else _gate(b.psi, pauli, [0])))
    return out


def _probe_unitary(spec: AttackSpec) -> tuple[np.ndarray, np.ndarray]:
    """(unitary on transit+ancilla, initial ancilla ket)."""
    t = spec.theta
    if spec.family == "phase":
        return np.diag([1, 1, 1, np.exp(2j * t)]).astype(complex), _KET[(1, 0)]
    u = np.zeros((4, 4), complex)
    u[0, 0] = u[1, 1] = 1
    # |1>|0> -> |1>(cos t|0> + sin t|1>),  |1>|1> -> |1>(-sin t|0> + cos t|1>)
    u[2, 2], u[3, 2] = math.cos(t), math.sin(t)
    u[2, 3], u[3, 3] = -math.sin(t), math.cos(t)
    return u, _KET[(0, 0)]


def _eve(branches, spec: AttackSpec, leg: str):
    if spec.kind == "none" or leg not in spec.legs:
        return branches
    out = []
    for b in branches:
        if spec.kind == "ir":
            for bit in (0, 1):
                w, post = _project(b.psi, 0, int(spec.basis), bit)
                if w > PRUNE:
                    out.append(b.fork(w, _adjoin(post, _KET[(0, bit)]), b.eve + [b.n]))
        elif spec.kind == "probe":
            u, ket = _probe_unitary(spec)
            a = b.n
            out.append(b.fork(1.0, _gate(_adjoin(b.psi, ket), u, [0, a]), b.eve + [a]))
        else:  # mitm: keep Bob's qubit, send a random Z state
            store = b.n
            kept = _gate(_adjoin(b.psi, _KET[(0, 0)]), _SWAP, [0, store])
            for e in (0, 1):
                psi = _gate(kept, _X, [0]) if e else kept
                out.append(b.fork(0.5, _adjoin(psi, _KET[(0, e)]), b.eve + [store, store + 1]))
    return out


def _bob(branches, protocol, q):
    out = []
    for b in branches:
        with_env = _adjoin(b.psi, _KET[(0, 0)])
        env = b.n
        if q < 1:
            out.append(b.fork(1 - q, with_env, action=0, fresh=-1))
        if q > 0:
            swapped = _gate(with_env, _SWAP, [0, env])
            for bit in (0, 1):
                psi = _gate(swapped, _X, [0]) if bit else swapped
                out.append(b.fork(q / 2, psi, action=1, fresh=bit))
    return out


def _alice_measure(branches, protocol):
    out = []
    for b in branches:
        if protocol is Protocol.P1:
            choices = [(1.0, b.rec["prep_basis"])]
        elif protocol is Protocol.P2:
            choices = [(0.5, 0), (0.5, 1)]
        else:
            choices = [(1.0, 0 if b.rec["action"] == 1 else b.rec["prep_basis"])]
        for wb, basis in choices:
            for bit in (0, 1):
                w, post = _project(b.psi, 0, basis, bit)
                if w * wb > PRUNE:
                    out.append(b.fork(w * wb, post, meas_basis=basis, meas_bit=bit))
    return out


def _classify(protocol, rec) -> tuple[int, int]:
    sift = rec["action"] == 1
    if protocol is Protocol.P2:
        if sift and rec["meas_basis"] == 0:
            cls = SIFT_KEY
        elif not sift and rec["meas_basis"] == 1:
            cls = CTRL_X
        else:
            return DISCARD, 0
    elif sift:
        if protocol is Protocol.P1 and rec["prep_basis"] == 1:
            return DISCARD, 0
        cls = SIFT_KEY
    else:
        cls = Z_CTRL if rec["prep_basis"] == 0 else X_CTRL
    expected = rec["fresh"] if sift else rec["prep_bit"]
    return cls, int(rec["meas_bit"] != expected)


def round_atoms(protocol, attack="none", noise: NoiseModel = IDEAL, noise_order: str = NOISE_FIRST,
                bob_sift_prob: float = 0.5) -> list[RoundAtom]:
    """Every resolved branch of one round with its exact probability."""
    protocol = Protocol(protocol)
    spec = AttackSpec.parse(attack)
    if protocol is Protocol.P2:
        preps = [(1.0, 1, 0)]
    else:
        preps = [(0.25, basis, bit) for basis in (0, 1) for bit in (0, 1)]
    branches = [_Branch(w, _KET[(basis, bit)].copy(), {"prep_basis": basis, "prep_bit": bit}) for w, basis, bit in preps]

    noise_first = noise_order == NOISE_FIRST
    branches = _noise(branches, noise) if noise_first else branches
    branches = _eve(branches, spec, "fwd")
    branches = branches if noise_first else _noise(branches, noise)
    branches = _bob(branches, protocol, bob_sift_prob)
    branches = _noise(branches, noise) if not noise_first else branches
    branches = _eve(branches, spec, "ret")
    branches = _noise(branches, noise) if noise_first else branches
    branches = _alice_measure(branches, protocol)

    atoms = []
    for b in branches:
        if b.weight <= PRUNE:
            continue
        cls, err = _classify(protocol, b.rec)
        eve_state = _reduce(b.psi, b.eve) if b.eve else None
        atoms.append(
            RoundAtom(b.weight, b.rec["prep_basis"], b.rec["prep_bit"], b.rec["action"], b.rec["fresh"],
                      b.rec["meas_basis"], b.rec["meas_bit"], cls, err, eve_state)
        )
    return atoms


# ---------------------------------------------------------------------------
# N-round distributions
# ---------------------------------------------------------------------------


def _signature(atom: RoundAtom) -> tuple[int, ...]:
    return tuple(int(atom.error and atom.cls == c) for c in _ERROR_CLASSES)


@dataclass
class ExactDistribution:
    protocol: Protocol
    n_rounds: int
    round_atoms: list[RoundAtom]

    def total_atoms(self) -> int:
        return len(self.round_atoms) ** self.n_rounds

    def atoms(self):
        """Every N-round atom as ``(probability, tuple of RoundAtom)``."""
        if self.total_atoms() > MAX_ENUMERATED_ATOMS:
            raise OracleLimitExceeded(f"{self.total_atoms()} atoms exceed {MAX_ENUMERATED_ATOMS}")
        for combo in itertools.product(self.round_atoms, repeat=self.n_rounds):
            yield math.prod(a.weight for a in combo), combo

    def _round_signatures(self) -> dict[tuple, float]:
        sig = defaultdict(float)
        for a in self.round_atoms:
            sig[_signature(a)] += a.weight
        return dict(sig)

    def error_count_distribution(self) -> dict[tuple[int, ...], float]:
        """Probability of each vector of per-class error counts over N rounds."""
        per_round = self._round_signatures()
        dist = {(0,) * len(_ERROR_CLASSES): 1.0}
        for _ in range(self.n_rounds):
            nxt = defaultdict(float)
            for counts, p in dist.items():
                for sig, w in per_round.items():
                    nxt[tuple(c + s for c, s in zip(counts, sig))] += p * w
            dist = dict(nxt)
        return dist

    def outcome_distribution(self) -> dict[tuple, float]:
        """Distribution of ``(detected, sift, z_ctrl, x_ctrl, ctrl_x error counts)``."""
        checked = [_ERROR_CLASSES.index(c) for c in _CHECKED[self.protocol]]
        return {(any(counts[i] for i in checked),) + counts: p for counts, p in self.error_count_distribution().items()}

    def detection_probability(self) -> float:
        return float(sum(p for key, p in self.outcome_distribution().items() if key[0]))

    def class_probability(self, cls: int) -> float:
        """Per-round probability of a class."""
        return float(sum(a.weight for a in self.round_atoms if a.cls == cls))

    def error_probability(self, cls: int) -> float:
        """Per-round probability of an error given the class."""
        mass = self.class_probability(cls)
        if mass <= 0:
            raise ValueError(f"class {cls} has zero probability")
        return sum(a.weight for a in self.round_atoms if a.cls == cls and a.error) / mass


def exact_distribution(protocol, attack="none", n_rounds: int = 1, noise: NoiseModel = IDEAL,
                       noise_order: str = NOISE_FIRST, bob_sift_prob: float = 0.5) -> ExactDistribution:
    if not 1 <= n_rounds <= MAX_ORACLE_ROUNDS:
        raise OracleLimitExceeded(f"oracle runs take 1..{MAX_ORACLE_ROUNDS} rounds, got {n_rounds}")
    protocol = Protocol(protocol)
    atoms = round_atoms(protocol, attack, noise, noise_order, bob_sift_prob)
    return ExactDistribution(protocol, n_rounds, atoms)


def from_config(cfg, attack="none") -> ExactDistribution:
    """Oracle for a ``ProtocolConfig`` whose ``num_rounds`` is small."""
    return exact_distribution(cfg.protocol, attack, cfg.N, cfg.noise, cfg.noise_order, cfg.bob_sift_prob)


def exact_eve_info(dist: ExactDistribution) -> float:
    """Eve's per-round advantage on a sifted-key bit.

    Half the trace distance between her state given Bob's bit 0 and given
    bit 1, over the SIFT_KEY branches.  Her best guessing probability is
    one half plus this value.
    """
    groups = {0: [], 1: []}
    for a in dist.round_atoms:
        if a.cls == SIFT_KEY:
            groups[a.fresh_bit].append(a)
    mass = {b: sum(a.weight for a in g) for b, g in groups.items()}
    if mass[0] <= 0 or mass[1] <= 0:
        raise ValueError("no sifted-key probability mass")
    if all(a.eve_state is None for g in groups.values() for a in g):
        return 0.0
    rho = {b: sum(a.weight * a.eve_state for a in g) / mass[b] for b, g in groups.items()}
    return 0.5 * _trace_norm_half(rho[0], rho[1])


def robustness_scan(protocol, family: str = "rot", grid=None, n_rounds: int = 4, leg: str = "ret",
                    raise_on_finding: bool = True) -> list[dict]:
    """Information and detection probability of a probe across angles.

    Each row has ``theta, info, disturbance, atoms, protocol, family``.
    ``disturbance`` is the probability that at least one checked round shows
    an error in ``n_rounds`` rounds.  Any row with information but no
    disturbance raises ``RobustnessFinding`` (unless told not to).
    """
    if grid is None:
        grid = np.linspace(0.0, math.pi / 2, 21)
    protocol = Protocol(protocol)
    suffix = "" if family == "rot" else f":{family}"
    rows = []
    for theta in grid:
        spec = AttackSpec.parse(f"probe:{float(theta)!r}:{leg}{suffix}")
        dist = exact_distribution(protocol, spec, n_rounds)
        rows.append(
            {
                "theta": float(theta),
                "info": exact_eve_info(dist),
                "disturbance": dist.detection_probability(),
                "atoms": dist.total_atoms(),
                "protocol": protocol.value,
                "family": family,
            }
        )
    bad = [r for r in rows if r["info"] > 1e-9 and r["disturbance"] <= 1e-9]
    if bad and raise_on_finding:
        raise RobustnessFinding(bad)
    return rows
