"""
Lockstep quantum exchange for a batch of trials.

Trials run side by side along the batch axis; rounds run one after another,
so each trial has exactly one qubit in flight at any time.  Every random
choice reads the counter-based streams in ``sqkd.rng``, which makes a trial's
outcome independent of the batch it happens to share.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..adversary import AttackStrategy
from ..channel import QuantumChannel
from ..qcore import Basis, StateBatch
from ..rng import SLOT_EVE, SLOT_MEASURE, SLOT_NOISE, SLOT_PARTIES, RoundStreams
from .agents import Alice, Bob
from .config import Protocol, ProtocolConfig
from .records import BobAction, QsdcMessage, RoundClass, RoundTable, RunStats

_COLUMNS = ("prep_basis", "prep_bit", "action", "fresh_bit", "meas_basis", "meas_bit")


def classify(protocol: Protocol, cols: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Round classes and error flags from the per-round columns.

    An error is a mismatch between Alice's outcome and the value she should
    have seen: Bob's fresh bit on SIFT rounds, her own prepared bit on CTRL
    rounds.  DISCARD rounds carry no error.
    """
    sift = cols["action"] == BobAction.SIFT
    prep_z = cols["prep_basis"] == Basis.Z
    cls = np.full(sift.shape, RoundClass.DISCARD, dtype=np.int8)
    if protocol is Protocol.P2:
        meas_z = cols["meas_basis"] == Basis.Z
        cls[sift & meas_z] = RoundClass.SIFT_KEY
        cls[~sift & ~meas_z] = RoundClass.CTRL_X
    else:
        key = sift & prep_z if protocol is Protocol.P1 else sift
        cls[key] = RoundClass.SIFT_KEY
        cls[~sift & prep_z] = RoundClass.Z_CTRL
        cls[~sift & ~prep_z] = RoundClass.X_CTRL
    expected = np.where(sift, cols["fresh_bit"], cols["prep_bit"])
    error = ((cols["meas_bit"] != expected) & (cls != RoundClass.DISCARD)).astype(np.int8)
    return cls, error


class Exchange:
    """Quantum phase of a batch of trials.

    Parameters
    ----------
    cfg : ProtocolConfig
    strategy : AttackStrategy
        Freshly built; it is bound to this exchange.
    trials : array_like of int
        Trial indices; together with ``cfg.seed`` they key the random streams.
    messages : list of QsdcMessage, optional
        One per trial, required for QSDC.
    """

    def __init__(self, cfg: ProtocolConfig, strategy: AttackStrategy, trials, messages: list[QsdcMessage] | None = None):
        self.cfg = cfg
        self.trials = np.asarray(trials, dtype=np.uint64).reshape(-1)
        self.size = self.trials.size
        self.n_rounds = cfg.N
        self.streams = RoundStreams(cfg.seed, self.trials)
        self.measurements: Counter[str] = Counter()
        self.alice = Alice(cfg.protocol)
        self.bob = Bob(cfg.bob_sift_prob)
        self.channel = QuantumChannel(cfg.noise, cfg.noise_order)
        if cfg.protocol is Protocol.QSDC:
            if messages is None or len(messages) != self.size:
                raise ValueError("QSDC needs one message per trial")
        self.messages = messages
        self.retain = cfg.protocol is Protocol.QSDC or strategy.retains_states or cfg.track_eve_states
        self.round_states: np.ndarray | None = None
        self.cols: dict[str, np.ndarray] = {}
        self.classes: np.ndarray | None = None
        self.errors: np.ndarray | None = None
        self._measure_cache: dict[int, np.ndarray] = {}
        self.strategy = strategy
        strategy.bind(self)

    # -- services for the eavesdropper ------------------------------------

    def count_measurement(self, actor: str, count: int) -> None:
        self.measurements[actor] += int(count)

    def measure_uniforms(self, pos: int) -> np.ndarray:
        """Measurement-slot uniforms of one trial for every round, ``(N, 4)``."""
        cached = self._measure_cache.get(pos)
        if cached is None:
            one = RoundStreams(self.cfg.seed, self.trials[pos : pos + 1])
            cached = one.span(SLOT_MEASURE, 0, self.n_rounds)[0]
            self._measure_cache = {pos: cached}
        return cached

    def round_state(self, round_index: int, pos: int) -> StateBatch:
        return StateBatch(self.round_states[round_index, pos : pos + 1])

    def round_states_for(self, rounds: np.ndarray, pos: int) -> StateBatch:
        return StateBatch(self.round_states[rounds, pos])

    def store_round_states(self, rounds: np.ndarray, pos: int, states: StateBatch) -> None:
        self.round_states[rounds, pos] = states.amplitudes

    # -- the exchange -------------------------------------------------------

    def _keep(self, r: int, state: StateBatch) -> None:
        if not self.retain:
            return
        if self.round_states is None:
            self.round_states = np.empty((self.n_rounds,) + state.amplitudes.shape, dtype=complex)
        self.round_states[r] = state.amplitudes

    def run(self) -> "Exchange":
        cfg, size, n_rounds = self.cfg, self.size, self.n_rounds
        qsdc = cfg.protocol is Protocol.QSDC
        cols = {name: np.full((size, n_rounds), -1, dtype=np.int8) for name in _COLUMNS}
        if qsdc:
            encoded = np.stack([m.encoded for m in self.messages])
            sent = np.zeros(size, dtype=np.intp)
        rows = np.arange(size)

        for r in range(n_rounds):
            u_party = self.streams.uniforms(r, SLOT_PARTIES)
            u_noise = self.streams.uniforms(r, SLOT_NOISE)
            u_eve = self.streams.uniforms(r, SLOT_EVE)
            u_meas = self.streams.uniforms(r, SLOT_MEASURE)

            bases, bits = self.alice.prepare_choices(u_party)
            if qsdc:
                actions = self.bob.choose(u_party, encoded.shape[1] - sent)
                next_bit = encoded[rows, np.minimum(sent, encoded.shape[1] - 1)]
                fresh = np.where(actions == BobAction.SIFT, next_bit, -1).astype(np.int8)
                sent += actions
            else:
                actions = self.bob.choose(u_party)
                fresh = np.where(actions == BobAction.SIFT, u_party[:, 3] >= 0.5, -1).astype(np.int8)

            state = self.alice.prepare(bases, bits)
            state = self.channel.transmit_forward(state, r, u_noise[:, :2], u_eve[:, :2], self.strategy.on_forward)
            state = self.bob.act(state, actions, fresh)
            state = self.channel.transmit_return(state, r, u_noise[:, 2:], u_eve[:, 2:], self.strategy.on_return)

            meas_bases = self.alice.measurement_bases(bases, actions, u_meas[:, 0])
            if not qsdc:
                cols["meas_bit"][:, r], state = state.measure(0, meas_bases, u_meas[:, 1])
                self.count_measurement("alice", size)
            self._keep(r, state)

            cols["prep_basis"][:, r] = bases
            cols["prep_bit"][:, r] = bits
            cols["action"][:, r] = actions
            cols["fresh_bit"][:, r] = fresh
            cols["meas_basis"][:, r] = meas_bases

        if qsdc:
            self._measure_register(cols)
        self.cols = cols
        self.classes, self.errors = classify(cfg.protocol, cols)
        return self

    def _measure_register(self, cols) -> None:
        """QSDC: Alice measures her stored qubits once Bob's SIFT rounds are public."""
        for r in range(self.n_rounds):
            u = self.streams.uniforms(r, SLOT_MEASURE)
            bits, post = StateBatch(self.round_states[r]).measure(0, cols["meas_basis"][:, r], u[:, 1])
            cols["meas_bit"][:, r] = bits
            self.round_states[r] = post.amplitudes
        self.count_measurement("alice", self.size * self.n_rounds)

    # -- per-trial views ----------------------------------------------------

    def class_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-trial counts and error counts, each ``(B, len(RoundClass))``."""
        counts = np.stack([(self.classes == c).sum(axis=1) for c in RoundClass], axis=1)
        errors = np.stack([((self.classes == c) & (self.errors == 1)).sum(axis=1) for c in RoundClass], axis=1)
        return counts, errors

    def table(self, pos: int) -> RoundTable:
        return RoundTable(
            **{name: self.cols[name][pos].copy() for name in _COLUMNS},
            classification=self.classes[pos].copy(),
            error=self.errors[pos].copy(),
        )

    def stats(self, pos: int) -> RunStats:
        cls, err = self.classes[pos], self.errors[pos]
        counts = {c: int(np.count_nonzero(cls == c)) for c in RoundClass}
        errors = {c: int(np.count_nonzero((cls == c) & (err == 1))) for c in RoundClass}
        return RunStats(self.cfg.protocol, self.cfg.n, self.n_rounds, counts, errors)
