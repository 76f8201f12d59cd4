"""
Protocol runs: quantum exchange followed by each trial's public discussion.

``simulate`` runs a batch of trials and returns one result per trial.
``run_protocol1``, ``run_protocol2`` and ``run_qsdc`` are single-trial
conveniences.  ``simulate_exchange`` stops after the quantum phase and
returns per-trial class counts only, which is all the large statistical
checks need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..adversary import AttackSpec
from ..channel import ClassicalMessage, MessageKind, Sender, Transcript, broadcast, pack_bits
from ..postproc import (
    BlockCoding,
    VerifyFail,
    ecc_reconcile,
    final_key_length,
    select_test_bits,
    toeplitz_hash,
)
from ..rng import DOMAIN_BOB, DOMAIN_PAYLOAD, classical_generator
from .agents import build_qsdc_message
from .config import Protocol, ProtocolConfig
from .engine import Exchange
from .records import CHECK_CLASSES, AbortReason, BobAction, QsdcResult, RoundClass, RunResult


def _exceeds(errors: int, count: int, threshold: float) -> bool:
    # A class with no rounds gives no evidence either way.
    return count > 0 and errors / count > threshold


class _Discussion:
    """Transcript bookkeeping for one trial."""

    def __init__(self, ex: Exchange, pos: int):
        self.observers = [ex.strategy.observer(pos)]
        self.transcript = Transcript()

    def say(self, sender: Sender, kind: MessageKind, payload=None) -> None:
        self.transcript = broadcast(ClassicalMessage(sender, kind, payload), self.transcript, self.observers)

    def channel(self, count: int) -> None:
        self.transcript = self.transcript.with_channel_events(count)

    def abort(self, sender: Sender, reason: AbortReason) -> AbortReason:
        self.say(sender, MessageKind.ABORT, {"reason": reason.value})
        return reason


def _ctrl_abort(cfg: ProtocolConfig, stats) -> bool:
    if not cfg.checks_enabled:
        return False
    return any(
        _exceeds(stats.errors[c], stats.counts[c], cfg.p_ctrl_threshold) for c in CHECK_CLASSES[cfg.protocol]
    )


def _key_discussion(ex: Exchange, pos: int) -> RunResult:
    cfg = ex.cfg
    trial = int(ex.trials[pos])
    table = ex.table(pos)
    stats = ex.stats(pos)
    bob_rng = classical_generator(cfg.seed, trial, DOMAIN_BOB)
    talk = _Discussion(ex, pos)
    talk.channel(2 * ex.n_rounds)

    announced = table.meas_basis if cfg.protocol is Protocol.P2 else table.prep_basis
    talk.say(Sender.BOB, MessageKind.SIFT_ANNOUNCEMENT, np.nonzero(table.action == BobAction.SIFT)[0])
    talk.say(Sender.ALICE, MessageKind.BASIS_ANNOUNCEMENT, "".join("ZX"[b] for b in announced.tolist()))

    result = RunResult(cfg.protocol, stats, table, talk.transcript, trial=trial, security_margin=cfg.security_margin_s)
    sift_key = table.indices(RoundClass.SIFT_KEY)
    n = cfg.n

    def finish(reason: AbortReason | None = None) -> RunResult:
        result.abort_reason = reason
        result.transcript = talk.transcript
        result.eve_report = ex.strategy.finalize(pos, talk.transcript)
        return result

    if sift_key.size < 2 * n:
        return finish(talk.abort(Sender.BOB, AbortReason.TOO_FEW_SIFTED))
    if _ctrl_abort(cfg, stats):
        return finish(talk.abort(Sender.ALICE, AbortReason.CTRL_ERROR_RATE))

    test, remaining = select_test_bits(sift_key, n, bob_rng)
    info = remaining[:n]
    result.test_rounds, result.info_rounds = test, info
    talk.say(Sender.BOB, MessageKind.TEST_SELECTION, test)
    alice_test = table.meas_bit[test]
    talk.say(Sender.ALICE, MessageKind.TEST_VALUES, pack_bits(alice_test))
    stats.test_count = int(test.size)
    stats.test_errors = int(np.count_nonzero(alice_test != table.fresh_bit[test]))
    if cfg.checks_enabled and _exceeds(stats.test_errors, stats.test_count, cfg.p_test_threshold):
        return finish(talk.abort(Sender.BOB, AbortReason.TEST_ERROR_RATE))

    alice_info, bob_info = table.meas_bit[info], table.fresh_bit[info]
    seeds = bob_rng.integers(0, 2**63, size=cfg.verify_checks, dtype=np.int64)
    try:
        ecc = ecc_reconcile(alice_info, bob_info, cfg.ecc, seeds.tolist(), talk.transcript, talk.observers)
    except VerifyFail as exc:
        talk.transcript = exc.transcript
        result.leak = exc.leak
        return finish(talk.abort(Sender.ALICE, AbortReason.ECC_VERIFY_FAIL))
    talk.transcript = ecc.transcript
    result.leak = ecc.leak

    m = final_key_length(n, ecc.leak, cfg.security_margin_s)
    if m <= 0:
        return finish(talk.abort(Sender.BOB, AbortReason.KEY_LENGTH_NONPOSITIVE))
    seed = bob_rng.integers(0, 2, size=m + n - 1, dtype=np.int8)
    talk.say(Sender.BOB, MessageKind.PA_DATA, {"n": n, "m": m, "seed": pack_bits(seed)})
    result.final_key_alice = toeplitz_hash(ecc.corrected, seed)
    result.final_key_bob = toeplitz_hash(bob_info, seed)
    return finish()


def _qsdc_discussion(ex: Exchange, pos: int) -> QsdcResult:
    cfg = ex.cfg
    trial = int(ex.trials[pos])
    message = ex.messages[pos]
    table = ex.table(pos)
    stats = ex.stats(pos)
    talk = _Discussion(ex, pos)
    talk.say(Sender.BOB, MessageKind.QSDC_START, message.encoded.size)
    talk.channel(2 * ex.n_rounds)
    talk.say(Sender.ALICE, MessageKind.RECEIPT_CONFIRMATION, ex.n_rounds)
    sift = np.nonzero(table.action == BobAction.SIFT)[0]
    talk.say(Sender.BOB, MessageKind.QSDC_SIFT_POSITIONS, sift)

    run = RunResult(cfg.protocol, stats, table, talk.transcript, trial=trial)
    run.info_rounds = sift
    received = table.meas_bit[sift]
    reason = None
    if sift.size < message.encoded.size:
        reason = talk.abort(Sender.ALICE, AbortReason.TOO_FEW_SIFTED)
    elif _ctrl_abort(cfg, stats):
        reason = talk.abort(Sender.ALICE, AbortReason.CTRL_ERROR_RATE)
    else:
        checks = message.check_positions
        talk.say(
            Sender.BOB,
            MessageKind.QSDC_ERROR_POSITIONS,
            {"message_indices": checks, "values": pack_bits(message.encoded[checks])},
        )
        run.test_rounds = sift[checks]
        stats.test_count = int(checks.size)
        stats.test_errors = int(np.count_nonzero(received[checks] != message.encoded[checks]))
        if cfg.checks_enabled and _exceeds(stats.test_errors, stats.test_count, cfg.p_test_threshold):
            reason = talk.abort(Sender.ALICE, AbortReason.TEST_ERROR_RATE)

    delivered = None
    if reason is None:
        talk.say(Sender.BOB, MessageKind.BLOCK_CODING_ANNOUNCEMENT, {"coding_key": message.coding_key})
        delivered = BlockCoding(message.coding_key).decode(received[message.data_positions], cfg.n)
    else:
        talk.say(Sender.BOB, MessageKind.BLOCK_CODING_WITHHELD)

    run.abort_reason = reason
    run.transcript = talk.transcript
    report = ex.strategy.finalize(pos, talk.transcript)
    run.eve_report = report
    info = 0.0
    if report.payload_guess is not None:
        accuracy = float(np.mean(report.payload_guess == message.payload))
        info = float(np.clip(2 * accuracy - 1, 0.0, 1.0))
    return QsdcResult(delivered, stats.detected, info, reason is not None, run, message)


def qsdc_messages(cfg: ProtocolConfig, trials, payload=None) -> list:
    """Bob's framed message for each trial.

    Without ``payload`` each trial sends a random payload of ``cfg.n`` bits.
    """
    out = []
    for trial in np.asarray(trials, dtype=np.uint64).reshape(-1).tolist():
        bits = payload
        if bits is None:
            bits = classical_generator(cfg.seed, trial, DOMAIN_PAYLOAD).integers(0, 2, size=cfg.n, dtype=np.int8)
        out.append(build_qsdc_message(bits, cfg, classical_generator(cfg.seed, trial, DOMAIN_BOB)))
    return out


def _exchange(cfg, attack, trials, payload=None) -> Exchange:
    spec = AttackSpec.parse(attack)
    trials = np.asarray(trials, dtype=np.uint64).reshape(-1)
    messages = qsdc_messages(cfg, trials, payload) if cfg.protocol is Protocol.QSDC else None
    return Exchange(cfg, spec.build(), trials, messages).run()


def simulate(cfg: ProtocolConfig, attack="none", trials=(0,), payload=None, return_exchange: bool = False):
    """Run full protocol trials in one lockstep batch.

    Returns a list of ``RunResult`` (P1/P2) or ``QsdcResult`` (QSDC), and the
    ``Exchange`` as well when ``return_exchange`` is set.
    """
    ex = _exchange(cfg, attack, trials, payload)
    finish = _qsdc_discussion if cfg.protocol is Protocol.QSDC else _key_discussion
    results = [finish(ex, pos) for pos in range(ex.size)]
    return (results, ex) if return_exchange else results


@dataclass
class ExchangeSummary:
    """Per-trial class counts after the quantum phase only.

    ``counts`` and ``errors`` have shape ``(B, len(RoundClass))``.
    """

    protocol: Protocol
    trials: np.ndarray
    counts: np.ndarray
    errors: np.ndarray

    @property
    def detected(self) -> np.ndarray:
        cols = [int(c) for c in CHECK_CLASSES[self.protocol]]
        return self.errors[:, cols].sum(axis=1) > 0

    def outcome_keys(self) -> list[tuple]:
        """Same tuples as ``RunStats.outcome_key`` for each trial."""
        cols = [int(c) for c in RoundClass if c is not RoundClass.DISCARD]
        return [(bool(d),) + tuple(int(v) for v in row) for d, row in zip(self.detected, self.errors[:, cols])]


def simulate_exchange(cfg: ProtocolConfig, attack="none", trials=(0,)) -> ExchangeSummary:
    ex = _exchange(cfg, attack, trials)
    counts, errors = ex.class_counts()
    return ExchangeSummary(cfg.protocol, ex.trials, counts, errors)


def _single(protocol: Protocol, cfg: ProtocolConfig, attack, trial: int):
    if cfg.protocol is not protocol:
        cfg = cfg.replace(protocol=protocol)
    return cfg, simulate(cfg, attack, [trial])[0]


def run_protocol1(cfg: ProtocolConfig, attack="none", trial: int = 0) -> RunResult:
    return _single(Protocol.P1, cfg, attack, trial)[1]


def run_protocol2(cfg: ProtocolConfig, attack="none", trial: int = 0) -> RunResult:
    return _single(Protocol.P2, cfg, attack, trial)[1]


def run_qsdc(cfg: ProtocolConfig, message=None, attack="none", trial: int = 0) -> QsdcResult:
    """One QSDC run; ``message`` is a bit array of length ``cfg.n`` or None."""
    if cfg.protocol is not Protocol.QSDC:
        cfg = cfg.replace(protocol=Protocol.QSDC)
    return simulate(cfg, attack, [trial], payload=message)[0]
