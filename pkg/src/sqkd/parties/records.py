"""Per-round ledgers and run outcomes."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..channel import Transcript
from ..qcore import Basis
from .config import Protocol


class BobAction(enum.IntEnum):
    CTRL = 0
    SIFT = 1


class RoundClass(enum.IntEnum):
    SIFT_KEY = 0
    Z_CTRL = 1
    X_CTRL = 2
    CTRL_X = 3
    DISCARD = 4


#: Classes whose mismatches reveal disturbance without any sampling.
CHECK_CLASSES = {
    Protocol.P1: (RoundClass.Z_CTRL, RoundClass.X_CTRL),
    Protocol.P2: (RoundClass.CTRL_X,),
    Protocol.QSDC: (RoundClass.Z_CTRL, RoundClass.X_CTRL),
}


class AbortReason(str, enum.Enum):
    TOO_FEW_SIFTED = "TooFewSifted"
    CTRL_ERROR_RATE = "CtrlErrorRate"
    TEST_ERROR_RATE = "TestErrorRate"
    ECC_VERIFY_FAIL = "EccVerifyFail"
    KEY_LENGTH_NONPOSITIVE = "KeyLengthNonpositive"
    MESSAGE_EXHAUSTED = "MessageExhausted"


@dataclass(frozen=True)
class RoundRecord:
    index: int
    alice_prep: Optional[tuple[Basis, int]]
    bob_action: BobAction
    bob_fresh_bit: Optional[int]
    alice_meas_basis: Optional[Basis]
    alice_meas_bit: Optional[int]
    classification: RoundClass

    def __post_init__(self):
        if (self.bob_action is BobAction.SIFT) != (self.bob_fresh_bit is not None):
            raise ValueError("a fresh bit is present exactly on SIFT rounds")


@dataclass
class RoundTable:
    """Column store of one trial's rounds; ``records()`` builds RoundRecords.

    Absent values are stored as -1.
    """

    prep_basis: np.ndarray
    prep_bit: np.ndarray
    action: np.ndarray
    fresh_bit: np.ndarray
    meas_basis: np.ndarray
    meas_bit: np.ndarray
    classification: np.ndarray
    error: np.ndarray

    def __len__(self):
        return int(self.action.size)

    def indices(self, cls: RoundClass) -> np.ndarray:
        return np.nonzero(self.classification == cls)[0]

    def records(self) -> list[RoundRecord]:
        out = []
        for i in range(len(self)):
            action = BobAction(int(self.action[i]))
            out.append(
                RoundRecord(
                    index=i,
                    alice_prep=(Basis(int(self.prep_basis[i])), int(self.prep_bit[i])),
                    bob_action=action,
                    bob_fresh_bit=int(self.fresh_bit[i]) if action is BobAction.SIFT else None,
                    alice_meas_basis=Basis(int(self.meas_basis[i])) if self.meas_basis[i] >= 0 else None,
                    alice_meas_bit=int(self.meas_bit[i]) if self.meas_bit[i] >= 0 else None,
                    classification=RoundClass(int(self.classification[i])),
                )
            )
        return out

    def to_rows(self) -> list[dict]:
        return [
            {
                "index": r.index,
                "alice_prep": [r.alice_prep[0].name, r.alice_prep[1]],
                "bob_action": r.bob_action.name,
                "bob_fresh_bit": r.bob_fresh_bit,
                "alice_meas_basis": r.alice_meas_basis.name if r.alice_meas_basis is not None else None,
                "alice_meas_bit": r.alice_meas_bit,
                "classification": r.classification.name,
            }
            for r in self.records()
        ]


@dataclass
class RunStats:
    """Per-class counts and error counts.  Rates are derived, never stored."""

    protocol: Protocol
    n: int
    N: int
    counts: dict[RoundClass, int]
    errors: dict[RoundClass, int]
    test_count: int = 0
    test_errors: int = 0

    def rate(self, cls: RoundClass) -> float | None:
        c = self.counts.get(cls, 0)
        return self.errors.get(cls, 0) / c if c else None

    @property
    def detected(self) -> bool:
        """Any mismatch on a CTRL check class."""
        return any(self.errors.get(c, 0) for c in CHECK_CLASSES[self.protocol])

    @property
    def sifted(self) -> int:
        return self.counts.get(RoundClass.SIFT_KEY, 0)

    @property
    def test_rate(self) -> float | None:
        return self.test_errors / self.test_count if self.test_count else None

    def outcome_key(self) -> tuple:
        """``(detected, sift, z_ctrl, x_ctrl, ctrl_x error counts)``."""
        return (self.detected,) + tuple(self.errors.get(c, 0) for c in RoundClass if c is not RoundClass.DISCARD)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "counts": {c.name: self.counts.get(c, 0) for c in RoundClass},
            "errors": {c.name: self.errors.get(c, 0) for c in RoundClass},
            "error_rates": {c.name: self.rate(c) for c in RoundClass if c is not RoundClass.DISCARD},
            "test_error_rate": self.test_rate,
            "detected": self.detected,
        }


@dataclass
class RunResult:
    """Outcome of one P1/P2 run (also the per-run core of a QSDC result)."""

    protocol: Protocol
    stats: RunStats
    rounds: RoundTable
    transcript: Transcript
    abort_reason: AbortReason | None = None
    final_key_alice: np.ndarray | None = None
    final_key_bob: np.ndarray | None = None
    leak: int | None = None
    security_margin: int = 0
    test_rounds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    info_rounds: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    eve_report: object = None
    trial: int = 0

    @property
    def completed(self) -> bool:
        return self.abort_reason is None

    @property
    def outcome(self) -> str:
        return "Completed" if self.completed else self.abort_reason.value

    @property
    def key_length(self) -> int | None:
        return None if self.final_key_bob is None else int(self.final_key_bob.size)

    @property
    def records(self) -> list[RoundRecord]:
        return self.rounds.records()

    def to_dict(self, dump_rounds: bool = False) -> dict:
        stats = self.stats.to_dict()
        stats["abort_reason"] = None if self.abort_reason is None else self.abort_reason.value
        stats["key_length_m"] = self.key_length
        stats["leak"] = self.leak
        out = {"protocol": self.protocol.value, "trial": self.trial, "outcome": self.outcome, "stats": stats}
        if self.completed and self.final_key_bob is not None:
            out["keys_equal"] = bool(np.array_equal(self.final_key_alice, self.final_key_bob))
        if dump_rounds:
            out["rounds"] = self.rounds.to_rows()
        return out

    def to_json(self, dump_rounds: bool = False) -> str:
        return json.dumps(self.to_dict(dump_rounds), sort_keys=True)


@dataclass(frozen=True)
class QsdcMessage:
    """Bob's transmitted string and the secrets that frame it.

    ``encoded`` is the string m, sent bit by bit on SIFT rounds.  Positions in
    ``check_positions`` carry random error-estimation bits; the rest carry the
    block-coded payload in order.  ``coding_key`` stays secret until Bob
    decides to announce the block coding.
    """

    payload: np.ndarray
    encoded: np.ndarray
    check_positions: np.ndarray
    coding_key: int

    def __post_init__(self):
        if self.encoded.size < self.payload.size:
            raise ValueError("|m| must be at least the payload length")

    @property
    def data_positions(self) -> np.ndarray:
        mask = np.ones(self.encoded.size, dtype=bool)
        mask[self.check_positions] = False
        return np.nonzero(mask)[0]


@dataclass
class QsdcResult:
    delivered: np.ndarray | None
    eve_detected: bool
    eve_payload_info: float
    withheld: bool
    run: RunResult
    message: QsdcMessage

    @property
    def delivered_ok(self) -> bool:
        return self.delivered is not None and np.array_equal(self.delivered, self.message.payload)

    def to_dict(self, dump_rounds: bool = False) -> dict:
        out = self.run.to_dict(dump_rounds)
        out.update(
            delivered=None if self.delivered is None else "".join(map(str, self.delivered.tolist())),
            delivered_ok=self.delivered_ok,
            eve_detected=self.eve_detected,
            eve_payload_info=self.eve_payload_info,
            withheld=self.withheld,
        )
        return out
