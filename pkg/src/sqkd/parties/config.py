"""Run configuration."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction

from ..channel import IDEAL, NOISE_FIRST, EVE_FIRST, NoiseModel
from ..postproc import EccScheme, codeword_length
from ..rng import check_seed


class ConfigError(ValueError):
    """Invalid configuration; reported before any trial runs."""


class Protocol(str, enum.Enum):
    P1 = "p1"
    P2 = "p2"
    QSDC = "qsdc"

    @classmethod
    def parse(cls, text: str) -> "Protocol":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown protocol {text!r}") from None


def _exact(x: float) -> Fraction:
    # Decimal literal semantics: 0.1 means one tenth, not its binary neighbour.
    return Fraction(repr(float(x)))


@functools.lru_cache(maxsize=256)
def qsdc_message_length(n: int, check_fraction: float) -> tuple[int, int]:
    """``(|m|, check bits)`` for an ``n``-bit payload.

    The code part is the 7/4 Hamming expansion of the payload; check bits make
    up ``check_fraction`` of the whole string, rounded up.
    """
    code = codeword_length(n)
    frac = _exact(check_fraction)
    total = math.ceil(Fraction(code) / (1 - frac))
    return total, total - code


@dataclass(frozen=True)
class ProtocolConfig:
    """Parameters of one protocol run.

    ``n`` is the INFO length for P1/P2 and the payload length for QSDC.
    ``p_ctrl_threshold`` doubles as P2's single CTRL-X threshold.
    ``num_rounds`` overrides the derived round count; it exists for
    oracle-scale runs with a handful of rounds.
    """

    protocol: Protocol = Protocol.P1
    n: int = 16
    delta: float = 0.25
    p_ctrl_threshold: float = 0.1
    p_test_threshold: float = 0.1
    bob_sift_prob: float = 0.5
    noise: NoiseModel = IDEAL
    seed: int = 0
    security_margin_s: int = 32
    verify_checks: int = 50
    num_rounds: int | None = None
    noise_order: str = NOISE_FIRST
    qsdc_check_fraction: float = 0.25
    checks_enabled: bool = True
    track_eve_states: bool = False

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.n < 1:
            raise ConfigError("n must be a positive integer")
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        for name in ("p_ctrl_threshold", "p_test_threshold", "bob_sift_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.qsdc_check_fraction < 1.0:
            raise ConfigError("qsdc_check_fraction must lie in [0, 1)")
        if self.security_margin_s < 0:
            raise ConfigError("security_margin_s must be non-negative")
        if self.verify_checks < 0:
            raise ConfigError("verify_checks must be non-negative")
        if self.num_rounds is not None and self.num_rounds < 1:
            raise ConfigError("num_rounds must be positive")
        if self.noise_order not in (NOISE_FIRST, EVE_FIRST):
            raise ConfigError(f"unknown noise order {self.noise_order!r}")
        if not isinstance(self.noise, NoiseModel):
            raise ConfigError("noise must be a NoiseModel")
        try:
            check_seed(self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def message_length(self) -> int:
        """``|m|`` for QSDC: payload code bits plus error-estimation bits."""
        return qsdc_message_length(self.n, self.qsdc_check_fraction)[0]

    @property
    def N(self) -> int:
        """Number of qubits (rounds) Alice sends."""
        if self.num_rounds is not None:
            return self.num_rounds
        factor = 1 + _exact(self.delta)
        if self.protocol is Protocol.QSDC:
            return math.ceil(2 * self.message_length * factor)
        return math.ceil(8 * self.n * factor)

    @property
    def ecc(self) -> EccScheme:
        return EccScheme(verify_checks=self.verify_checks)

    def replace(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"] = self.protocol.value
        d["noise"] = str(self.noise)
        d["N"] = self.N
        return d
