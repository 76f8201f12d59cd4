"""Protocol parties, configuration and runs."""

from .agents import Alice, Bob, MessageExhausted, bob_act, build_qsdc_message
from .config import ConfigError, Protocol, ProtocolConfig, qsdc_message_length
from .engine import Exchange, classify
from .protocols import (
    ExchangeSummary,
    qsdc_messages,
    run_protocol1,
    run_protocol2,
    run_qsdc,
    simulate,
    simulate_exchange,
)
from .records import (
    CHECK_CLASSES,
    AbortReason,
    BobAction,
    QsdcMessage,
    QsdcResult,
    RoundClass,
    RoundRecord,
    RoundTable,
    RunResult,
    RunStats,
)

__all__ = [
    "Alice",
    "Bob",
    "MessageExhausted",
    "bob_act",
    "build_qsdc_message",
    "ConfigError",
    "Protocol",
    "ProtocolConfig",
    "qsdc_message_length",
    "Exchange",
    "classify",
    "ExchangeSummary",
    "qsdc_messages",
    "run_protocol1",
    "run_protocol2",
    "run_qsdc",
    "simulate",
    "simulate_exchange",
    "CHECK_CLASSES",
    "AbortReason",
    "BobAction",
    "QsdcMessage",
    "QsdcResult",
    "RoundClass",
    "RoundRecord",
    "RoundTable",
    "RunResult",
    "RunStats",
]
