"""Simulation of semi-quantum key distribution and direct communication.

Alice is fully quantum; Bob can only reflect a qubit or swap it out and send
a fresh Z-basis qubit.  The package simulates both key protocols and the
direct-communication protocol against a set of eavesdroppers, computes exact
outcome distributions for short runs, and aggregates large seeded batches.
"""

from .adversary import AttackSpec, DescriptorError, eve_information
from .channel import IDEAL, NoiseModel, Transcript
from .harness import BatchStats, TrialBatch, run_batch, sweep, wilson_interval
from .oracle import OracleLimitExceeded, RobustnessFinding, exact_distribution, exact_eve_info, robustness_scan
from .parties import (
    AbortReason,
    ConfigError,
    Protocol,
    ProtocolConfig,
    RoundClass,
    run_protocol1,
    run_protocol2,
    run_qsdc,
    simulate,
    simulate_exchange,
)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec",
    "DescriptorError",
    "eve_information",
    "IDEAL",
    "NoiseModel",
    "Transcript",
    "BatchStats",
    "TrialBatch",
    "run_batch",
    "sweep",
    "wilson_interval",
    "OracleLimitExceeded",
    "RobustnessFinding",
    "exact_distribution",
    "exact_eve_info",
    "robustness_scan",
    "AbortReason",
    "ConfigError",
    "Protocol",
    "ProtocolConfig",
    "RoundClass",
    "run_protocol1",
    "run_protocol2",
    "run_qsdc",
    "simulate",
    "simulate_exchange",
]
