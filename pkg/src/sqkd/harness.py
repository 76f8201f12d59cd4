"""
Batch execution and aggregate statistics.

A batch of trials is cut into chunks; each chunk runs as one lockstep
exchange and folds its results into an ``Accumulator`` of integer counts.
Integer sums merge in any order to the same totals, and every trial draws
from its own counter-based streams, so the aggregate is identical for any
worker count and chunk size.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adversary import AttackSpec
from .channel import NoiseModel
from .parties import (
    Protocol,
    ProtocolConfig,
    QsdcResult,
    RoundClass,
    RunResult,
    simulate,
    simulate_exchange,
)

#: Default memory budget for one chunk's retained per-round states.
MEMORY_BUDGET = 256 * 2**20
MAX_CHUNK = 1024
_Z95 = 1.959963984540054


def wilson_interval(successes: int, total: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        return (0.0, 1.0)
    p = successes / total
    denom = 1 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass(frozen=True)
class TrialBatch:
    """Trials ``first_trial .. first_trial + trials - 1`` of one configuration."""

    config: ProtocolConfig
    attack: str = "none"
    trials: int = 1
    first_trial: int = 0
    payload: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "attack", str(AttackSpec.parse(self.attack)))
        if self.trials < 1:
            raise ValueError("a batch needs at least one trial")

    @property
    def master_seed(self) -> int:
        return self.config.seed

    def trial_ids(self) -> np.ndarray:
        return np.arange(self.first_trial, self.first_trial + self.trials, dtype=np.uint64)


def _outcome_label(key: tuple) -> str:
    return "|".join(str(int(v)) for v in key)


@dataclass
class Accumulator:
    """Integer tallies over trials.  ``merge`` is commutative and associative."""

    trials: int = 0
    counts: Counter = field(default_factory=Counter)
    errors: Counter = field(default_factory=Counter)
    test_count: int = 0
    test_errors: int = 0
    outcomes: Counter = field(default_factory=Counter)
    aborts: Counter = field(default_factory=Counter)
    detected: int = 0
    sift_sum: int = 0
    sift_sq: int = 0
    eve_correct: int = 0
    eve_total: int = 0
    key_lengths: Counter = field(default_factory=Counter)
    keys_equal: int = 0
    delivered_ok: int = 0
    withheld: int = 0
    detected_and_withheld: int = 0
    payload_info_num: int = 0
    payload_bits: int = 0
    measurements: Counter = field(default_factory=Counter)
    exchange_only: bool = False

    def merge(self, other: "Accumulator") -> "Accumulator":
        for name in ("trials", "test_count", "test_errors", "detected", "sift_sum", "sift_sq", "eve_correct",
                     "eve_total", "keys_equal", "delivered_ok", "withheld", "detected_and_withheld",
                     "payload_info_num", "payload_bits"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        for name in ("counts", "errors", "outcomes", "aborts", "key_lengths", "measurements"):
            getattr(self, name).update(getattr(other, name))
        self.exchange_only = self.exchange_only or other.exchange_only
        return self

    def _add_stats(self, counts, errors, detected: bool, key: tuple) -> None:
        self.trials += 1
        for c in RoundClass:
            self.counts[c.name] += int(counts[c])
            self.errors[c.name] += int(errors[c])
        sift = int(counts[RoundClass.SIFT_KEY])
        self.sift_sum += sift
        self.sift_sq += sift * sift
        self.detected += int(detected)
        self.outcomes[_outcome_label(key)] += 1

    def add_run(self, result: RunResult | QsdcResult) -> None:
        qsdc = isinstance(result, QsdcResult)
        run = result.run if qsdc else result
        stats = run.stats
        self._add_stats(stats.counts, stats.errors, stats.detected, stats.outcome_key())
        self.test_count += stats.test_count
        self.test_errors += stats.test_errors
        self.aborts[run.outcome] += 1
        info = np.asarray(run.info_rounds, dtype=np.intp)
        if run.eve_report is not None and info.size:
            guesses = run.eve_report.guesses()
            truth = run.rounds.fresh_bit[info]
            self.eve_correct += sum(1 for r, b in zip(info.tolist(), truth.tolist()) if guesses.get(r) == b)
            self.eve_total += int(info.size)
        if run.completed and run.final_key_bob is not None:
            self.key_lengths[str(run.key_length)] += 1
            self.keys_equal += int(np.array_equal(run.final_key_alice, run.final_key_bob))
        if qsdc:
            self.delivered_ok += int(result.delivered_ok)
            self.withheld += int(result.withheld)
            self.detected_and_withheld += int(result.withheld and result.eve_detected)
            n = result.message.payload.size
            guess = run.eve_report.payload_guess if run.eve_report is not None else None
            if guess is not None:
                correct = int(np.count_nonzero(guess == result.message.payload))
                self.payload_info_num += min(max(2 * correct - n, 0), n)
            self.payload_bits += n

    def add_exchange(self, summary) -> None:
        self.exchange_only = True
        for counts, errors, detected, key in zip(summary.counts, summary.errors, summary.detected,
                                                 summary.outcome_keys()):
            self._add_stats(counts, errors, bool(detected), key)


def _chunk_size(batch: TrialBatch, requested: int | None) -> int:
    if requested is not None:
        if requested < 1:
            raise ValueError("chunk size must be positive")
        return requested
    spec = AttackSpec.parse(batch.attack)
    retains = batch.config.protocol is Protocol.QSDC or spec.build().retains_states or batch.config.track_eve_states
    if not retains:
        return min(batch.trials, MAX_CHUNK)
    # transit + environment + up to two Eve qubits, complex128 amplitudes
    per_trial = batch.config.N * 16 * 16
    return max(1, min(batch.trials, MAX_CHUNK, MEMORY_BUDGET // per_trial))


def _chunks(batch: TrialBatch, size: int):
    start = batch.first_trial
    stop = batch.first_trial + batch.trials
    while start < stop:
        yield start, min(start + size, stop)
        start += size


def _payload(batch):
    return None if batch.payload is None else np.asarray(batch.payload, dtype=np.int8)


def _run_chunk(batch: TrialBatch, start: int, stop: int, exchange_only: bool) -> Accumulator:
    acc = Accumulator()
    trials = np.arange(start, stop, dtype=np.uint64)
    if exchange_only:
        acc.add_exchange(simulate_exchange(batch.config, batch.attack, trials))
        return acc
    results, ex = simulate(batch.config, batch.attack, trials, payload=_payload(batch), return_exchange=True)
    for r in results:
        acc.add_run(r)
    acc.measurements.update(ex.measurements)
    acc.measurements["bob"] += 0
    return acc


def accumulate(batch: TrialBatch, workers: int = 1, chunk_size: int | None = None,
               exchange_only: bool = False) -> Accumulator:
    size = _chunk_size(batch, chunk_size)
    spans = list(_chunks(batch, size))
    total = Accumulator()
    if workers <= 1 or len(spans) == 1:
        for start, stop in spans:
            total.merge(_run_chunk(batch, start, stop, exchange_only))
        return total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, batch, start, stop, exchange_only) for start, stop in spans]
        for f in futures:
            total.merge(f.result())
    return total


def run_batch(batch: TrialBatch, workers: int = 1, chunk_size: int | None = None,
              exchange_only: bool = False) -> "BatchStats":
    """Run every trial of ``batch`` and summarize.

    ``exchange_only`` skips the public discussion; class error rates and
    detection are still reported, abort and key statistics are not.
    """
    return BatchStats(batch, accumulate(batch, workers, chunk_size, exchange_only))


def collect(batch: TrialBatch, chunk_size: int | None = None) -> list:
    """Per-trial results, in trial order."""
    out = []
    for start, stop in _chunks(batch, _chunk_size(batch, chunk_size)):
        trials = np.arange(start, stop, dtype=np.uint64)
        out.extend(simulate(batch.config, batch.attack, trials, payload=_payload(batch)))
    return out


def _rate(num: int, den: int):
    return num / den if den else None


@dataclass
class BatchStats:
    batch: TrialBatch
    acc: Accumulator

    @property
    def trials(self) -> int:
        return self.acc.trials

    def error_rate(self, cls: RoundClass) -> float | None:
        """Errors pooled over all trials, divided by pooled class count."""
        return _rate(self.acc.errors[cls.name], self.acc.counts[cls.name])

    @property
    def detection_rate(self) -> float:
        return self.acc.detected / self.acc.trials

    @property
    def sift_mean(self) -> float:
        return self.acc.sift_sum / self.acc.trials

    @property
    def sift_std(self) -> float:
        t = self.acc.trials
        if t < 2:
            return 0.0
        var = (self.acc.sift_sq - self.acc.sift_sum**2 / t) / (t - 1)
        return math.sqrt(max(var, 0.0))

    def abort_rate(self, reason: str) -> float:
        return self.acc.aborts[reason] / self.acc.trials

    @property
    def completion_rate(self) -> float:
        return self.acc.aborts["Completed"] / self.acc.trials

    @property
    def completion_rate_excluding_sift_aborts(self) -> float | None:
        eligible = self.acc.trials - self.acc.aborts["TooFewSifted"]
        return _rate(self.acc.aborts["Completed"], eligible)

    @property
    def eve_accuracy(self) -> float | None:
        return _rate(self.acc.eve_correct, self.acc.eve_total)

    def outcome_distribution(self) -> dict[tuple, float]:
        """Empirical distribution of ``RunStats.outcome_key`` tuples."""
        out = {}
        for label, count in self.acc.outcomes.items():
            parts = [int(v) for v in label.split("|")]
            out[(bool(parts[0]),) + tuple(parts[1:])] = count / self.acc.trials
        return out

    def to_dict(self) -> dict:
        acc = self.acc
        cfg = self.batch.config
        classes = {}
        for c in RoundClass:
            if c is RoundClass.DISCARD:
                continue
            e, n = acc.errors[c.name], acc.counts[c.name]
            classes[c.name] = {"count": n, "errors": e, "rate": _rate(e, n), "wilson95": list(wilson_interval(e, n))}
        out = {
            "protocol": cfg.protocol.value,
            "attack": self.batch.attack,
            "config": cfg.to_dict(),
            "trials": acc.trials,
            "first_trial": self.batch.first_trial,
            "exchange_only": acc.exchange_only,
            "error_rates": classes,
            "detection_rate": self.detection_rate,
            "detection_wilson95": list(wilson_interval(acc.detected, acc.trials)),
            "sift_key_mean": self.sift_mean,
            "sift_key_std": self.sift_std,
        }
        if not acc.exchange_only:
            out.update(
                abort_histogram=dict(sorted(acc.aborts.items())),
                completion_rate=self.completion_rate,
                completion_rate_excluding_sift_aborts=self.completion_rate_excluding_sift_aborts,
                test_error_rate=_rate(acc.test_errors, acc.test_count),
                eve_accuracy=self.eve_accuracy,
                eve_guessed_bits=acc.eve_total,
                key_length_histogram=dict(sorted(acc.key_lengths.items(), key=lambda kv: int(kv[0]))),
                keys_equal=acc.keys_equal,
                measurements=dict(sorted(acc.measurements.items())),
            )
            if cfg.protocol is Protocol.QSDC:
                out.update(
                    delivered_ok=acc.delivered_ok,
                    withheld=acc.withheld,
                    detected_and_withheld=acc.detected_and_withheld,
                    eve_payload_info_mean=_rate(acc.payload_info_num, acc.payload_bits),
                )
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Parameter sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("noise", "theta", "threshold")
SWEEP_COLUMNS = (
    "axis", "value", "trials", "detection_rate", "completion_rate",
    "sift_key_error", "z_ctrl_error", "x_ctrl_error", "ctrl_x_error", "eve_accuracy",
)


def _point(axis: str, value: float, base: ProtocolConfig, attack: str) -> tuple[ProtocolConfig, str]:
    if axis == "noise":
        kind = base.noise.kind if base.noise.kind != "ideal" else "bitflip"
        noise = NoiseModel(kind, float(value)) if value > 0 else NoiseModel()
        return base.replace(noise=noise), attack
    if axis == "theta":
        return base, str(AttackSpec.parse(attack).with_theta(float(value)))
    if axis == "threshold":
        return base.replace(p_ctrl_threshold=float(value), p_test_threshold=float(value)), attack
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep(axis: str, values, base: ProtocolConfig, attack: str = "none", trials: int = 100,
          workers: int = 1, chunk_size: int | None = None) -> list[dict]:
    """One row of summary statistics per value of ``axis``."""
    rows = []
    for value in values:
        cfg, att = _point(axis, value, base, attack)
        stats = run_batch(TrialBatch(cfg, att, trials), workers, chunk_size)
        rows.append(
            {
                "axis": axis,
                "value": float(value),
                "trials": stats.trials,
                "detection_rate": stats.detection_rate,
                "completion_rate": stats.completion_rate,
                "sift_key_error": stats.error_rate(RoundClass.SIFT_KEY),
                "z_ctrl_error": stats.error_rate(RoundClass.Z_CTRL),
                "x_ctrl_error": stats.error_rate(RoundClass.X_CTRL),
                "ctrl_x_error": stats.error_rate(RoundClass.CTRL_X),
                "eve_accuracy": stats.eve_accuracy,
            }
        )
    return rows


def rows_to_csv(rows: list[dict], columns=None) -> str:
    """CSV text with a header row; ``None`` becomes an empty cell, floats use repr."""
    columns = list(columns or (rows[0].keys() if rows else ()))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                         for c in columns])
    return buf.getvalue()
