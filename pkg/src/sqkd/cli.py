"""
Command-line entry point ``sqkd``.

Subcommands: ``run``, ``sweep``, ``oracle`` and ``qsdc-demo``.  Any run
option may also come from a JSON file given with ``--config`` (keys use the
long option names with dashes or underscores); options on the command line
win.

Exit codes: 0 success, 2 configuration error, 3 robustness finding,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .adversary import AttackSpec, DescriptorError, parse_angle
from .channel import LockstepViolation, NoiseModel
from .harness import SWEEP_AXES, SWEEP_COLUMNS, TrialBatch, rows_to_csv, run_batch, sweep
from .oracle import OracleLimitExceeded, exact_distribution, exact_eve_info, robustness_scan
from .parties import ConfigError, Protocol, ProtocolConfig, RoundClass, simulate
from .qcore import NotUnitaryError, QubitCapExceeded

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FINDING = 3
EXIT_INVARIANT = 4


class InvariantViolation(RuntimeError):
    """A result broke a property that must hold on every run."""


# Option name -> ProtocolConfig field.
_CONFIG_FIELDS = {
    "protocol": "protocol",
    "n": "n",
    "delta": "delta",
    "p_ctrl": "p_ctrl_threshold",
    "p_test": "p_test_threshold",
    "bob_sift_prob": "bob_sift_prob",
    "noise": "noise",
    "noise_order": "noise_order",
    "seed": "seed",
    "security_margin": "security_margin_s",
    "verify_checks": "verify_checks",
    "num_rounds": "num_rounds",
    "qsdc_check_fraction": "qsdc_check_fraction",
}


def _config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values; command-line flags win")
    p.add_argument("--protocol", choices=[x.value for x in Protocol])
    p.add_argument("--n", type=int, help="INFO length (P1/P2) or payload bits (QSDC)")
    p.add_argument("--delta", type=float)
    p.add_argument("--p-ctrl", type=float, help="CTRL error threshold (also P2's CTRL-X threshold)")
    p.add_argument("--p-test", type=float, help="TEST / QSDC estimation threshold")
    p.add_argument("--bob-sift-prob", type=float)
    p.add_argument("--noise", help="ideal | bitflip:P | depol:P")
    p.add_argument("--noise-order", choices=["noise_first", "eve_first"])
    p.add_argument("--seed", type=int, help="master seed in [0, 2**64)")
    p.add_argument("--security-margin", type=int)
    p.add_argument("--verify-checks", type=int)
    p.add_argument("--num-rounds", type=int, help="override the derived round count N")
    p.add_argument("--qsdc-check-fraction", type=float)
    p.add_argument("--disable-ctrl-check", action="store_true", default=None,
                   help="QSDC without the CTRL check or withholding (the naive variant)")
    p.add_argument("--attack", help="none | ir:<z|x>:<fwd|ret|both> | probe:<theta>:<fwd|ret>[:phase] | mitm")


def _batch_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trials", type=int)
    p.add_argument("--first-trial", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--chunk-size", type=int)


def _merged(args: argparse.Namespace) -> dict:
    """Command-line values layered over the ``--config`` file."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    values.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    return values


def _build_config(values: dict, **defaults) -> ProtocolConfig:
    kwargs = dict(defaults)
    for option, fieldname in _CONFIG_FIELDS.items():
        if option in values:
            kwargs[fieldname] = values[option]
    if "protocol" in kwargs and not isinstance(kwargs["protocol"], Protocol):
        kwargs["protocol"] = Protocol.parse(str(kwargs["protocol"]))
    if "noise" in kwargs and not isinstance(kwargs["noise"], NoiseModel):
        try:
            kwargs["noise"] = NoiseModel.parse(str(kwargs["noise"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if values.get("disable_ctrl_check"):
        kwargs["checks_enabled"] = False
    try:
        return ProtocolConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _attack(values: dict) -> str:
    try:
        return str(AttackSpec.parse(values.get("attack", "none")))
    except DescriptorError as exc:
        raise ConfigError(str(exc)) from None


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _check_run(result) -> None:
    run = getattr(result, "run", result)
    if run.completed and run.final_key_bob is not None:
        if not np.array_equal(run.final_key_alice, run.final_key_bob):
            raise InvariantViolation(f"trial {run.trial}: completed with unequal keys")
        if run.key_length + run.leak + run.security_margin != run.stats.n:
            raise InvariantViolation(f"trial {run.trial}: leak accounting does not add up")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    values = _merged(args)
    cfg = _build_config(values)
    attack = _attack(values)
    trials = int(values.get("trials", 1))
    first = int(values.get("first_trial", 0))
    if trials == 1:
        results, ex = simulate(cfg, attack, [first], return_exchange=True)
        if ex.measurements["bob"]:
            raise InvariantViolation("Bob performed a measurement")
        result = results[0]
        _check_run(result)
        text = json.dumps(result.to_dict(bool(values.get("dump_rounds"))), sort_keys=True, indent=2) + "\n"
        if values.get("transcript"):
            with open(values["transcript"], "w") as fh:
                fh.write(getattr(result, "run", result).transcript.to_jsonl())
    else:
        batch = TrialBatch(cfg, attack, trials, first)
        stats = run_batch(batch, int(values.get("workers", 1)), values.get("chunk_size"),
                          bool(values.get("exchange_only")))
        if stats.acc.measurements["bob"]:
            raise InvariantViolation("Bob performed a measurement")
        text = stats.to_json()
    _emit(text, values.get("out"))
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    try:
        return [parse_angle(v) for v in text.split(",") if v.strip()]
    except DescriptorError as exc:
        raise ConfigError(str(exc)) from None


def cmd_sweep(args) -> int:
    values = _merged(args)
    cfg = _build_config(values)
    attack = _attack(values)
    if values.get("axis") == "theta" and AttackSpec.parse(attack).kind != "probe":
        raise ConfigError("a theta sweep needs a probe attack")
    rows = sweep(values["axis"], _parse_values(values["values"]), cfg, attack, int(values.get("trials", 100)),
                 int(values.get("workers", 1)), values.get("chunk_size"))
    _emit(rows_to_csv(rows, SWEEP_COLUMNS), values.get("out"))
    return EXIT_OK


def _parse_scan(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 4 or parts[0] != "theta":
        raise ConfigError("--scan takes theta:START:STOP:STEPS")
    try:
        start, stop, steps = parse_angle(parts[1]), parse_angle(parts[2]), int(parts[3])
    except (DescriptorError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if steps < 1:
        raise ConfigError("scan needs at least one step")
    return np.linspace(start, stop, steps)


def _outcome_label(key: tuple) -> str:
    return "detected=%d sift=%d z_ctrl=%d x_ctrl=%d ctrl_x=%d" % tuple(int(v) for v in key)


def cmd_oracle(args) -> int:
    values = _merged(args)
    protocol = Protocol.parse(values.get("protocol", "p1"))
    n_rounds = int(values.get("N", 1))
    if values.get("scan"):
        grid = _parse_scan(values["scan"])
        family = values.get("family", "rot")
        rows = robustness_scan(protocol, family, grid, n_rounds, raise_on_finding=False)
        _emit(rows_to_csv(rows, ["theta", "info", "disturbance", "atoms", "protocol", "family"]), values.get("out"))
        bad = [r for r in rows if r["info"] > 1e-9 and r["disturbance"] <= 1e-9]
        if bad:
            sys.stderr.write(f"FINDING: {len(bad)} angle(s) give information without disturbance\n")
            return EXIT_FINDING
        return EXIT_OK

    cfg = _build_config(values, protocol=protocol)
    attack = _attack(values)
    dist = exact_distribution(protocol, attack, n_rounds, cfg.noise, cfg.noise_order, cfg.bob_sift_prob)
    per_class = {}
    for c in RoundClass:
        mass = dist.class_probability(int(c))
        per_class[c.name] = {"probability": mass, "error_probability": dist.error_probability(int(c)) if mass else None}
    try:
        info = exact_eve_info(dist)
    except ValueError:
        info = None
    outcomes = sorted(dist.outcome_distribution().items())
    summary = {
        "protocol": protocol.value,
        "attack": attack,
        "N": n_rounds,
        "round_atoms": len(dist.round_atoms),
        "atoms": dist.total_atoms(),
        "detection_probability": dist.detection_probability(),
        "eve_info": info,
        "classes": per_class,
        "outcomes": [{"outcome": _outcome_label(k), "probability": p} for k, p in outcomes],
    }
    out = values.get("out")
    if out and out.endswith(".csv"):
        rows = [{"outcome": _outcome_label(k), "probability": p} for k, p in outcomes]
        _emit(rows_to_csv(rows, ["outcome", "probability"]), out)
    else:
        _emit(json.dumps(summary, sort_keys=True, indent=2) + "\n", out)
    return EXIT_OK


def hex_to_bits(text: str) -> np.ndarray:
    text = text.strip().lower().removeprefix("0x")
    if not text or any(ch not in "0123456789abcdef" for ch in text):
        raise ConfigError(f"not a hex string: {text!r}")
    return np.array([int(b) for ch in text for b in format(int(ch, 16), "04b")], dtype=np.int8)


def bits_to_hex(bits) -> str:
    bits = [int(b) for b in bits]
    return "".join(format(int("".join(map(str, bits[i : i + 4])), 2), "x") for i in range(0, len(bits), 4))


def cmd_qsdc_demo(args) -> int:
    values = _merged(args)
    payload = hex_to_bits(values["message"])
    values.setdefault("delta", 1.0)
    values["protocol"] = "qsdc"
    values["n"] = int(payload.size)
    cfg = _build_config(values)
    attack = _attack(values)
    if AttackSpec.parse(attack).kind not in ("none", "mitm"):
        raise ConfigError("qsdc-demo takes --attack none or mitm")
    results, ex = simulate(cfg, attack, [int(values.get("first_trial", 0))], payload=payload, return_exchange=True)
    if ex.measurements["bob"]:
        raise InvariantViolation("Bob performed a measurement")
    res = results[0]
    guess = res.run.eve_report.payload_guess
    report = {
        "message": values["message"],
        "N": cfg.N,
        "message_length": cfg.message_length,
        "checks_enabled": cfg.checks_enabled,
        "attack": attack,
        "outcome": res.run.outcome,
        "delivered": None if res.delivered is None else bits_to_hex(res.delivered),
        "delivered_ok": res.delivered_ok,
        "eve_detected": res.eve_detected,
        "block_coding_withheld": res.withheld,
        "eve_payload_guess": None if guess is None else bits_to_hex(guess),
        "eve_payload_info": res.eve_payload_info,
        "transcript": [json.loads(line) for line in res.run.transcript.to_jsonl().splitlines()],
    }
    _emit(json.dumps(report, sort_keys=True, indent=2) + "\n", values.get("out"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqkd", description="Simulate semi-quantum key distribution and direct communication.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one trial or a batch")
    _config_options(p)
    _batch_options(p)
    p.add_argument("--dump-rounds", action="store_true", default=None, help="include per-round records (single trial)")
    p.add_argument("--transcript", help="write the public transcript as JSON lines (single trial)")
    p.add_argument("--exchange-only", action="store_true", default=None,
                   help="batch: stop after the quantum exchange (class error statistics only)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="batch statistics along one parameter")
    _config_options(p)
    _batch_options(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated list, e.g. 0,0.02,0.05 or 0,pi/8,pi/4")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact outcome distribution for a short run")
    p.add_argument("--config")
    p.add_argument("--protocol", choices=[x.value for x in Protocol])
    p.add_argument("--N", type=int, help="rounds (at most 6)")
    p.add_argument("--attack")
    p.add_argument("--noise")
    p.add_argument("--noise-order", choices=["noise_first", "eve_first"])
    p.add_argument("--bob-sift-prob", type=float)
    p.add_argument("--scan", help="theta:START:STOP:STEPS, e.g. theta:0:pi/2:21")
    p.add_argument("--family", choices=["rot", "phase"])
    p.add_argument("--out", help="FILE.csv or FILE.json")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("qsdc-demo", help="send one hex message by direct communication")
    p.add_argument("--config")
    p.add_argument("--message", required=True, help="hex string")
    p.add_argument("--attack", choices=["none", "mitm"])
    p.add_argument("--disable-ctrl-check", action="store_true", default=None)
    p.add_argument("--delta", type=float, help="round overhead (default 1.0 here)")
    p.add_argument("--seed", type=int)
    p.add_argument("--first-trial", type=int)
    p.add_argument("--p-ctrl", type=float)
    p.add_argument("--p-test", type=float)
    p.add_argument("--noise")
    p.add_argument("--out")
    p.set_defaults(func=cmd_qsdc_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DescriptorError, OracleLimitExceeded) as exc:
        sys.stderr.write(f"sqkd: configuration error: {exc}\n")
        return EXIT_CONFIG
    except (InvariantViolation, LockstepViolation, NotUnitaryError, QubitCapExceeded) as exc:
        sys.stderr.write(f"sqkd: invariant violation: {exc}\n")
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
