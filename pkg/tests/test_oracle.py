"""Exact branch enumeration: closed forms, internal consistency, guards."""

import inspect
import math
from collections import defaultdict

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqkd import oracle
from sqkd.channel import EVE_FIRST, NOISE_FIRST, NoiseModel
from sqkd.oracle import (
    CTRL_X,
    MAX_ORACLE_ROUNDS,
    SIFT_KEY,
    X_CTRL,
    Z_CTRL,
    OracleLimitExceeded,
    RobustnessFinding,
    exact_distribution,
    exact_eve_info,
    from_config,
    robustness_scan,
)
from sqkd.parties import ProtocolConfig

ATTACKS = ["none", "ir:z:ret", "ir:x:fwd", "ir:z:both", "probe:pi/4:ret", "probe:0.3:fwd", "probe:1.1:ret:phase", "mitm"]
PROTOCOLS = ["p1", "p2", "qsdc"]


def brute_outcomes(dist):
    out = defaultdict(float)
    checked = {"p1": (Z_CTRL, X_CTRL), "p2": (CTRL_X,), "qsdc": (Z_CTRL, X_CTRL)}[dist.protocol.value]
    for p, combo in dist.atoms():
        counts = tuple(sum(a.error for a in combo if a.cls == c) for c in (SIFT_KEY, Z_CTRL, X_CTRL, CTRL_X))
        detected = any(a.error for a in combo if a.cls in checked)
        out[(detected,) + counts] += p
    return dict(out)


class TestRoundAtoms:
    def test_p1_no_eve_atom_count(self):
        # 4 preparations; CTRL is deterministic, SIFT adds the fresh bit and,
        # for X preparations, a random outcome.
        assert len(exact_distribution("p1", "none").round_atoms) == 16

    @pytest.mark.parametrize("protocol", PROTOCOLS)
    @pytest.mark.parametrize("attack", ATTACKS)
    def test_weights_sum_to_one(self, protocol, attack):
        atoms = exact_distribution(protocol, attack).round_atoms
        assert sum(a.weight for a in atoms) == pytest.approx(1.0, abs=1e-12)
        assert all(a.weight > 0 for a in atoms)

    @pytest.mark.parametrize("protocol", PROTOCOLS)
    def test_no_eve_no_errors(self, protocol):
        assert all(a.error == 0 for a in exact_distribution(protocol, "none").round_atoms)

    def test_class_masses(self):
        d = exact_distribution("p1", "none")
        assert d.class_probability(SIFT_KEY) == pytest.approx(0.25)
        assert d.class_probability(Z_CTRL) == pytest.approx(0.25)
        p2 = exact_distribution("p2", "none")
        assert p2.class_probability(CTRL_X) == pytest.approx(0.25)


class TestClosedForms:
    def test_ir_z_return(self):
        d = exact_distribution("p1", "ir:z:ret")
        assert d.error_probability(X_CTRL) == pytest.approx(0.5, abs=1e-12)
        assert d.error_probability(Z_CTRL) == 0.0
        assert d.error_probability(SIFT_KEY) == 0.0

    def test_p2_ir(self):
        assert exact_distribution("p2", "ir:z:ret").error_probability(CTRL_X) == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(0, math.pi / 2))
    def test_probe_x_ctrl_disturbance(self, theta):
        d = exact_distribution("p1", f"probe:{theta!r}:ret")
        assert d.error_probability(X_CTRL) == pytest.approx((1 - math.cos(theta)) / 2, abs=1e-12)
        assert d.error_probability(Z_CTRL) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(0, math.pi / 2))
    def test_probe_information(self, theta):
        for family in ("rot", "phase"):
            d = exact_distribution("p1", f"probe:{theta!r}:ret:{family}")
            assert exact_eve_info(d) == pytest.approx(abs(math.sin(theta)) / 2, abs=1e-9)

    def test_information_extremes(self):
        assert exact_eve_info(exact_distribution("p1", "none")) == 0.0
        assert exact_eve_info(exact_distribution("p1", "ir:z:ret")) == pytest.approx(0.5)
        assert exact_eve_info(exact_distribution("qsdc", "mitm")) == pytest.approx(0.5)

    def test_probe_detection_four_rounds(self):
        for protocol in ("p1", "p2"):
            d = exact_distribution(protocol, "probe:pi/2:ret", 4)
            assert d.detection_probability() == pytest.approx(1 - (1 - 0.125) ** 4, abs=1e-12)

    def test_qsdc_mitm_two_rounds(self):
        # Each round is a CTRL round with probability 1/2 and then errs with probability 1/2.
        assert exact_distribution("qsdc", "mitm", 2).detection_probability() == pytest.approx(7 / 16)

    @pytest.mark.parametrize("p", [0.0, 0.05, 0.3])
    def test_bitflip_on_z_ctrl(self, p):
        # Two legs: an error needs exactly one flip.
        d = exact_distribution("p1", "none", noise=NoiseModel("bitflip", p))
        assert d.error_probability(Z_CTRL) == pytest.approx(2 * p * (1 - p), abs=1e-12)

    def test_noise_order_matters_for_probe(self):
        noise = NoiseModel("depolarizing", 0.2)
        a = exact_distribution("p1", "probe:0.7:ret:phase", noise=noise, noise_order=NOISE_FIRST)
        b = exact_distribution("p1", "probe:0.7:ret:phase", noise=noise, noise_order=EVE_FIRST)
        assert exact_eve_info(a) != pytest.approx(exact_eve_info(b))


class TestDistributions:
    @pytest.mark.parametrize("protocol", PROTOCOLS)
    @pytest.mark.parametrize("attack", ["none", "ir:z:ret", "probe:pi/4:ret", "mitm"])
    @pytest.mark.parametrize("n", [1, 2])
    def test_convolution_matches_enumeration(self, protocol, attack, n):
        d = exact_distribution(protocol, attack, n)
        fast = d.outcome_distribution()
        slow = brute_outcomes(d)
        assert set(fast) == set(slow)
        for key, p in slow.items():
            assert fast[key] == pytest.approx(p, abs=1e-12)

    def test_outcome_mass(self):
        dist = exact_distribution("p1", "probe:0.9:ret", MAX_ORACLE_ROUNDS).outcome_distribution()
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)

    def test_from_config(self):
        d = from_config(ProtocolConfig("p2", num_rounds=3, noise=NoiseModel("bitflip", 0.1)), "ir:z:ret")
        assert d.n_rounds == 3 and d.protocol.value == "p2"


class TestGuards:
    @pytest.mark.parametrize("n", [0, MAX_ORACLE_ROUNDS + 1])
    def test_round_limit(self, n):
        with pytest.raises(OracleLimitExceeded):
            exact_distribution("p1", "none", n)

    def test_enumeration_limit(self):
        d = exact_distribution("p1", "probe:0.5:ret", MAX_ORACLE_ROUNDS)
        assert d.total_atoms() > oracle.MAX_ENUMERATED_ATOMS
        with pytest.raises(OracleLimitExceeded):
            next(d.atoms())

    def test_independent_of_simulator_state_code(self):
        source = inspect.getsource(oracle)
        assert "qcore" not in source and "StateBatch" not in source


class TestRobustnessScan:
    @pytest.mark.parametrize("protocol", ["p1", "p2"])
    @pytest.mark.parametrize("family", ["rot", "phase"])
    def test_information_implies_disturbance(self, protocol, family):
        rows = robustness_scan(protocol, family)
        assert len(rows) == 21
        for row in rows:
            assert row["info"] == pytest.approx(abs(math.sin(row["theta"])) / 2, abs=1e-9)
            if row["info"] > 1e-9:
                assert row["disturbance"] > 1e-9

    def test_finding_raised(self, monkeypatch):
        monkeypatch.setattr(oracle.ExactDistribution, "detection_probability", lambda self: 0.0)
        with pytest.raises(RobustnessFinding) as info:
            robustness_scan("p1", grid=[0.0, 0.5])
        assert [r["theta"] for r in info.value.rows] == [0.5]
        rows = robustness_scan("p1", grid=[0.0, 0.5], raise_on_finding=False)
        assert len(rows) == 2
