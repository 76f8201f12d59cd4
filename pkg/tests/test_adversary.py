"""Attack descriptors, probe unitaries and what each strategy learns."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqkd.adversary import (
    PHASE,
    AttackSpec,
    DescriptorError,
    EntangleProbe,
    EveReport,
    InterceptResend,
    NoEve,
    QsdcMitm,
    eve_information,
    helstrom_success,
    parse_angle,
    phase_probe,
    public_sift_key_rounds,
    rotation_probe,
)
from sqkd.channel import ClassicalMessage, MessageKind, Sender, Transcript, broadcast
from sqkd.parties import ProtocolConfig, RoundClass, run_protocol1, simulate
from sqkd.qcore import Basis, DensityMatrix, StateVector, apply_unitary, partial_trace, prepare, tensor


class TestDescriptors:
    @pytest.mark.parametrize(
        "text, value",
        [("0.3", 0.3), ("pi", math.pi), ("pi/4", math.pi / 4), ("3pi/8", 3 * math.pi / 8), ("3*pi/8", 3 * math.pi / 8),
         ("π/2", math.pi / 2), ("-pi/4", -math.pi / 4)],
    )
    def test_angles(self, text, value):
        assert parse_angle(text) == pytest.approx(value)

    @pytest.mark.parametrize(
        "text, kind, legs",
        [("none", "none", ()), ("IR:Z:RET", "ir", ("ret",)), ("ir:x:both", "ir", ("fwd", "ret")),
         ("probe:pi/4:fwd", "probe", ("fwd",)), ("mitm", "mitm", ("ret",))],
    )
    def test_parse(self, text, kind, legs):
        spec = AttackSpec.parse(text)
        assert spec.kind == kind and spec.legs == legs
        assert AttackSpec.parse(str(spec)) == spec

    def test_phase_family(self):
        spec = AttackSpec.parse("probe:0.5:ret:phase")
        assert spec.family == PHASE and str(spec) == "probe:0.5:ret:phase"

    @pytest.mark.parametrize(
        "bad", ["", "ir:y:ret", "ir:z", "ir:z:sideways", "probe:2:ret", "probe:pi/4:both", "probe:x:ret",
                "probe:0.1:ret:wobble", "probe:pi/0:ret", "probe:pi/e:ret", "mitm:now", "none:1"],
    )
    def test_rejects(self, bad):
        with pytest.raises(DescriptorError):
            AttackSpec.parse(bad)

    @pytest.mark.parametrize(
        "text, cls", [("none", NoEve), ("ir:z:ret", InterceptResend), ("probe:0.1:ret", EntangleProbe), ("mitm", QsdcMitm)]
    )
    def test_build(self, text, cls):
        assert isinstance(AttackSpec.parse(text).build(), cls)

    def test_with_theta(self):
        assert AttackSpec.parse("probe:0:ret").with_theta(0.25).theta == 0.25
        with pytest.raises(DescriptorError):
            AttackSpec.parse("none").with_theta(0.1)


class TestProbeUnitaries:
    @given(st.floats(-math.pi / 2, math.pi / 2))
    def test_unitary(self, theta):
        for u in (rotation_probe(theta), phase_probe(theta)):
            np.testing.assert_allclose(u @ u.conj().T, np.eye(4), atol=1e-12)

    @given(st.floats(-math.pi / 2, math.pi / 2))
    def test_conditional_states_distance(self, theta):
        for family in ("rot", "phase"):
            probe = AttackSpec.parse(f"probe:{theta!r}:ret:{family}").build()
            rho0, rho1 = probe.conditional_states()
            diff = np.linalg.eigvalsh(rho0 - rho1)
            assert 0.5 * np.abs(diff).sum() == pytest.approx(abs(math.sin(theta)), abs=1e-9)

    def test_rotation_action(self):
        theta = 0.3
        u = rotation_probe(theta)
        out = apply_unitary(tensor(prepare(Basis.Z, 1), prepare(Basis.Z, 0)), u, [0, 1])
        expected = tensor(prepare(Basis.Z, 1), StateVector(np.array([math.cos(theta), math.sin(theta)])))
        assert out.allclose(expected)
        zero = tensor(prepare(Basis.Z, 0), prepare(Basis.Z, 0))
        assert apply_unitary(zero, u, [0, 1]).allclose(zero)

    def test_helstrom_success(self):
        assert helstrom_success(prepare(Basis.Z, 0).density(), prepare(Basis.Z, 1).density()) == pytest.approx(1.0)
        assert helstrom_success(prepare(Basis.Z, 0).density(), prepare(Basis.X, 0).density()) == pytest.approx(
            0.5 + 0.5 / math.sqrt(2)
        )


class TestPublicRecord:
    def test_key_protocols(self):
        t = broadcast(ClassicalMessage(Sender.BOB, MessageKind.SIFT_ANNOUNCEMENT, [0, 2, 3]), Transcript())
        t = broadcast(ClassicalMessage(Sender.ALICE, MessageKind.BASIS_ANNOUNCEMENT, "ZXXZ"), t)
        assert public_sift_key_rounds(t).tolist() == [0, 3]

    def test_qsdc(self):
        t = broadcast(ClassicalMessage(Sender.BOB, MessageKind.QSDC_SIFT_POSITIONS, [1, 4]), Transcript())
        assert public_sift_key_rounds(t).tolist() == [1, 4]

    def test_empty(self):
        assert public_sift_key_rounds(Transcript()).size == 0


def completed_info(results):
    return [r for r in results if r.info_rounds.size]


class TestInterceptResend:
    def test_z_return_reads_sift_bits(self):
        cfg = ProtocolConfig(n=8, p_ctrl_threshold=1.0, seed=2)
        results = completed_info(simulate(cfg, "ir:z:ret", range(20)))
        assert results
        for r in results:
            assert r.stats.errors.get(RoundClass.Z_CTRL, 0) == 0
            assert eve_information(r.eve_report, r).sift_accuracy == 1.0

    def test_forward_only_guesses_blind(self):
        r = run_protocol1(ProtocolConfig(n=8, p_ctrl_threshold=1.0), "ir:z:fwd")
        assert {c for _, _, c in r.eve_report.sift_bit_guesses} == {0.5}

    def test_both_legs_measure_twice(self):
        _, ex = simulate(ProtocolConfig(n=4), "ir:x:both", range(3), return_exchange=True)
        assert ex.measurements["eve"] == 2 * 3 * ex.n_rounds


class TestProbe:
    THETA = math.pi / 4

    def test_accuracy_near_helstrom(self):
        cfg = ProtocolConfig(n=8, p_ctrl_threshold=1.0, p_test_threshold=1.0, seed=3)
        results = completed_info(simulate(cfg, f"probe:{self.THETA}:ret", range(120)))
        info = [eve_information(r.eve_report, r) for r in results]
        hits = sum(i.sift_accuracy * r.info_rounds.size for i, r in zip(info, results))
        total = sum(r.info_rounds.size for r in results)
        bound = 0.5 + 0.5 * math.sin(self.THETA)
        assert abs(hits / total - bound) < 4 * math.sqrt(bound * (1 - bound) / total)

    def test_tracked_states_give_bound(self):
        cfg = ProtocolConfig(n=8, p_ctrl_threshold=1.0, p_test_threshold=1.0, track_eve_states=True)
        r = run_protocol1(cfg, f"probe:{self.THETA}:ret")
        assert r.eve_report.ancilla_states
        info = eve_information(r.eve_report, r)
        assert info.helstrom_bound == pytest.approx(0.5 + 0.5 * math.sin(self.THETA))

    def test_zero_angle_learns_nothing(self):
        r = run_protocol1(ProtocolConfig(n=8, p_ctrl_threshold=1.0), "probe:0:ret")
        assert {c for _, _, c in r.eve_report.sift_bit_guesses} == {0.5}
        assert r.stats.errors.get(RoundClass.X_CTRL, 0) == 0

    def test_no_info_rounds(self):
        r = run_protocol1(ProtocolConfig(n=8, bob_sift_prob=0.0))
        with pytest.raises(ValueError):
            eve_information(EveReport(), r)


class TestMitm:
    def test_checks_catch_forgeries(self):
        results = simulate(ProtocolConfig("qsdc", n=8, seed=4), "mitm", range(40))
        for res in results:
            assert res.eve_detected and res.withheld and res.eve_payload_info == 0.0

    def test_stored_bits_match_bob(self):
        res = simulate(ProtocolConfig("qsdc", n=8, seed=4, checks_enabled=False), "mitm", [0])[0]
        guesses = res.run.eve_report.guesses()
        sift = res.run.info_rounds
        assert [guesses[int(r)] for r in sift] == res.run.rounds.fresh_bit[sift].tolist()
        np.testing.assert_array_equal(res.run.eve_report.payload_guess, res.message.payload)


def test_reduced_state_helper_consistency():
    # Eve's ancilla after probing |1> with the phase family equals (|0> + e^{2it}|1>)/sqrt2.
    theta = 0.4
    psi = tensor(prepare(Basis.Z, 1), prepare(Basis.X, 0))
    out = apply_unitary(psi, phase_probe(theta), [0, 1])
    ket = np.array([1, np.exp(2j * theta)]) / math.sqrt(2)
    assert partial_trace(out, [1]).allclose(DensityMatrix(np.outer(ket, ket.conj())))
